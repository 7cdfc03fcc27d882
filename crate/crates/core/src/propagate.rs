//! Propagation of regularity along Γ = Σ_i ∂_{u_i}F(x, f, Xf) X_i for
//! manufactured solutions of F(x, f, Xf) = 0.

use std::f64::consts::PI;

use nalgebra::{DVector, SVD};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::paralin::{slot_values, theorem_dimension, MultiNonlinearity, Slot};
use crate::paraproduct::{pi_twisted, sub, ParaproductConfig};
use crate::scene::{Scene, SceneKind};
use crate::sobolev::lp_norm;
use crate::speccalc::{eigendecompose, power, SpectralData};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "recipe", rename_all = "snake_case")]
pub enum Recipe {
    /// X f = g on the circle with g = Σ_{k ≤ K} 2^{−k·s_target} cos(2^k θ), 2^K = n/4.
    GradientEq { s_target: f64 },
    /// X₁ f + a X₂ f = 0 on torus2 with f(x, y) = φ(a x − y); a ∈ {−1, 0, 1}.
    TransportEq { a: i32 },
}

impl Recipe {
    pub fn name(&self) -> &'static str {
        match self {
            Recipe::GradientEq { .. } => "gradient_eq",
            Recipe::TransportEq { .. } => "transport_eq",
        }
    }
}

/// F(x, u, v) = v − g(x).
#[derive(Clone, Debug)]
pub struct GradientEquation {
    pub forcing: Vec<f64>,
}

impl MultiNonlinearity for GradientEquation {
    fn arity(&self) -> usize {
        2
    }

    fn eval(&self, x: usize, u: &[f64]) -> f64 {
        u[1] - self.forcing[x]
    }

    fn partial(&self, i: usize, _x: usize, _u: &[f64]) -> f64 {
        if i == 1 {
            1.0
        } else {
            0.0
        }
    }
}

/// F(x, u, v₁, v₂) = v₁ + a v₂.
#[derive(Clone, Copy, Debug)]
pub struct TransportEquation {
    pub a: f64,
}

impl MultiNonlinearity for TransportEquation {
    fn arity(&self) -> usize {
        3
    }

    fn eval(&self, _x: usize, u: &[f64]) -> f64 {
        u[1] + self.a * u[2]
    }

    fn partial(&self, i: usize, _x: usize, _u: &[f64]) -> f64 {
        [0.0, 1.0, self.a][i]
    }
}

#[derive(Clone, Debug)]
pub struct ManufacturedProblem {
    pub scene: Scene,
    pub recipe: Recipe,
    pub f: Vec<f64>,
    pub equation: Equation,
    pub s: f64,
    pub p: f64,
    /// ‖F(x, f, Xf)‖₂.
    pub residual: f64,
}

#[derive(Clone, Debug)]
pub enum Equation {
    Gradient(GradientEquation),
    Transport(TransportEquation),
}

impl Equation {
    pub fn as_multi(&self) -> &dyn MultiNonlinearity {
        match self {
            Equation::Gradient(e) => e,
            Equation::Transport(e) => e,
        }
    }

    /// Argument slots: f, then every field of the scene.
    pub fn slots(&self) -> Vec<Slot> {
        match self {
            Equation::Gradient(_) => vec![Slot::Value, Slot::Field(0)],
            Equation::Transport(_) => vec![Slot::Value, Slot::Field(0), Slot::Field(1)],
        }
    }
}

fn lacunary_cosines(n: usize, decay: f64) -> Vec<f64> {
    let depth = ((n / 4).max(1) as f64).log2().floor() as u32;
    (0..n)
        .map(|i| {
            let theta = 2.0 * PI * i as f64 / n as f64;
            (0..=depth)
                .map(|k| 0.5f64.powf(k as f64 * decay) * ((1u64 << k) as f64 * theta).cos())
                .sum()
        })
        .collect()
}

pub fn manufacture(scene: &Scene, recipe: Recipe, s: f64, p: f64) -> Result<ManufacturedProblem> {
    if scene.fields().is_empty() {
        return Err(invalid("scene", "manufactured problems need at least one field"));
    }
    if !(p > 1.0) {
        return Err(invalid("p", format!("exponent must exceed 1, got {p}")));
    }
    let n = scene.len();
    let (f, equation) = match recipe {
        Recipe::GradientEq { s_target } => {
            if scene.kind() != SceneKind::Circle {
                return Err(invalid("recipe", format!("gradient_eq needs a circle, got {}", scene.kind().name())));
            }
            if n < 8 {
                return Err(invalid("n", format!("gradient_eq needs n >= 8, got {n}")));
            }
            let g = lacunary_cosines(n, s_target);
            let x = scene.fields()[0].to_dense();
            let svd = SVD::new(x, true, true);
            let f = svd
                .solve(&DVector::from_column_slice(&g), 1e-10)
                .map_err(|e| Error::Precondition(format!("antiderivative failed: {e}")))?;
            (f.iter().copied().collect::<Vec<f64>>(), Equation::Gradient(GradientEquation { forcing: g }))
        }
        Recipe::TransportEq { a } => {
            if scene.kind() != SceneKind::Torus2 {
                return Err(invalid("recipe", format!("transport_eq needs torus2, got {}", scene.kind().name())));
            }
            if !(-1..=1).contains(&a) {
                return Err(invalid("a", format!("transport direction must be -1, 0 or 1, got {a}")));
            }
            let (nx, ny) = (scene.shape()[0], scene.shape()[1]);
            if a != 0 && nx % ny != 0 {
                return Err(invalid("sizes", format!("transport_eq with a = {a} needs ny to divide nx, got {nx}x{ny}")));
            }
            let phi = |m: i64| {
                let th = 2.0 * PI * m.rem_euclid(ny as i64) as f64 / ny as f64;
                th.sin() + 0.3 * (2.0 * th).cos()
            };
            let f = (0..n)
                .map(|g| {
                    let (x, y) = ((g % nx) as i64, (g / nx) as i64);
                    phi(a as i64 * x - y)
                })
                .collect();
            (f, Equation::Transport(TransportEquation { a: a as f64 }))
        }
    };
    let eq = equation.as_multi();
    let vals = slot_values(scene, &f, &equation.slots())?;
    let res: Vec<f64> = (0..n)
        .map(|x| eq.eval(x, &vals.iter().map(|v| v[x]).collect::<Vec<_>>()))
        .collect();
    Ok(ManufacturedProblem {
        scene: scene.clone(),
        recipe,
        residual: scene.inner(&res, &res).sqrt(),
        f,
        equation,
        s,
        p,
    })
}

/// The same recipe on a scene refined by `factor` in every direction.
pub fn refine(prob: &ManufacturedProblem, factor: usize) -> Result<ManufacturedProblem> {
    let shape: Vec<usize> = prob.scene.shape().iter().map(|n| n * factor).collect();
    let scene = match prob.scene.kind() {
        SceneKind::Circle => Scene::circle(shape[0])?,
        SceneKind::Torus2 => Scene::torus2(shape[0], shape[1])?,
        other => return Err(invalid("scene", format!("no refinement rule for {}", other.name()))),
    };
    manufacture(&scene, prob.recipe, prob.s, prob.p)
}

/// ∂_{u_i}F at every point for the field slots, one κ-vector per point.
pub fn gamma_coefficients(nl: &dyn MultiNonlinearity, slots: &[Slot], values: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = values.first().map_or(0, Vec::len);
    (0..n)
        .map(|x| {
            let u: Vec<f64> = values.iter().map(|v| v[x]).collect();
            slots
                .iter()
                .enumerate()
                .filter(|(_, s)| matches!(s, Slot::Field(_)))
                .map(|(i, _)| nl.partial(i, x, &u))
                .collect()
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct GammaField {
    pub coeffs: Vec<Vec<f64>>,
    /// Every coefficient vanishes.
    pub degenerate: bool,
}

pub fn gamma_field(prob: &ManufacturedProblem) -> Result<GammaField> {
    let slots = prob.equation.slots();
    let vals = slot_values(&prob.scene, &prob.f, &slots)?;
    let coeffs = gamma_coefficients(prob.equation.as_multi(), &slots, &vals);
    let degenerate = coeffs.iter().flatten().all(|c| *c == 0.0);
    Ok(GammaField { coeffs, degenerate })
}

fn field_indices(slots: &[Slot]) -> Vec<usize> {
    slots
        .iter()
        .filter_map(|s| match s {
            Slot::Field(k) => Some(*k),
            Slot::Value => None,
        })
        .collect()
}

/// U(f) = Σ_i c_i(x) · (M X_i f)(x) with M = L^α, or (1+L)^α when `inhomogeneous`.
pub fn directional_functional(
    spec: &SpectralData,
    scene: &Scene,
    coeffs: &[Vec<f64>],
    fields: &[usize],
    f: &[f64],
    alpha: f64,
    inhomogeneous: bool,
) -> Result<Vec<f64>> {
    let n = scene.len();
    let mut u = vec![0.0; n];
    for (slot, &k) in fields.iter().enumerate() {
        let xf = scene.apply_field(k, f)?;
        let m = if inhomogeneous {
            spec.apply_fn(|l| (1.0 + l).powf(alpha), &xf)?
        } else {
            spec.apply_fn(|l| power(l, alpha), &xf)?
        };
        for x in 0..n {
            u[x] += coeffs[x][slot] * m[x];
        }
    }
    Ok(u)
}

/// Σ_i c_i(x) · (X_i (1+L)^α f)(x), meaningful where the fields commute with L.
pub fn commutator_functional(
    spec: &SpectralData,
    scene: &Scene,
    coeffs: &[Vec<f64>],
    fields: &[usize],
    f: &[f64],
    alpha: f64,
) -> Result<Vec<f64>> {
    let n = scene.len();
    let smooth = spec.apply_fn(|l| (1.0 + l).powf(alpha), f)?;
    let mut u = vec![0.0; n];
    for (slot, &k) in fields.iter().enumerate() {
        let xf = scene.apply_field(k, &smooth)?;
        for x in 0..n {
            u[x] += coeffs[x][slot] * xf[x];
        }
    }
    Ok(u)
}

#[derive(Clone, Debug, Serialize)]
pub struct DirectionalOptions {
    /// Refinement factors relative to the problem's scene; 1 is the problem itself.
    pub refinements: Vec<usize>,
    pub inhomogeneous: bool,
    pub commutator: bool,
}

impl Default for DirectionalOptions {
    fn default() -> Self {
        DirectionalOptions { refinements: vec![1, 2, 4], inhomogeneous: false, commutator: true }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RefinementPoint {
    pub n: usize,
    pub u_norm: f64,
    pub commutator_norm: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct DirectionalReport {
    pub recipe: String,
    pub rho: f64,
    /// (s + ρ)/2.
    pub alpha: f64,
    /// ρ < min(1, s − d/p).
    pub in_theorem: bool,
    pub gamma_coeffs: Vec<Vec<f64>>,
    pub degenerate: bool,
    pub u_norm: f64,
    pub refinement_series: Vec<RefinementPoint>,
    /// max/min of the U-norm series.
    pub spread: f64,
    pub increasing: bool,
}

fn directional_point(prob: &ManufacturedProblem, spec: &SpectralData, alpha: f64, opts: &DirectionalOptions) -> Result<RefinementPoint> {
    let slots = prob.equation.slots();
    let fields = field_indices(&slots);
    let gamma = gamma_field(prob)?;
    let u = directional_functional(spec, &prob.scene, &gamma.coeffs, &fields, &prob.f, alpha, opts.inhomogeneous)?;
    let commuting = matches!(prob.scene.kind(), SceneKind::Circle | SceneKind::Torus2);
    let commutator_norm = if opts.commutator && commuting {
        let c = commutator_functional(spec, &prob.scene, &gamma.coeffs, &fields, &prob.f, alpha)?;
        Some(lp_norm(&prob.scene, &c, prob.p)?)
    } else {
        None
    };
    Ok(RefinementPoint { n: prob.scene.len(), u_norm: lp_norm(&prob.scene, &u, prob.p)?, commutator_norm })
}

/// ‖U(f)‖_p at α = (s+ρ)/2 on the problem's scene and its refinements.
pub fn directional_regularity(prob: &ManufacturedProblem, rho: f64, opts: &DirectionalOptions) -> Result<DirectionalReport> {
    if !(rho >= 0.0) {
        return Err(invalid("rho", format!("must be nonnegative, got {rho}")));
    }
    let scale = 1.0 + prob.scene.inner(&prob.f, &prob.f).sqrt();
    if !(prob.residual <= 1e-8 * scale) {
        return Err(Error::Precondition(format!(
            "manufactured residual {:.3e} is not small; the problem is not a solution",
            prob.residual
        )));
    }
    if opts.refinements.is_empty() || opts.refinements.contains(&0) {
        return Err(invalid("refinements", "need positive refinement factors"));
    }
    let alpha = 0.5 * (prob.s + rho);
    let series: Vec<RefinementPoint> = opts
        .refinements
        .par_iter()
        .map(|&m| -> Result<RefinementPoint> {
            let refined = if m == 1 { prob.clone() } else { refine(prob, m)? };
            let spec = eigendecompose(&refined.scene)?;
            directional_point(&refined, &spec, alpha, opts)
        })
        .collect::<Result<_>>()?;
    let gamma = gamma_field(prob)?;
    let d = theorem_dimension(&prob.scene)?;
    let (lo, hi) = series
        .iter()
        .fold((f64::INFINITY, 0.0_f64), |(a, b), p| (a.min(p.u_norm), b.max(p.u_norm)));
    let base = series
        .iter()
        .find(|p| p.n == prob.scene.len())
        .map_or(f64::NAN, |p| p.u_norm);
    Ok(DirectionalReport {
        recipe: prob.recipe.name().into(),
        rho,
        alpha,
        in_theorem: rho < 1f64.min(prob.s - d / prob.p),
        degenerate: gamma.degenerate,
        gamma_coeffs: gamma.coeffs,
        u_norm: base,
        spread: hi / lo,
        increasing: series.windows(2).all(|w| w[1].u_norm > w[0].u_norm),
        refinement_series: series,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct TwistedReport {
    pub alpha: f64,
    /// ‖Π̃_c(a) − c·a‖₂ for the frozen coefficient c and mean-zero a.
    pub frozen_residual: f64,
    /// ‖c·a‖₂.
    pub frozen_scale: f64,
    /// ‖T_F(f) − U(f)‖_p with T_F(f) = Σ_i Π̃_{c_i}(L^α X_i f).
    pub t_minus_u: f64,
    pub u_norm: f64,
}

pub fn twisted_consistency(
    cfg: &ParaproductConfig,
    spec: &SpectralData,
    prob: &ManufacturedProblem,
    rho: f64,
    frozen: f64,
) -> Result<TwistedReport> {
    let alpha = 0.5 * (prob.s + rho);
    let scene = &prob.scene;
    if spec.len() != scene.len() {
        return Err(Error::Mismatch { expected: scene.len(), found: spec.len() });
    }
    let slots = prob.equation.slots();
    let fields = field_indices(&slots);
    let gamma = gamma_field(prob)?;
    let a = spec.project_out_kernel(&scene.apply_field(fields[0], &prob.f)?)?;
    let c = vec![frozen; scene.len()];
    let ca: Vec<f64> = a.iter().map(|v| frozen * v).collect();
    let d = sub(&pi_twisted(cfg, spec, scene, alpha, &a, &c)?, &ca);

    let u = directional_functional(spec, scene, &gamma.coeffs, &fields, &prob.f, alpha, false)?;
    let mut t = vec![0.0; scene.len()];
    for (slot, &k) in fields.iter().enumerate() {
        let lxf = spec.apply_fn(|l| power(l, alpha), &scene.apply_field(k, &prob.f)?)?;
        let coeff: Vec<f64> = gamma.coeffs.iter().map(|c| c[slot]).collect();
        for (acc, v) in t.iter_mut().zip(pi_twisted(cfg, spec, scene, alpha, &lxf, &coeff)?) {
            *acc += v;
        }
    }
    Ok(TwistedReport {
        alpha,
        frozen_residual: scene.inner(&d, &d).sqrt(),
        frozen_scale: scene.inner(&ca, &ca).sqrt(),
        t_minus_u: lp_norm(scene, &sub(&t, &u), prob.p)?,
        u_norm: lp_norm(scene, &u, prob.p)?,
    })
}
