//! Paralinearization `F(f) = Π_{F'(f)}(f) + w`, the five-term split of w,
//! and the smoothing study on lacunary inputs.
//!
//! With `A_t = φ̃(tL)`, `g = F'(f)` and `t_s` the split point:
//!
//! ```text
//! I   = A_{t_s} F(A_{t_s} f)
//! II  = −∫_0^{t_s} ψ̃(tL)[t(L F(A_t f) − F'(A_t f) L A_t f)] dt/t
//! III =  ∫_0^{t_s} ψ̃(tL)[(A_t g − F'(A_t f)) tL A_t f] dt/t
//! IV  =  ∫_0^{t_s} A_t[ψ(tL)f · (A_t g − F'(A_t f))] dt/t
//! V   =  ∫_{t_s}^∞ ψ̃(tL)[tL A_t f · A_t g] + A_t[ψ(tL)f · A_t g] dt/t
//! ```

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{check_len, invalid, Error, Result};
use crate::paraproduct::{pi, sub, ParaproductConfig};
use crate::scene::{dyadic_radii, geometry_report, Scene};
use crate::sobolev::{bessel_norm, lacunary, probe_family, sobolev_norm, NormReport, SobolevParams};
use crate::speccalc::{node_integral, smoothed, SpectralData};

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "tag", content = "coeffs", rename_all = "lowercase")]
pub enum Nonlinearity {
    Square,
    Cube,
    Sin,
    Tanh,
    Expm1,
    /// Σ_k c_k u^k.
    Poly(Vec<f64>),
}

impl Nonlinearity {
    pub fn parse(tag: &str, coeffs: &[f64]) -> Result<Self> {
        Ok(match tag {
            "square" => Nonlinearity::Square,
            "cube" => Nonlinearity::Cube,
            "sin" => Nonlinearity::Sin,
            "tanh" => Nonlinearity::Tanh,
            "expm1" => Nonlinearity::Expm1,
            "poly" => {
                if coeffs.is_empty() {
                    return Err(invalid("coeffs", "poly needs at least one coefficient"));
                }
                Nonlinearity::Poly(coeffs.to_vec())
            }
            other => {
                return Err(invalid(
                    "F",
                    format!("unknown nonlinearity '{other}'; expected square, cube, sin, tanh, expm1 or poly"),
                ))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Nonlinearity::Square => "square",
            Nonlinearity::Cube => "cube",
            Nonlinearity::Sin => "sin",
            Nonlinearity::Tanh => "tanh",
            Nonlinearity::Expm1 => "expm1",
            Nonlinearity::Poly(_) => "poly",
        }
    }

    pub fn vanishes_at_zero(&self) -> bool {
        match self {
            Nonlinearity::Poly(c) => c[0] == 0.0,
            _ => true,
        }
    }

    /// Σ_k c_k (k)_order u^{k−order} by Horner, with (k)_order the falling factorial.
    fn poly_derivative(c: &[f64], order: usize, u: f64) -> f64 {
        let mut acc = 0.0;
        for (k, &ck) in c.iter().enumerate().skip(order).rev() {
            let falling: f64 = (0..order).map(|j| (k - j) as f64).product();
            acc = acc * u + ck * falling;
        }
        acc
    }

    pub fn eval(&self, u: f64) -> f64 {
        match self {
            Nonlinearity::Square => u * u,
            Nonlinearity::Cube => u * u * u,
            Nonlinearity::Sin => u.sin(),
            Nonlinearity::Tanh => u.tanh(),
            Nonlinearity::Expm1 => u.exp_m1(),
            Nonlinearity::Poly(c) => Self::poly_derivative(c, 0, u),
        }
    }

    pub fn d1(&self, u: f64) -> f64 {
        match self {
            Nonlinearity::Square => 2.0 * u,
            Nonlinearity::Cube => 3.0 * u * u,
            Nonlinearity::Sin => u.cos(),
            Nonlinearity::Tanh => 1.0 - u.tanh().powi(2),
            Nonlinearity::Expm1 => u.exp(),
            Nonlinearity::Poly(c) => Self::poly_derivative(c, 1, u),
        }
    }

    pub fn d2(&self, u: f64) -> f64 {
        match self {
            Nonlinearity::Square => 2.0,
            Nonlinearity::Cube => 6.0 * u,
            Nonlinearity::Sin => -u.sin(),
            Nonlinearity::Tanh => {
                let t = u.tanh();
                -2.0 * t * (1.0 - t * t)
            }
            Nonlinearity::Expm1 => u.exp(),
            Nonlinearity::Poly(c) => Self::poly_derivative(c, 2, u),
        }
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        f.iter().map(|&u| self.eval(u)).collect()
    }

    pub fn apply_d1(&self, f: &[f64]) -> Vec<f64> {
        f.iter().map(|&u| self.d1(u)).collect()
    }
}

/// Exponent bookkeeping for the theorem: s, p, ε and the dimension d in d/p.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ParalinParams {
    pub s: f64,
    pub p: f64,
    pub eps: f64,
    pub dimension: f64,
}

/// Topological dimension for the built-in scenes (homogeneous dimension 4 for
/// the Heisenberg group), fitted doubling exponent for graphs.
pub fn theorem_dimension(scene: &Scene) -> Result<f64> {
    match scene.nominal_dimension() {
        Some(d) => Ok(d),
        None => Ok(geometry_report(scene, &dyadic_radii(scene), &[])?.d_hom),
    }
}

impl ParalinParams {
    pub fn new(s: f64, p: f64, eps: f64, dimension: f64) -> Result<Self> {
        if !(p > 1.0 && p.is_finite()) {
            return Err(invalid("p", format!("exponent must lie in (1, ∞), got {p}")));
        }
        if !(eps >= 0.0) {
            return Err(invalid("eps", format!("must be nonnegative, got {eps}")));
        }
        if !(dimension > 0.0) {
            return Err(invalid("dimension", format!("must be positive, got {dimension}")));
        }
        if !s.is_finite() {
            return Err(invalid("s", format!("must be finite, got {s}")));
        }
        Ok(ParalinParams { s, p, eps, dimension })
    }

    pub fn for_scene(scene: &Scene, s: f64, p: f64, eps: f64) -> Result<Self> {
        Self::new(s, p, eps, theorem_dimension(scene)?)
    }

    /// 2s − d/p.
    pub fn sigma(&self) -> f64 {
        2.0 * self.s - self.dimension / self.p
    }

    /// d/p < s < 1.
    pub fn in_range(&self) -> bool {
        self.s > self.dimension / self.p && self.s < 1.0
    }

    pub fn require_range(&self) -> Result<()> {
        if self.in_range() {
            Ok(())
        } else {
            Err(invalid(
                "s",
                format!(
                    "s must lie in (d/p, 1) = ({:.4}, 1), got {}",
                    self.dimension / self.p,
                    self.s
                ),
            ))
        }
    }
}

/// The five terms of the split, each a grid function.
#[derive(Clone, Debug, Serialize)]
pub struct Terms {
    pub i: Vec<f64>,
    pub ii: Vec<f64>,
    pub iii: Vec<f64>,
    pub iv: Vec<f64>,
    pub v: Vec<f64>,
}

impl Terms {
    pub fn all(&self) -> [&Vec<f64>; 5] {
        [&self.i, &self.ii, &self.iii, &self.iv, &self.v]
    }

    pub fn sum(&self) -> Vec<f64> {
        (0..self.i.len())
            .map(|k| self.i[k] + self.ii[k] + self.iii[k] + self.iv[k] + self.v[k])
            .collect()
    }
}

fn map_matrix(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    m.map(f)
}

pub fn compute_terms(
    cfg: &ParaproductConfig,
    spec: &SpectralData,
    scene: &Scene,
    nl: &Nonlinearity,
    f: &[f64],
) -> Result<Terms> {
    check_len(spec.len(), f)?;
    if scene.len() != spec.len() {
        return Err(Error::Mismatch { expected: spec.len(), found: scene.len() });
    }
    let fam = cfg.fam;
    let n = spec.len();
    let k = cfg.split_index();
    let all = cfg.quad.len();
    let cf = spec.coeffs(f)?;
    let cg = spec.coeffs(&nl.apply_d1(f))?;
    let ts_split = cfg.t_split;

    let smooth_split = |u: &[f64]| spec.apply_fn(|l| fam.phi_tilde(ts_split * l), u);
    let i = smooth_split(&nl.apply(&smooth_split(f)?))?;

    let af = |ts: &[f64]| smoothed(spec, &cf, ts, |x| fam.phi_tilde(x));
    let ag = |ts: &[f64]| smoothed(spec, &cg, ts, |x| fam.phi_tilde(x));
    let tlaf = |ts: &[f64]| smoothed(spec, &cf, ts, |x| x * fam.phi_tilde(x));
    let psif = |ts: &[f64]| smoothed(spec, &cf, ts, |x| fam.psi(x));
    // A_t g − F'(A_t f)
    let mismatch = |ts: &[f64]| ag(ts) - map_matrix(&af(ts), |u| nl.d1(u));

    let ii = node_integral(
        spec,
        &cfg.quad,
        0..k,
        |ts| {
            let a = af(ts);
            let mut out = DMatrix::zeros(n, ts.len());
            for (j, &t) in ts.iter().enumerate() {
                let col = &a.as_slice()[j * n..(j + 1) * n];
                let lfu = scene.laplacian().apply(&nl.apply(col));
                let lu = scene.laplacian().apply(col);
                for r in 0..n {
                    out[(r, j)] = t * (lfu[r] - nl.d1(col[r]) * lu[r]);
                }
            }
            out
        },
        |x| fam.psi_tilde(x),
    );
    let iii = node_integral(
        spec,
        &cfg.quad,
        0..k,
        |ts| mismatch(ts).component_mul(&tlaf(ts)),
        |x| fam.psi_tilde(x),
    );
    let iv = node_integral(
        spec,
        &cfg.quad,
        0..k,
        |ts| psif(ts).component_mul(&mismatch(ts)),
        |x| fam.phi_tilde(x),
    );
    let v1 = node_integral(spec, &cfg.quad, k..all, |ts| tlaf(ts).component_mul(&ag(ts)), |x| fam.psi_tilde(x));
    let v2 = node_integral(spec, &cfg.quad, k..all, |ts| psif(ts).component_mul(&ag(ts)), |x| fam.phi_tilde(x));
    Ok(Terms {
        i,
        ii: ii.into_iter().map(|v| -v).collect(),
        iii,
        iv,
        v: v1.iter().zip(&v2).map(|(a, b)| a + b).collect(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ParalinReport {
    pub nonlinearity: String,
    pub params: ParalinParams,
    pub sigma: f64,
    /// Norms of w at σ = 2s − d/p (clamped at 0) and at s.
    pub w_norms: [NormReport; 2],
    pub term_norms: Vec<NormReport>,
    /// ‖w − (I + II + III + IV + V)‖₂.
    pub consistency_residual: f64,
    /// ‖F(f)‖₂.
    pub consistency_scale: f64,
    pub out_of_range: bool,
}

fn norm_report(spec: &SpectralData, scene: &Scene, u: &[f64], s: f64, p: f64) -> Result<NormReport> {
    sobolev_norm(spec, scene, u, SobolevParams::new(s.max(0.0), p, 1.0)?)
}

/// w = F(f) − Π_{F'(f)}(f) with the five-term diagnostics.
pub fn paralinearize(
    cfg: &ParaproductConfig,
    spec: &SpectralData,
    scene: &Scene,
    nl: &Nonlinearity,
    f: &[f64],
    params: ParalinParams,
) -> Result<(Vec<f64>, ParalinReport)> {
    if !nl.vanishes_at_zero() {
        return Err(Error::Precondition(format!("nonlinearity {} must vanish at 0", nl.name())));
    }
    let w = remainder(cfg, spec, scene, nl, f)?;
    let terms = compute_terms(cfg, spec, scene, nl, f)?;
    let d = sub(&w, &terms.sum());
    let ff = nl.apply(f);
    let (s, p) = (params.s, params.p);
    let report = ParalinReport {
        nonlinearity: nl.name().into(),
        params,
        sigma: params.sigma(),
        w_norms: [norm_report(spec, scene, &w, params.sigma(), p)?, norm_report(spec, scene, &w, s, p)?],
        term_norms: terms
            .all()
            .iter()
            .map(|t| norm_report(spec, scene, t, s, p))
            .collect::<Result<_>>()?,
        consistency_residual: scene.inner(&d, &d).sqrt(),
        consistency_scale: scene.inner(&ff, &ff).sqrt(),
        out_of_range: !params.in_range(),
    };
    Ok((w, report))
}

/// F(f) − Π_{F'(f)}(f) alone.
pub fn remainder(
    cfg: &ParaproductConfig,
    spec: &SpectralData,
    scene: &Scene,
    nl: &Nonlinearity,
    f: &[f64],
) -> Result<Vec<f64>> {
    check_len(spec.len(), f)?;
    let pif = pi(cfg, spec, scene, f, &nl.apply_d1(f))?;
    Ok(sub(&nl.apply(f), &pif))
}

#[derive(Clone, Debug, Serialize)]
pub struct SmoothingRow {
    pub depth: usize,
    pub truncated: bool,
    /// ‖w_K‖_{W^{σ,p}} / ‖f_K‖²_{W^{s+ε,p}}.
    pub ratio: f64,
    /// Same with σ + 0.5.
    pub contrast_ratio: f64,
    pub w_norm: f64,
    pub f_norm: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SmoothingStudy {
    pub params: ParalinParams,
    pub sigma: f64,
    pub rows: Vec<SmoothingRow>,
    /// max/min of the ratio series.
    pub spread: f64,
    pub contrast_increasing: bool,
    /// ε = 0 lies outside the theorem's hypothesis.
    pub eps_flag: bool,
}

/// Lacunary inputs f_K = Σ_{k≤K} 2^{−k(s+ε)} e_{λ(2^k)} with the ratio of w_K
/// at 2s − d/p and at 2s − d/p + 0.5 against ‖f_K‖²_{W^{s+ε,p}}.
pub fn smoothing_study(
    cfg: &ParaproductConfig,
    spec: &SpectralData,
    scene: &Scene,
    nl: &Nonlinearity,
    params: ParalinParams,
    depths: &[usize],
) -> Result<SmoothingStudy> {
    params.require_range()?;
    if !nl.vanishes_at_zero() {
        return Err(Error::Precondition(format!("nonlinearity {} must vanish at 0", nl.name())));
    }
    let (s, p, eps) = (params.s, params.p, params.eps);
    let sigma = params.sigma();
    let rows: Vec<SmoothingRow> = depths
        .par_iter()
        .map(|&depth| -> Result<SmoothingRow> {
            let (f, truncated) = lacunary(spec, depth, s + eps);
            let w = remainder(cfg, spec, scene, nl, &f)?;
            let f_norm = bessel_norm(spec, scene, &f, s + eps, p)?;
            let w_norm = bessel_norm(spec, scene, &w, sigma, p)?;
            let w_contrast = bessel_norm(spec, scene, &w, sigma + 0.5, p)?;
            Ok(SmoothingRow {
                depth,
                truncated,
                ratio: w_norm / (f_norm * f_norm),
                contrast_ratio: w_contrast / (f_norm * f_norm),
                w_norm,
                f_norm,
            })
        })
        .collect::<Result<_>>()?;
    let (lo, hi) = rows
        .iter()
        .fold((f64::INFINITY, 0.0_f64), |(a, b), r| (a.min(r.ratio), b.max(r.ratio)));
    Ok(SmoothingStudy {
        params,
        sigma,
        spread: hi / lo,
        contrast_increasing: rows.windows(2).all(|w| w[1].contrast_ratio > w[0].contrast_ratio),
        rows,
        eps_flag: eps == 0.0,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct CompositionReport {
    pub nonlinearity: String,
    pub s: f64,
    pub p: f64,
    /// max ‖F(f)‖_{W^{s,p}} / (‖f‖_{W^{s,p}} + ‖f‖²_{W^{s,p}}).
    pub constant: f64,
}

/// Chain-rule probe over the probe family.
pub fn composition_probe(
    spec: &SpectralData,
    scene: &Scene,
    nl: &Nonlinearity,
    s: f64,
    p: f64,
    seed: u64,
) -> Result<CompositionReport> {
    let fam = probe_family(spec, s, seed).functions;
    let ratios: Vec<f64> = fam
        .par_iter()
        .map(|f| -> Result<f64> {
            let nf = bessel_norm(spec, scene, f, s, p)?;
            let nff = bessel_norm(spec, scene, &nl.apply(f), s, p)?;
            Ok(if nf > 0.0 { nff / (nf + nf * nf) } else { 0.0 })
        })
        .collect::<Result<_>>()?;
    Ok(CompositionReport {
        nonlinearity: nl.name().into(),
        s,
        p,
        constant: ratios.into_iter().fold(0.0, f64::max),
    })
}

/// Argument slot of a multi-argument nonlinearity: f itself or X_k f.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Slot {
    Value,
    Field(usize),
}

/// F(x, u_1, …, u_m) with first partial derivatives in the u slots.
pub trait MultiNonlinearity: Sync {
    fn arity(&self) -> usize;
    fn eval(&self, x: usize, u: &[f64]) -> f64;
    fn partial(&self, i: usize, x: usize, u: &[f64]) -> f64;
}

/// A scalar nonlinearity in the first slot.
impl MultiNonlinearity for Nonlinearity {
    fn arity(&self) -> usize {
        1
    }

    fn eval(&self, _x: usize, u: &[f64]) -> f64 {
        Nonlinearity::eval(self, u[0])
    }

    fn partial(&self, _i: usize, _x: usize, u: &[f64]) -> f64 {
        self.d1(u[0])
    }
}

/// Σ_i c_i u_i.
#[derive(Clone, Debug)]
pub struct Linear(pub Vec<f64>);

impl MultiNonlinearity for Linear {
    fn arity(&self) -> usize {
        self.0.len()
    }

    fn eval(&self, _x: usize, u: &[f64]) -> f64 {
        self.0.iter().zip(u).map(|(c, v)| c * v).sum()
    }

    fn partial(&self, i: usize, _x: usize, _u: &[f64]) -> f64 {
        self.0[i]
    }
}

/// u_1 u_2.
#[derive(Clone, Copy, Debug)]
pub struct Product;

impl MultiNonlinearity for Product {
    fn arity(&self) -> usize {
        2
    }

    fn eval(&self, _x: usize, u: &[f64]) -> f64 {
        u[0] * u[1]
    }

    fn partial(&self, i: usize, _x: usize, u: &[f64]) -> f64 {
        u[1 - i]
    }
}

/// The slot values u_i(x) = (X_{α_i} f)(x), one vector per slot.
pub fn slot_values(scene: &Scene, f: &[f64], slots: &[Slot]) -> Result<Vec<Vec<f64>>> {
    slots
        .iter()
        .map(|s| match *s {
            Slot::Value => Ok(f.to_vec()),
            Slot::Field(k) => {
                if k >= scene.fields().len() {
                    return Err(invalid("slots", format!("field {k} does not exist; scene has {}", scene.fields().len())));
                }
                scene.apply_field(k, f)
            }
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct VectorReport {
    pub w_norms: [NormReport; 2],
    /// max_x |F(x, 0, …, 0)|; the theorem assumes 0.
    pub value_at_zero: f64,
    pub out_of_range: bool,
}

/// w = F(x, X_α f) − Σ_i Π_{∂_i F(x, X_α f)}(X_{α_i} f).
pub fn vector_paralinearize(
    cfg: &ParaproductConfig,
    spec: &SpectralData,
    scene: &Scene,
    nl: &dyn MultiNonlinearity,
    f: &[f64],
    slots: &[Slot],
    params: ParalinParams,
) -> Result<(Vec<f64>, VectorReport)> {
    check_len(spec.len(), f)?;
    if slots.len() != nl.arity() {
        return Err(Error::Mismatch { expected: nl.arity(), found: slots.len() });
    }
    let n = spec.len();
    let u = slot_values(scene, f, slots)?;
    let at = |x: usize| -> Vec<f64> { u.iter().map(|v| v[x]).collect() };
    let mut w: Vec<f64> = (0..n).map(|x| nl.eval(x, &at(x))).collect();
    for (i, ui) in u.iter().enumerate() {
        let coeff: Vec<f64> = (0..n).map(|x| nl.partial(i, x, &at(x))).collect();
        let p = pi(cfg, spec, scene, ui, &coeff)?;
        for (a, b) in w.iter_mut().zip(p) {
            *a -= b;
        }
    }
    let zero = vec![0.0; slots.len()];
    let value_at_zero = (0..n).map(|x| nl.eval(x, &zero).abs()).fold(0.0, f64::max);
    let report = VectorReport {
        w_norms: [
            norm_report(spec, scene, &w, params.sigma(), params.p)?,
            norm_report(spec, scene, &w, params.s, params.p)?,
        ],
        value_at_zero,
        out_of_range: !params.in_range(),
    };
    Ok((w, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paraproduct::{decompose_product, rest};
    use crate::speccalc::{eigendecompose, MultiplierFamily, QuadratureOptions};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(n: usize) -> (Scene, SpectralData, ParaproductConfig) {
        let s = Scene::circle(n).unwrap();
        let spec = eigendecompose(&s).unwrap();
        let cfg = ParaproductConfig::new(&spec, MultiplierFamily::default(), QuadratureOptions::default()).unwrap();
        (s, spec, cfg)
    }

    fn rnd(spec: &SpectralData, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f: Vec<f64> = (0..spec.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        spec.project_out_kernel(&f).unwrap()
    }

    fn l2(s: &Scene, u: &[f64]) -> f64 {
        s.inner(u, u).sqrt()
    }

    fn all_nonlinearities() -> Vec<Nonlinearity> {
        vec![
            Nonlinearity::Square,
            Nonlinearity::Cube,
            Nonlinearity::Sin,
            Nonlinearity::Tanh,
            Nonlinearity::Expm1,
            Nonlinearity::Poly(vec![0.0, 1.5, -0.5, 0.25]),
        ]
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for nl in all_nonlinearities() {
            for k in 0..20 {
                let u = -2.0 + 4.0 * k as f64 / 19.0;
                let h = 1e-5;
                let d1 = (nl.eval(u + h) - nl.eval(u - h)) / (2.0 * h);
                let d2 = (nl.d1(u + h) - nl.d1(u - h)) / (2.0 * h);
                assert!((d1 - nl.d1(u)).abs() < 1e-6 * (1.0 + d1.abs()), "{} d1 at {u}", nl.name());
                assert!((d2 - nl.d2(u)).abs() < 1e-6 * (1.0 + d2.abs()), "{} d2 at {u}", nl.name());
            }
            assert!(nl.vanishes_at_zero() && nl.eval(0.0) == 0.0);
        }
        assert!(!Nonlinearity::Poly(vec![1.0, 2.0]).vanishes_at_zero());
        assert!(Nonlinearity::parse("cosh", &[]).is_err());
        assert_eq!(Nonlinearity::parse("poly", &[0.0, 2.0]).unwrap().eval(3.0), 6.0);
    }

    #[test]
    fn identity_leaves_kernel_mode_only() {
        let (s, spec, cfg) = setup(64);
        let f = rnd(&spec, 1);
        let w = remainder(&cfg, &spec, &s, &Nonlinearity::Poly(vec![0.0, 1.0]), &f).unwrap();
        assert!(l2(&s, &w) <= 1e-5 * l2(&s, &f));
    }

    #[test]
    fn square_gives_rest() {
        let (s, spec, cfg) = setup(64);
        let f = rnd(&spec, 2);
        let w = remainder(&cfg, &spec, &s, &Nonlinearity::Square, &f).unwrap();
        let r = rest(&cfg, &spec, &s, &f, &f).unwrap();
        assert!(l2(&s, &sub(&w, &r)) <= 1e-6 * l2(&s, &r));
    }

    #[test]
    fn zero_input_gives_zero() {
        let (s, spec, cfg) = setup(32);
        let z = vec![0.0; 32];
        for nl in all_nonlinearities() {
            let w = remainder(&cfg, &spec, &s, &nl, &z).unwrap();
            assert!(w.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn terms_sum_to_remainder() {
        let (s, spec, _) = setup(64);
        let opts = QuadratureOptions { points_per_cell: 3, ..QuadratureOptions::default() };
        let cfg = ParaproductConfig::new(&spec, MultiplierFamily::default(), opts).unwrap();
        let (f, _) = lacunary(&spec, 4, 0.85);
        let params = ParalinParams::for_scene(&s, 0.8, 2.0, 0.05).unwrap();
        let (_, rep) = paralinearize(&cfg, &spec, &s, &Nonlinearity::Sin, &f, params).unwrap();
        assert!(!rep.out_of_range);
        assert!(rep.consistency_residual <= 1e-4 * rep.consistency_scale, "{}", rep.consistency_residual);
    }

    #[test]
    fn constant_input_kills_middle_terms() {
        let (s, spec, cfg) = setup(32);
        let t = compute_terms(&cfg, &spec, &s, &Nonlinearity::Sin, &vec![0.4; 32]).unwrap();
        for term in [&t.ii, &t.iii, &t.iv] {
            assert!(term.iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn square_second_term_uses_carre_du_champ() {
        // For F(u) = u², L(u²) − 2u Lu = Γ(u, u), so II is minus the small-t part of
        // the Rest integral.
        let (s, spec, cfg) = setup(32);
        let f = rnd(&spec, 3);
        let t = compute_terms(&cfg, &spec, &s, &Nonlinearity::Square, &f).unwrap();
        let k = cfg.split_index();
        let fam = cfg.fam;
        let cf = spec.coeffs(&f).unwrap();
        let expected = node_integral(
            &spec,
            &cfg.quad,
            0..k,
            |ts| {
                let a = smoothed(&spec, &cf, ts, |x| fam.phi_tilde(x));
                let mut out = DMatrix::zeros(32, ts.len());
                for (j, &tt) in ts.iter().enumerate() {
                    let col = &a.as_slice()[j * 32..(j + 1) * 32];
                    let g = s.carre_du_champ(col, col);
                    for r in 0..32 {
                        out[(r, j)] = tt * g[r];
                    }
                }
                out
            },
            |x| fam.psi_tilde(x),
        );
        assert!(t.ii.iter().zip(&expected).all(|(a, b)| (a + b).abs() < 1e-12));
    }

    #[test]
    fn smoothing_rejects_out_of_range() {
        let (s, spec, cfg) = setup(32);
        let params = ParalinParams::for_scene(&s, 1.5, 2.0, 0.05).unwrap();
        let err = smoothing_study(&cfg, &spec, &s, &Nonlinearity::Sin, params, &[2]).unwrap_err();
        assert!(err.to_string().contains("s must lie in (d/p, 1)"));
        let zero_eps = ParalinParams::for_scene(&s, 0.8, 2.0, 0.0).unwrap();
        assert!(smoothing_study(&cfg, &spec, &s, &Nonlinearity::Sin, zero_eps, &[2]).unwrap().eps_flag);
    }

    #[test]
    fn smoothing_square_matches_rest() {
        let (s, spec, cfg) = setup(64);
        let params = ParalinParams::for_scene(&s, 0.8, 2.0, 0.05).unwrap();
        let study = smoothing_study(&cfg, &spec, &s, &Nonlinearity::Square, params, &[3]).unwrap();
        let (f, _) = lacunary(&spec, 3, 0.85);
        let r = rest(&cfg, &spec, &s, &f, &f).unwrap();
        let fnorm = bessel_norm(&spec, &s, &f, 0.85, 2.0).unwrap();
        let expected = bessel_norm(&spec, &s, &r, params.sigma(), 2.0).unwrap() / (fnorm * fnorm);
        assert!((study.rows[0].ratio - expected).abs() <= 1e-6 * expected);
    }

    #[test]
    fn vector_version_reduces_and_splits() {
        let (s, spec, cfg) = setup(64);
        let f = rnd(&spec, 4);
        let params = ParalinParams::for_scene(&s, 0.8, 2.0, 0.05).unwrap();
        let (w1, _) = vector_paralinearize(&cfg, &spec, &s, &Nonlinearity::Sin, &f, &[Slot::Value], params).unwrap();
        let w0 = remainder(&cfg, &spec, &s, &Nonlinearity::Sin, &f).unwrap();
        assert!(w1.iter().zip(&w0).all(|(a, b)| (a - b).abs() < 1e-12));

        let xf = s.apply_field(0, &f).unwrap();
        let (wl, rep) =
            vector_paralinearize(&cfg, &spec, &s, &Linear(vec![0.0, 1.0]), &f, &[Slot::Value, Slot::Field(0)], params)
                .unwrap();
        assert_eq!(rep.value_at_zero, 0.0);
        assert!(l2(&s, &wl) <= 1e-5 * l2(&s, &xf));

        let (wp, _) =
            vector_paralinearize(&cfg, &spec, &s, &Product, &f, &[Slot::Value, Slot::Field(0)], params).unwrap();
        let d = decompose_product(&cfg, &spec, &s, &f, &xf).unwrap();
        assert!(l2(&s, &sub(&wp, &d.rest)) <= 1e-5 * d.scale);
    }

    #[test]
    fn composition_constant_is_finite() {
        let (s, spec, _) = setup(32);
        let r = composition_probe(&spec, &s, &Nonlinearity::Tanh, 0.6, 2.0, 1).unwrap();
        assert!(r.constant.is_finite() && r.constant > 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn remainder_is_lipschitz_on_bounded_inputs(
            f in proptest::collection::vec(-1.0..1.0f64, 16),
            d in proptest::collection::vec(-1e-3..1e-3f64, 16),
        ) {
            let (s, spec, cfg) = setup(16);
            let g: Vec<f64> = f.iter().zip(&d).map(|(a, b)| a + b).collect();
            let wf = remainder(&cfg, &spec, &s, &Nonlinearity::Sin, &f).unwrap();
            let wg = remainder(&cfg, &spec, &s, &Nonlinearity::Sin, &g).unwrap();
            // sin and its derivative are 1-Lipschitz; the slack covers the paraproduct's operator norm.
            prop_assert!(l2(&s, &sub(&wf, &wg)) <= 50.0 * l2(&s, &sub(&f, &g)));
        }
    }
}
