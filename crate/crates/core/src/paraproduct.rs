//! Semigroup paraproducts, the Rest term and the product decomposition.
//!
//! With `A_t = φ̃(tL)` and `Γ(u,v) = L(uv) − (Lu)v − u(Lv)`:
//!
//! ```text
//! Π_g(f)    = −∫ ψ̃(tL)[tL A_t f · A_t g] dt/t − ∫ A_t[ψ(tL)f · A_t g] dt/t
//! Rest(f,g) = −∫ ψ̃(tL)[t Γ(A_t f, A_t g)] dt/t
//! ```
//!
//! so that `fg = Π_g(f) + Π_f(g) + Rest(f,g)` whenever f and g have no kernel component.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{check_len, invalid, Error, Result};
use crate::scene::Scene;
use crate::sobolev::{bessel_norm, lp_norm, probe_family, weighted_lp};
use crate::speccalc::{
    make_quadrature_with, node_integral, power, smoothed, MultiplierFamily, QuadratureOptions, QuadratureRule,
    SpectralData,
};

#[derive(Clone, Debug)]
pub struct ParaproductConfig {
    pub fam: MultiplierFamily,
    pub quad: QuadratureRule,
    /// Boundary between the small-t range and the tail, in scene units.
    pub t_split: f64,
}

impl ParaproductConfig {
    pub fn new(spec: &SpectralData, fam: MultiplierFamily, opts: QuadratureOptions) -> Result<Self> {
        Self::from_rule(fam, make_quadrature_with(spec, &fam, opts)?)
    }

    /// Rejects rules whose reconstruction error exceeds the scalar tolerance.
    pub fn from_rule(fam: MultiplierFamily, quad: QuadratureRule) -> Result<Self> {
        if quad.degraded() {
            return Err(Error::Precondition(format!(
                "quadrature reconstruction error {:.3e} exceeds tolerance; raise nodes_per_decade or pad_decades",
                quad.worst_error()
            )));
        }
        Ok(Self::from_rule_unchecked(fam, quad))
    }

    pub fn from_rule_unchecked(fam: MultiplierFamily, quad: QuadratureRule) -> Self {
        ParaproductConfig { fam, quad, t_split: 1.0 }
    }

    /// Number of quadrature nodes below `t_split`.
    pub fn split_index(&self) -> usize {
        self.quad.split_index(self.t_split)
    }
}

fn check_pair(spec: &SpectralData, scene: &Scene, f: &[f64], g: &[f64]) -> Result<()> {
    if scene.len() != spec.len() {
        return Err(Error::Mismatch { expected: spec.len(), found: scene.len() });
    }
    check_len(spec.len(), f)?;
    check_len(spec.len(), g)
}

/// The two integrals of Π_g(f), kept apart.
#[derive(Clone, Debug)]
pub struct PiParts {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

impl PiParts {
    pub fn total(&self) -> Vec<f64> {
        self.first.iter().zip(&self.second).map(|(a, b)| a + b).collect()
    }
}

/// Π_g(f) integrand pieces with twisted weights: the first part uses
/// `outer1(tL)[inner1(tL) f · A_t g]`, the second `outer2(tL)[inner2(tL) f · A_t g]`.
#[allow(clippy::too_many_arguments)]
fn twisted_parts(
    cfg: &ParaproductConfig,
    spec: &SpectralData,
    f: &[f64],
    g: &[f64],
    inner1: impl Fn(f64) -> f64 + Sync + Send,
    outer1: impl Fn(f64) -> f64 + Sync + Send,
    inner2: impl Fn(f64) -> f64 + Sync + Send,
    outer2: impl Fn(f64) -> f64 + Sync + Send,
) -> Result<PiParts> {
    let fam = cfg.fam;
    let (cf, cg) = (spec.coeffs(f)?, spec.coeffs(g)?);
    let all = 0..cfg.quad.len();
    let smooth_g = |ts: &[f64]| smoothed(spec, &cg, ts, |x| fam.phi_tilde(x));
    let first = node_integral(
        spec,
        &cfg.quad,
        all.clone(),
        |ts| smoothed(spec, &cf, ts, &inner1).component_mul(&smooth_g(ts)),
        &outer1,
    );
    let second = node_integral(
        spec,
        &cfg.quad,
        all,
        |ts| smoothed(spec, &cf, ts, &inner2).component_mul(&smooth_g(ts)),
        &outer2,
    );
    Ok(PiParts {
        first: first.into_iter().map(|v| -v).collect(),
        second: second.into_iter().map(|v| -v).collect(),
    })
}

pub fn pi_parts(cfg: &ParaproductConfig, spec: &SpectralData, scene: &Scene, f: &[f64], g: &[f64]) -> Result<PiParts> {
    check_pair(spec, scene, f, g)?;
    let fam = cfg.fam;
    twisted_parts(
        cfg,
        spec,
        f,
        g,
        |x| x * fam.phi_tilde(x),
        |x| fam.psi_tilde(x),
        |x| fam.psi(x),
        |x| fam.phi_tilde(x),
    )
}

/// Π_g(f).
pub fn pi(cfg: &ParaproductConfig, spec: &SpectralData, scene: &Scene, f: &[f64], g: &[f64]) -> Result<Vec<f64>> {
    Ok(pi_parts(cfg, spec, scene, f, g)?.total())
}

/// Rest(f, g) = −∫ ψ̃(tL)[t Γ(A_t f, A_t g)] dt/t.
pub fn rest(cfg: &ParaproductConfig, spec: &SpectralData, scene: &Scene, f: &[f64], g: &[f64]) -> Result<Vec<f64>> {
    check_pair(spec, scene, f, g)?;
    let fam = cfg.fam;
    let n = spec.len();
    let (cf, cg) = (spec.coeffs(f)?, spec.coeffs(g)?);
    let out = node_integral(
        spec,
        &cfg.quad,
        0..cfg.quad.len(),
        |ts| {
            let a = smoothed(spec, &cf, ts, |x| fam.phi_tilde(x));
            let b = smoothed(spec, &cg, ts, |x| fam.phi_tilde(x));
            let mut out = DMatrix::zeros(n, ts.len());
            for (j, &t) in ts.iter().enumerate() {
                let col = j * n..(j + 1) * n;
                let gam = scene.carre_du_champ(&a.as_slice()[col.clone()], &b.as_slice()[col]);
                for i in 0..n {
                    out[(i, j)] = t * gam[i];
                }
            }
            out
        },
        |x| fam.psi_tilde(x),
    );
    Ok(out.into_iter().map(|v| -v).collect())
}

#[derive(Clone, Debug, Serialize)]
pub struct DecompositionResult {
    pub pi_gf: Vec<f64>,
    pub pi_fg: Vec<f64>,
    pub rest: Vec<f64>,
    /// ‖fg − Π_g f − Π_f g − Rest‖₂ for the inputs after kernel projection.
    pub residual: f64,
    /// ‖f‖₂‖g‖₂ of the projected inputs.
    pub scale: f64,
    /// Inputs carried a kernel component that was projected out first.
    pub projected: bool,
}

pub fn decompose_product(
    cfg: &ParaproductConfig,
    spec: &SpectralData,
    scene: &Scene,
    f: &[f64],
    g: &[f64],
) -> Result<DecompositionResult> {
    check_pair(spec, scene, f, g)?;
    let (fp, gp) = (spec.project_out_kernel(f)?, spec.project_out_kernel(g)?);
    let norm = |u: &[f64]| scene.inner(u, u).sqrt();
    let moved = norm(&sub(f, &fp)) + norm(&sub(g, &gp));
    let projected = moved > 1e-12 * (norm(f) + norm(g)).max(f64::MIN_POSITIVE);
    let pi_gf = pi(cfg, spec, scene, &fp, &gp)?;
    let pi_fg = pi(cfg, spec, scene, &gp, &fp)?;
    let r = rest(cfg, spec, scene, &fp, &gp)?;
    let diff: Vec<f64> = (0..spec.len()).map(|i| fp[i] * gp[i] - pi_gf[i] - pi_fg[i] - r[i]).collect();
    Ok(DecompositionResult {
        residual: norm(&diff),
        scale: norm(&fp) * norm(&gp),
        pi_gf,
        pi_fg,
        rest: r,
        projected,
    })
}

pub(crate) fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn check_alpha(cfg: &ParaproductConfig, alpha: f64) -> Result<()> {
    let cap = cfg.fam.order() as f64 - 2.0;
    if !(alpha >= 0.0 && alpha < cap) {
        return Err(invalid("alpha", format!("twist must lie in [0, N−2) = [0, {cap}), got {alpha}")));
    }
    Ok(())
}

fn neg_power_psi(fam: MultiplierFamily, alpha: f64) -> impl Fn(f64) -> f64 + Sync + Send {
    move |x| if x == 0.0 { 0.0 } else { x.powf(-alpha) * fam.psi(x) }
}

/// Π̃_b(a) = −∫(tL)^α ψ̃(tL)[(tL)^{1−α} A_t a · A_t b] dt/t − ∫(tL)^α A_t[(tL)^{−α} ψ(tL)a · A_t b] dt/t.
pub fn pi_twisted_parts(
    cfg: &ParaproductConfig,
    spec: &SpectralData,
    scene: &Scene,
    alpha: f64,
    a: &[f64],
    b: &[f64],
) -> Result<PiParts> {
    check_pair(spec, scene, a, b)?;
    check_alpha(cfg, alpha)?;
    let fam = cfg.fam;
    twisted_parts(
        cfg,
        spec,
        a,
        b,
        move |x| power(x, 1.0 - alpha) * fam.phi_tilde(x),
        move |x| power(x, alpha) * fam.psi_tilde(x),
        neg_power_psi(fam, alpha),
        move |x| power(x, alpha) * fam.phi_tilde(x),
    )
}

pub fn pi_twisted(
    cfg: &ParaproductConfig,
    spec: &SpectralData,
    scene: &Scene,
    alpha: f64,
    a: &[f64],
    b: &[f64],
) -> Result<Vec<f64>> {
    Ok(pi_twisted_parts(cfg, spec, scene, alpha, a, b)?.total())
}

#[derive(Clone, Debug, Serialize)]
pub struct StructuralIdentity {
    pub beta: f64,
    /// ‖L^β Π²_g(f) − Π̄²_g(L^β f)‖₂.
    pub residual: f64,
    /// ‖L^β f‖₂ ‖g‖_∞.
    pub scale: f64,
}

/// Compares L^β applied to the second part of Π_g(f) against the second part
/// of the twisted paraproduct applied to L^β f.
pub fn structural_identity(
    cfg: &ParaproductConfig,
    spec: &SpectralData,
    scene: &Scene,
    beta: f64,
    f: &[f64],
    g: &[f64],
) -> Result<StructuralIdentity> {
    let lb = |u: &[f64]| spec.apply_fn(|l| power(l, beta), u);
    let lhs = lb(&pi_parts(cfg, spec, scene, f, g)?.second)?;
    let lbf = lb(f)?;
    let rhs = pi_twisted_parts(cfg, spec, scene, beta, &lbf, g)?.second;
    let d = sub(&lhs, &rhs);
    Ok(StructuralIdentity {
        beta,
        residual: scene.inner(&d, &d).sqrt(),
        scale: scene.inner(&lbf, &lbf).sqrt() * weighted_lp(scene.mu(), g, f64::INFINITY),
    })
}

/// 50 deterministic (f, g) pairs from the probe family; with `rough`, every g
/// is replaced by seeded random signs.
pub fn probe_pairs(spec: &SpectralData, decay: f64, seed: u64, rough: bool) -> Vec<(Vec<f64>, Vec<f64>)> {
    let fam = probe_family(spec, decay, seed).functions;
    let m = fam.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    (0..m)
        .map(|i| {
            let g = if rough {
                (0..spec.len()).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect()
            } else {
                fam[(7 * i + 3) % m].clone()
            };
            (fam[i].clone(), g)
        })
        .collect()
}

fn target_exponent(p: f64, q: f64) -> Result<f64> {
    if !(p > 1.0 && q > 1.0) {
        return Err(invalid("p, q", format!("exponents must exceed 1, got p = {p}, q = {q}")));
    }
    let inv = 1.0 / p + 1.0 / q;
    if !(inv > 0.0 && inv < 1.0) {
        return Err(invalid("p, q", format!("need 1/p + 1/q in (0, 1), got {inv}")));
    }
    Ok(1.0 / inv)
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundReport {
    pub scene: String,
    pub n: usize,
    pub s: f64,
    pub p: f64,
    pub q: f64,
    pub r: f64,
    /// Largest ‖Π_g f‖ / (‖f‖‖g‖) over the pairs.
    pub constant: f64,
    /// Largest relative structural-identity residual, Sobolev probe only.
    pub identity_residual: Option<f64>,
}

/// max ‖Π_g f‖_r / (‖f‖_p ‖g‖_q) with 1/r = 1/p + 1/q.
pub fn lebesgue_bound_probe(
    cfg: &ParaproductConfig,
    spec: &SpectralData,
    scene: &Scene,
    p: f64,
    q: f64,
    pairs: &[(Vec<f64>, Vec<f64>)],
) -> Result<BoundReport> {
    let r = target_exponent(p, q)?;
    let ratios: Vec<f64> = pairs
        .par_iter()
        .map(|(f, g)| -> Result<f64> {
            let den = lp_norm(scene, f, p)? * lp_norm(scene, g, q)?;
            let num = lp_norm(scene, &pi(cfg, spec, scene, f, g)?, r)?;
            Ok(if den > 0.0 { num / den } else { 0.0 })
        })
        .collect::<Result<_>>()?;
    Ok(BoundReport {
        scene: scene.kind().name().into(),
        n: scene.len(),
        s: 0.0,
        p,
        q,
        r,
        constant: ratios.into_iter().fold(0.0, f64::max),
        identity_residual: None,
    })
}

/// max ‖Π_g f‖_{W^{s,r}} / (‖f‖_{W^{s,p}} ‖g‖_q), with the structural identity
/// at β = s/2 checked on every pair.
#[allow(clippy::too_many_arguments)]
pub fn sobolev_bound_probe(
    cfg: &ParaproductConfig,
    spec: &SpectralData,
    scene: &Scene,
    s: f64,
    p: f64,
    q: f64,
    pairs: &[(Vec<f64>, Vec<f64>)],
) -> Result<BoundReport> {
    let cap = 2.0 * cfg.fam.order() as f64 - 4.0;
    if !(s > 0.0 && s < cap) {
        return Err(invalid("s", format!("regularity must lie in (0, 2N−4) = (0, {cap}), got {s}")));
    }
    let r = target_exponent(p, q)?;
    let rows: Vec<(f64, f64)> = pairs
        .par_iter()
        .map(|(f, g)| -> Result<(f64, f64)> {
            let den = bessel_norm(spec, scene, f, s, p)? * lp_norm(scene, g, q)?;
            let num = bessel_norm(spec, scene, &pi(cfg, spec, scene, f, g)?, s, r)?;
            let id = structural_identity(cfg, spec, scene, 0.5 * s, f, g)?;
            let rel = if id.scale > 0.0 { id.residual / id.scale } else { 0.0 };
            Ok((if den > 0.0 { num / den } else { 0.0 }, rel))
        })
        .collect::<Result<_>>()?;
    Ok(BoundReport {
        scene: scene.kind().name().into(),
        n: scene.len(),
        s,
        p,
        q,
        r,
        constant: rows.iter().map(|r| r.0).fold(0.0, f64::max),
        identity_residual: Some(rows.iter().map(|r| r.1).fold(0.0, f64::max)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::speccalc::{eigendecompose, make_quadrature};
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};

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

    #[test]
    fn constants_are_annihilated() {
        let (s, spec, cfg) = setup(32);
        let f = rnd(&spec, 1);
        let c = vec![2.5; 32];
        assert!(pi(&cfg, &spec, &s, &c, &f).unwrap().iter().all(|v| v.abs() < 1e-12));
        assert!(rest(&cfg, &spec, &s, &c, &f).unwrap().iter().all(|v| v.abs() < 1e-12));
        assert!(rest(&cfg, &spec, &s, &f, &c).unwrap().iter().all(|v| v.abs() < 1e-12));
        assert!(pi_twisted(&cfg, &spec, &s, 0.7, &c, &f).unwrap().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn constant_symbol_reproduces_scaling() {
        let (s, spec, cfg) = setup(64);
        let f = rnd(&spec, 2);
        let c = vec![-1.75; 64];
        let scaled: Vec<f64> = f.iter().map(|v| -1.75 * v).collect();
        let d = sub(&pi(&cfg, &spec, &s, &f, &c).unwrap(), &scaled);
        assert!(l2(&s, &d) <= 1e-8 * l2(&s, &scaled));
        for alpha in [0.3, 1.0, 2.5] {
            let d = sub(&pi_twisted(&cfg, &spec, &s, alpha, &f, &c).unwrap(), &scaled);
            assert!(l2(&s, &d) <= 1e-8 * l2(&s, &scaled), "alpha {alpha}");
        }
    }

    #[test]
    fn zero_twist_is_the_paraproduct() {
        let (s, spec, cfg) = setup(32);
        let (f, g) = (rnd(&spec, 3), rnd(&spec, 4));
        let a = pi(&cfg, &spec, &s, &f, &g).unwrap();
        let b = pi_twisted(&cfg, &spec, &s, 0.0, &f, &g).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12));
        assert!(pi_twisted(&cfg, &spec, &s, 6.0, &f, &g).is_err());
    }

    #[test]
    fn decomposition_on_eigenvector_pair() {
        let (s, spec, cfg) = setup(64);
        let (f, g) = (spec.eigenvector(1), spec.eigenvector(2));
        let d = decompose_product(&cfg, &spec, &s, &f, &g).unwrap();
        assert!(!d.projected);
        assert!(d.residual <= 1e-5 * d.scale, "{}", d.residual);
        let z = decompose_product(&cfg, &spec, &s, &f, &vec![0.0; 64]).unwrap();
        assert!(z.pi_gf.iter().chain(&z.pi_fg).chain(&z.rest).all(|v| *v == 0.0));
        let shifted: Vec<f64> = f.iter().map(|v| v + 1.0).collect();
        assert!(decompose_product(&cfg, &spec, &s, &shifted, &g).unwrap().projected);
    }

    #[test]
    fn residual_shrinks_with_finer_rule() {
        let s = Scene::circle(64).unwrap();
        let spec = eigendecompose(&s).unwrap();
        let fam = MultiplierFamily::default();
        let (f, g) = (rnd(&spec, 5), rnd(&spec, 6));
        let res = |npd| {
            let cfg = ParaproductConfig::from_rule_unchecked(fam, make_quadrature(&spec, &fam, npd, 4.0).unwrap());
            decompose_product(&cfg, &spec, &s, &f, &g).unwrap().residual
        };
        assert!(res(4) > res(8));
        assert!(res(8) > res(16));
    }

    #[test]
    fn single_modes_match_scalar_oracle() {
        // With f = g = e_λ only the second integral has a kernel component:
        // ⟨Π_g f, 1⟩ = −Σ w ψ(tλ) φ̃(tλ), which tends to 1/2.
        let (s, spec, cfg) = setup(32);
        let (a, b) = (spec.eigenvector(3), spec.eigenvector(3));
        let lam = spec.eigenvalues()[3];
        let parts = pi_parts(&cfg, &spec, &s, &a, &b).unwrap();
        let mean_first = s.mean(&parts.first);
        let mean_second = s.mean(&parts.second) * s.total_measure();
        let fam = cfg.fam;
        let oracle: f64 = -cfg
            .quad
            .nodes()
            .iter()
            .zip(cfg.quad.weights())
            .map(|(t, w)| w * fam.psi(t * lam) * fam.phi_tilde(t * lam))
            .sum::<f64>();
        assert!(mean_first.abs() < 1e-12);
        assert!((mean_second - oracle).abs() < 1e-10, "{mean_second} vs {oracle}");
        assert!((oracle - 0.5).abs() < 1e-8);
    }

    #[test]
    fn structural_identity_is_tight() {
        let (s, spec, cfg) = setup(64);
        let (f, g) = (rnd(&spec, 7), rnd(&spec, 8));
        let id = structural_identity(&cfg, &spec, &s, 0.5, &f, &g).unwrap();
        assert!(id.residual <= 1e-8 * id.scale);
    }

    #[test]
    fn bound_ratios_are_scale_invariant() {
        let (s, spec, cfg) = setup(32);
        let pairs: Vec<_> = probe_pairs(&spec, 0.5, 9, false).into_iter().take(6).collect();
        let scaled: Vec<_> = pairs
            .iter()
            .map(|(f, g)| (f.iter().map(|v| 3.0 * v).collect(), g.iter().map(|v| -0.5 * v).collect()))
            .collect();
        let a = lebesgue_bound_probe(&cfg, &spec, &s, 4.0, 4.0, &pairs).unwrap();
        let b = lebesgue_bound_probe(&cfg, &spec, &s, 4.0, 4.0, &scaled).unwrap();
        assert!((a.constant - b.constant).abs() < 1e-10 * a.constant);
        assert_eq!(a.r, 2.0);
        assert!(lebesgue_bound_probe(&cfg, &spec, &s, 1.5, 2.0, &pairs).is_err());
        assert!(sobolev_bound_probe(&cfg, &spec, &s, 12.0, 4.0, 4.0, &pairs).is_err());
    }

    #[test]
    fn degraded_rule_is_rejected() {
        let s = Scene::circle(16).unwrap();
        let spec = eigendecompose(&s).unwrap();
        let fam = MultiplierFamily::default();
        let q = make_quadrature(&spec, &fam, 16, 0.0).unwrap();
        assert!(ParaproductConfig::from_rule(fam, q).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn bilinear_and_symmetric(
            f in proptest::collection::vec(-1.0..1.0f64, 16),
            g1 in proptest::collection::vec(-1.0..1.0f64, 16),
            g2 in proptest::collection::vec(-1.0..1.0f64, 16),
        ) {
            let (s, spec, cfg) = setup(16);
            let g: Vec<f64> = g1.iter().zip(&g2).map(|(a, b)| a + b).collect();
            let lhs = pi(&cfg, &spec, &s, &f, &g).unwrap();
            let a = pi(&cfg, &spec, &s, &f, &g1).unwrap();
            let b = pi(&cfg, &spec, &s, &f, &g2).unwrap();
            for i in 0..16 {
                prop_assert!((lhs[i] - a[i] - b[i]).abs() <= 1e-12 * (1.0 + lhs[i].abs()));
            }
            let r1 = rest(&cfg, &spec, &s, &f, &g1).unwrap();
            let r2 = rest(&cfg, &spec, &s, &g1, &f).unwrap();
            prop_assert!(r1.iter().zip(&r2).all(|(x, y)| (x - y).abs() <= 1e-12 * (1.0 + x.abs())));
            let plus: Vec<f64> = f.iter().zip(&g1).map(|(a, b)| a + b).collect();
            let minus = sub(&f, &g1);
            let rp = rest(&cfg, &spec, &s, &plus, &plus).unwrap();
            let rm = rest(&cfg, &spec, &s, &minus, &minus).unwrap();
            for i in 0..16 {
                prop_assert!((rp[i] - rm[i] - 4.0 * r1[i]).abs() <= 1e-10 * (1.0 + rp[i].abs()));
            }
        }

        #[test]
        fn decomposition_holds_on_random_pairs(
            f in proptest::collection::vec(-1.0..1.0f64, 24),
            g in proptest::collection::vec(-1.0..1.0f64, 24),
        ) {
            let (s, spec, cfg) = setup(24);
            let d = decompose_product(&cfg, &spec, &s, &f, &g).unwrap();
            prop_assert!(d.residual <= 1e-5 * d.scale.max(1e-300) + 1e-14);
        }
    }
}
