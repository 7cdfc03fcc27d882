//! Bessel–Sobolev scale W^{s,p} = {f : (1+L)^{s/2} f ∈ L^p}, the fractional
//! difference functional S_s^ρ, embeddings and Riesz-transform probes.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{check_len, invalid, Error, Result};
use crate::scene::Scene;
use crate::speccalc::{power, SpectralData};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SobolevParams {
    pub s: f64,
    pub p: f64,
    pub rho: f64,
}

impl SobolevParams {
    pub fn new(s: f64, p: f64, rho: f64) -> Result<Self> {
        if !(s >= 0.0 && s.is_finite()) {
            return Err(invalid("s", format!("regularity must be a finite nonnegative number, got {s}")));
        }
        if !(p > 1.0) {
            return Err(invalid("p", format!("Lebesgue exponent must lie in (1, ∞], got {p}")));
        }
        if !(rho > 0.0 && rho < p.min(2.0)) {
            return Err(invalid("rho", format!("inner exponent must lie in (0, min(2, p)), got {rho}")));
        }
        Ok(SobolevParams { s, p, rho })
    }
}

/// (Σ μ_i |f_i|^p)^{1/p}, or max |f_i| for p = ∞.
pub fn lp_norm(scene: &Scene, f: &[f64], p: f64) -> Result<f64> {
    check_len(scene.len(), f)?;
    if !(p >= 1.0) {
        return Err(invalid("p", format!("exponent must lie in [1, ∞], got {p}")));
    }
    Ok(weighted_lp(scene.mu(), f, p))
}

pub(crate) fn weighted_lp(mu: &[f64], f: &[f64], p: f64) -> f64 {
    if p.is_infinite() {
        f.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
    } else if p == 2.0 {
        mu.iter().zip(f).map(|(m, v)| m * v * v).sum::<f64>().sqrt()
    } else {
        mu.iter().zip(f).map(|(m, v)| m * v.abs().powf(p)).sum::<f64>().powf(1.0 / p)
    }
}

/// ‖(1+L)^{s/2} f‖_p.
pub fn bessel_norm(spec: &SpectralData, scene: &Scene, f: &[f64], s: f64, p: f64) -> Result<f64> {
    let g = spec.apply_fn(|l| (1.0 + l).powf(0.5 * s), f)?;
    lp_norm(scene, &g, p)
}

/// ‖L^{s/2} f‖_p with L^{s/2} zero on ker L.
pub fn homogeneous_norm(spec: &SpectralData, scene: &Scene, f: &[f64], s: f64, p: f64) -> Result<f64> {
    let g = spec.apply_fn(|l| power(l, 0.5 * s), f)?;
    lp_norm(scene, &g, p)
}

#[derive(Clone, Debug, Serialize)]
pub struct NormReport {
    pub scene: String,
    pub n: usize,
    pub s: f64,
    pub p: f64,
    pub lp: f64,
    pub homog: f64,
    pub inhomog: f64,
    /// ‖S_s^ρ f‖_p, defined for s ∈ (0, 1).
    pub sfunc: Option<f64>,
    /// (lp + homog) / inhomog.
    pub equivalence_ratio: f64,
}

pub fn sobolev_norm(spec: &SpectralData, scene: &Scene, f: &[f64], params: SobolevParams) -> Result<NormReport> {
    let lp = lp_norm(scene, f, params.p)?;
    let homog = homogeneous_norm(spec, scene, f, params.s, params.p)?;
    let inhomog = bessel_norm(spec, scene, f, params.s, params.p)?;
    let sfunc = if params.s > 0.0 && params.s < 1.0 {
        let sf = s_functional(scene, f, params, &default_r_grid(scene))?;
        Some(lp_norm(scene, &sf, params.p)?)
    } else {
        None
    };
    Ok(NormReport {
        scene: scene.kind().name().to_string(),
        n: scene.len(),
        s: params.s,
        p: params.p,
        lp,
        homog,
        inhomog,
        sfunc,
        equivalence_ratio: if inhomog > 0.0 { (lp + homog) / inhomog } else { f64::NAN },
    })
}

/// Radii 2^{−j}, j = 0..⌈log₂(1/h)⌉.
pub fn default_r_grid(scene: &Scene) -> Vec<f64> {
    let jmax = (1.0 / scene.h()).log2().ceil().max(0.0) as i32;
    (0..=jmax).map(|j| 0.5f64.powi(j)).collect()
}

/// S_s^ρ f(x) = (Σ_r ln2 · [r^{−s} (⨍_{B(x,r)} |f(y) − f(x)|^ρ)^{1/ρ}]²)^{1/2}
/// over dyadic radii, the discrete form of the dr/r integral on (0, 1].
pub fn s_functional(scene: &Scene, f: &[f64], params: SobolevParams, r_grid: &[f64]) -> Result<Vec<f64>> {
    check_len(scene.len(), f)?;
    if !(params.s > 0.0 && params.s < 1.0) {
        return Err(invalid("s", format!("the difference functional needs s in (0, 1), got {}", params.s)));
    }
    if let Some(&r) = r_grid.iter().find(|&&r| !(r > 0.0)) {
        return Err(invalid("r_grid", format!("radii must be positive, got {r}")));
    }
    let n = scene.len();
    let rho = params.rho;
    let out = (0..n)
        .into_par_iter()
        .map(|x| {
            let row = scene.metric_row(x);
            let mut acc = 0.0;
            for &r in r_grid {
                let (mut num, mut den) = (0.0, 0.0);
                for y in 0..n {
                    if row[y] < r {
                        num += scene.mu()[y] * (f[y] - f[x]).abs().powf(rho);
                        den += scene.mu()[y];
                    }
                }
                let avg = (num / den).powf(1.0 / rho);
                acc += std::f64::consts::LN_2 * (avg / r.powf(params.s)).powi(2);
            }
            acc.sqrt()
        })
        .collect();
    Ok(out)
}

/// Sum of eigenvectors at geometrically spaced levels, Σ_{k=0}^{K} 2^{−k·decay} e_{λ(2^k)}.
/// Levels beyond half of the available distinct eigenvalues are dropped and flagged.
pub fn lacunary(spec: &SpectralData, depth: usize, decay: f64) -> (Vec<f64>, bool) {
    let cap = spec.level_count() / 2;
    let mut f = vec![0.0; spec.len()];
    let mut truncated = false;
    for k in 0..=depth {
        let m = 1usize << k;
        if m > cap {
            truncated = true;
            break;
        }
        let e = spec.level_vector(m).expect("level within range");
        let c = 0.5f64.powf(k as f64 * decay);
        for (a, b) in f.iter_mut().zip(e) {
            *a += c * b;
        }
    }
    (f, truncated)
}

#[derive(Clone, Debug)]
pub struct ProbeFamily {
    pub functions: Vec<Vec<f64>>,
    /// Some lacunary members ran past the resolvable levels.
    pub truncated: bool,
}

/// `count` Gaussian fields from one seeded stream, each with its kernel part removed.
pub fn seeded_mean_zero(spec: &SpectralData, seed: u64, count: usize) -> Result<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let f: Vec<f64> = (0..spec.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
            spec.project_out_kernel(&f)
        })
        .collect()
}

/// 20 lowest nonzero eigenvectors, 20 seeded Gaussian fields and 10 lacunary
/// sums with coefficient decay 2^{−k·decay}.
pub fn probe_family(spec: &SpectralData, decay: f64, seed: u64) -> ProbeFamily {
    let n = spec.len();
    let k0 = spec.kernel_dim();
    let mut functions: Vec<Vec<f64>> = (k0..(k0 + 20).min(n)).map(|i| spec.eigenvector(i)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..20 {
        functions.push((0..n).map(|_| StandardNormal.sample(&mut rng)).collect());
    }
    let mut truncated = false;
    for depth in 1..=10 {
        let (f, t) = lacunary(spec, depth, decay);
        truncated |= t;
        functions.push(f);
    }
    ProbeFamily { functions, truncated }
}

#[derive(Clone, Debug, Serialize)]
pub struct EmbeddingReport {
    pub source: (f64, f64),
    pub target: (f64, f64),
    pub dimension: f64,
    pub max_ratio: f64,
}

/// max over the family of ‖f‖_{W^{t,q}} / ‖f‖_{W^{s,p}}.
pub fn embedding_probe(
    spec: &SpectralData,
    scene: &Scene,
    src: (f64, f64),
    dst: (f64, f64),
    family: &[Vec<f64>],
    dimension: f64,
) -> Result<EmbeddingReport> {
    let ((s, p), (t, q)) = (src, dst);
    let identity = src == dst;
    let lhs = 1.0 / q - t / dimension;
    let rhs = 1.0 / p - s / dimension;
    if !identity && !(lhs > rhs && q >= p && s >= t) {
        return Err(Error::Precondition(format!(
            "embedding W^{{{s},{p}}} -> W^{{{t},{q}}} needs 1/q - t/d > 1/p - s/d with q >= p, s >= t; got {lhs:.4} <= {rhs:.4} (d = {dimension})"
        )));
    }
    let ratios: Vec<f64> = family
        .par_iter()
        .map(|f| -> Result<f64> {
            let den = bessel_norm(spec, scene, f, s, p)?;
            let num = bessel_norm(spec, scene, f, t, q)?;
            Ok(if den > 0.0 { num / den } else { 0.0 })
        })
        .collect::<Result<_>>()?;
    Ok(EmbeddingReport {
        source: src,
        target: dst,
        dimension,
        max_ratio: ratios.into_iter().fold(0.0, f64::max),
    })
}

/// ‖X_I (1+L)^{−|I|/2}‖_{L^p→L^p}: exact largest singular value for p = 2,
/// otherwise the largest ratio over `family`.
pub fn riesz_probe(spec: &SpectralData, scene: &Scene, word: &[usize], p: f64, family: &[Vec<f64>]) -> Result<f64> {
    if word.is_empty() {
        return Err(invalid("word", "multi-index must have length at least 1"));
    }
    let order = word.len() as f64;
    if p == 2.0 {
        let n = spec.len();
        // A = M^{1/2} X_I E (1+Λ)^{−|I|/2}; the operator norm is σ_max(A).
        let mut a = DMatrix::zeros(n, n);
        for j in 0..n {
            let col = scene.apply_word(word, &spec.eigenvector(j))?;
            let scale = (1.0 + spec.eigenvalues()[j]).powf(-0.5 * order);
            for i in 0..n {
                a[(i, j)] = scene.mu()[i].sqrt() * col[i] * scale;
            }
        }
        let gram = a.transpose() * &a;
        let top = SymmetricEigen::new(gram).eigenvalues.iter().fold(0.0_f64, |m, &v| m.max(v));
        return Ok(top.sqrt());
    }
    let ratios: Vec<f64> = family
        .par_iter()
        .map(|f| -> Result<f64> {
            let g = spec.apply_fn(|l| (1.0 + l).powf(-0.5 * order), f)?;
            let xg = scene.apply_word(word, &g)?;
            let den = lp_norm(scene, f, p)?;
            Ok(if den > 0.0 { lp_norm(scene, &xg, p)? / den } else { 0.0 })
        })
        .collect::<Result<_>>()?;
    Ok(ratios.into_iter().fold(0.0, f64::max))
}

#[derive(Clone, Debug, Serialize)]
pub struct HigherOrderReport {
    pub k: usize,
    pub p: f64,
    pub min_ratio: f64,
    pub max_ratio: f64,
}

fn words(fields: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    let mut layer: Vec<Vec<usize>> = vec![vec![]];
    for _ in 0..k {
        layer = layer
            .iter()
            .flat_map(|w| (0..fields).map(move |i| [w.as_slice(), &[i]].concat()))
            .collect();
        out.extend(layer.iter().cloned());
    }
    out
}

/// Two-sided ratio ‖(1+L)^{k/2} f‖_p / (‖f‖_p + Σ_{1≤|I|≤k} ‖X_I f‖_p) over the family.
pub fn higher_order_norm_probe(
    spec: &SpectralData,
    scene: &Scene,
    k: usize,
    p: f64,
    family: &[Vec<f64>],
) -> Result<HigherOrderReport> {
    if !(1..=2).contains(&k) {
        return Err(invalid("k", format!("order must be 1 or 2, got {k}")));
    }
    let ws = words(scene.fields().len(), k);
    let ratios: Vec<f64> = family
        .par_iter()
        .map(|f| -> Result<f64> {
            let lhs = bessel_norm(spec, scene, f, k as f64, p)?;
            let mut rhs = lp_norm(scene, f, p)?;
            for w in &ws {
                rhs += lp_norm(scene, &scene.apply_word(w, f)?, p)?;
            }
            Ok(lhs / rhs)
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .filter(|r| r.is_finite())
        .collect();
    Ok(HigherOrderReport {
        k,
        p,
        min_ratio: ratios.iter().copied().fold(f64::INFINITY, f64::min),
        max_ratio: ratios.iter().copied().fold(0.0, f64::max),
    })
}
