//! Spectral functional calculus of the sub-Laplacian.
//!
//! `L` is diagonalized in the μ-weighted inner product: with
//! `S = M^{1/2} L M^{−1/2}` symmetric and `S v_i = λ_i v_i`, the eigenbasis is
//! `e_i = M^{−1/2} v_i`. A symbol acts as `b(tL) f = Σ b(tλ_i) ⟨f, e_i⟩_μ e_i`.

mod multiplier;
mod quadrature;

pub use multiplier::{eval_multiplier, power, upper_gamma_q, Multiplier, MultiplierFamily, DEFAULT_ORDER};
pub use quadrature::{QuadratureOptions, QuadratureRule, QUAD_TOL};

use std::io::{Read, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{check_len, invalid, Error, Result};
use crate::scene::{symmetric_frame, Scene};

pub const DEFAULT_CAP: usize = 2048;
/// Eigenvalues smaller in magnitude than this fraction of λ_max are treated as exact zeros.
pub const KERNEL_TOL: f64 = 1e-10;
const LEVEL_TOL: f64 = 1e-8;
/// Quadrature nodes handled per parallel task; fixed so sums do not depend on the worker count.
pub(crate) const NODE_CHUNK: usize = 16;

#[derive(Clone, Debug)]
pub struct SpectralData {
    eigenvalues: Vec<f64>,
    basis: DMatrix<f64>,
    analysis: DMatrix<f64>,
    mu: Vec<f64>,
    kernel_dim: usize,
    levels: Vec<Range<usize>>,
    scene_hash: String,
}

pub fn eigendecompose(scene: &Scene) -> Result<SpectralData> {
    eigendecompose_with_cap(scene, DEFAULT_CAP)
}

pub fn eigendecompose_with_cap(scene: &Scene, cap: usize) -> Result<SpectralData> {
    let n = scene.len();
    if n > cap {
        return Err(Error::SizeCap { n, cap });
    }
    let mut s = symmetric_frame(scene.laplacian(), scene.mu());
    let st = s.transpose();
    s = (s + st) * 0.5;
    let eig = SymmetricEigen::new(s);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut basis = DMatrix::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        let v = eig.eigenvectors.column(i);
        // Sign convention: the entry of largest magnitude is positive.
        let pivot = (0..n).max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs())).unwrap_or(0);
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n {
            basis[(r, col)] = sign * v[r] / scene.mu()[r].sqrt();
        }
    }
    SpectralData::assemble(&mut eigenvalues, basis, scene.mu().to_vec(), scene.content_hash())
}

impl SpectralData {
    fn assemble(eigenvalues: &mut [f64], basis: DMatrix<f64>, mu: Vec<f64>, scene_hash: String) -> Result<Self> {
        let n = mu.len();
        let lmax = eigenvalues.iter().fold(0.0_f64, |a, &b| a.max(b));
        let mut kernel_dim = 0;
        for l in eigenvalues.iter_mut() {
            if l.abs() < KERNEL_TOL * lmax {
                *l = 0.0;
                kernel_dim += 1;
            }
        }
        let mut analysis = basis.transpose();
        for c in 0..n {
            for r in 0..n {
                analysis[(r, c)] *= mu[c];
            }
        }
        let mut levels: Vec<Range<usize>> = Vec::new();
        for i in kernel_dim..n {
            match levels.last_mut() {
                Some(last) if eigenvalues[i] - eigenvalues[last.start] <= LEVEL_TOL * lmax => last.end = i + 1,
                _ => levels.push(i..i + 1),
            }
        }
        Ok(SpectralData {
            eigenvalues: eigenvalues.to_vec(),
            basis,
            analysis,
            mu,
            kernel_dim,
            levels,
            scene_hash,
        })
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn kernel_dim(&self) -> usize {
        self.kernel_dim
    }

    pub fn scene_hash(&self) -> &str {
        &self.scene_hash
    }

    pub fn lambda_max(&self) -> f64 {
        *self.eigenvalues.last().unwrap_or(&0.0)
    }

    pub fn lambda_min_pos(&self) -> Option<f64> {
        self.eigenvalues.get(self.kernel_dim).copied()
    }

    /// Eigenbasis as columns of an n×n matrix.
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn eigenvector(&self, i: usize) -> Vec<f64> {
        self.basis.column(i).iter().copied().collect()
    }

    /// Number of distinct nonzero eigenvalues.
    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    /// Index range of the m-th distinct nonzero eigenvalue (m ≥ 1).
    pub fn level(&self, m: usize) -> Option<Range<usize>> {
        m.checked_sub(1).and_then(|i| self.levels.get(i).cloned())
    }

    /// First eigenvector of the m-th distinct nonzero eigenvalue; on the circle
    /// this is a Fourier mode of frequency m.
    pub fn level_vector(&self, m: usize) -> Option<Vec<f64>> {
        self.level(m).map(|r| self.eigenvector(r.start))
    }

    pub fn coeffs(&self, f: &[f64]) -> Result<DVector<f64>> {
        check_len(self.len(), f)?;
        Ok(&self.analysis * DVector::from_column_slice(f))
    }

    pub fn synthesize(&self, c: &DVector<f64>) -> Vec<f64> {
        (&self.basis * c).iter().copied().collect()
    }

    pub(crate) fn synthesize_cols(&self, c: &DMatrix<f64>) -> DMatrix<f64> {
        &self.basis * c
    }

    pub(crate) fn analyze_cols(&self, p: &DMatrix<f64>) -> DMatrix<f64> {
        &self.analysis * p
    }

    /// Applies λ ↦ b(λ) to f.
    pub fn apply_fn(&self, b: impl Fn(f64) -> f64, f: &[f64]) -> Result<Vec<f64>> {
        let mut c = self.coeffs(f)?;
        for (ci, &l) in c.iter_mut().zip(&self.eigenvalues) {
            *ci *= b(l);
        }
        Ok(self.synthesize(&c))
    }

    /// Orthogonal projection onto ker L.
    pub fn kernel_projection(&self, f: &[f64]) -> Result<Vec<f64>> {
        let k = self.kernel_dim;
        let mut c = self.coeffs(f)?;
        c.rows_mut(k, self.len() - k).fill(0.0);
        Ok(self.synthesize(&c))
    }

    /// f minus its kernel projection.
    pub fn project_out_kernel(&self, f: &[f64]) -> Result<Vec<f64>> {
        let p = self.kernel_projection(f)?;
        Ok(f.iter().zip(p).map(|(a, b)| a - b).collect())
    }

    /// Columns `b(t_j λ_i) c_i` for the nodes t_j in `ts`.
    pub(crate) fn modulate(&self, c: &DVector<f64>, ts: &[f64], b: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let n = self.len();
        DMatrix::from_fn(n, ts.len(), |i, j| c[i] * b(ts[j] * self.eigenvalues[i]))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        out.write_all(b"PLSPEC01")?;
        let hash = self.scene_hash.as_bytes();
        out.write_all(&(hash.len() as u64).to_le_bytes())?;
        out.write_all(hash)?;
        out.write_all(&(self.len() as u64).to_le_bytes())?;
        for v in self.eigenvalues.iter().chain(self.basis.iter()) {
            out.write_all(&v.to_le_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    /// Loads a sidecar written by [`SpectralData::save`]; returns `None` when it
    /// belongs to a different scene.
    pub fn load(path: &Path, scene: &Scene) -> Result<Option<Self>> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        let bad = || Error::Precondition(format!("{} is not a spectral sidecar", path.display()));
        let take = |buf: &[u8], at: &mut usize, len: usize| -> Result<Vec<u8>> {
            let s = buf.get(*at..*at + len).ok_or_else(bad)?.to_vec();
            *at += len;
            Ok(s)
        };
        let mut at = 0;
        if take(&buf, &mut at, 8)? != b"PLSPEC01" {
            return Err(bad());
        }
        let u64_at = |buf: &[u8], at: &mut usize| -> Result<usize> {
            let b = take(buf, at, 8)?;
            Ok(u64::from_le_bytes(b.try_into().map_err(|_| bad())?) as usize)
        };
        let hlen = u64_at(&buf, &mut at)?;
        let hash = String::from_utf8(take(&buf, &mut at, hlen)?).map_err(|_| bad())?;
        if hash != scene.content_hash() {
            return Ok(None);
        }
        let n = u64_at(&buf, &mut at)?;
        if n != scene.len() {
            return Ok(None);
        }
        let mut vals = Vec::with_capacity(n + n * n);
        for _ in 0..n + n * n {
            let b = take(&buf, &mut at, 8)?;
            vals.push(f64::from_le_bytes(b.try_into().map_err(|_| bad())?));
        }
        let mut eigenvalues = vals[..n].to_vec();
        let basis = DMatrix::from_column_slice(n, n, &vals[n..]);
        Self::assemble(&mut eigenvalues, basis, scene.mu().to_vec(), hash).map(Some)
    }
}

/// Eigendecomposition through a sidecar file in `dir`, named by the scene hash.
pub fn eigendecompose_cached(scene: &Scene, dir: &Path) -> Result<SpectralData> {
    let path: PathBuf = dir.join(format!("{}.spec", &scene.content_hash()[..16]));
    if path.exists() {
        if let Some(s) = SpectralData::load(&path, scene)? {
            return Ok(s);
        }
    }
    let spec = eigendecompose(scene)?;
    std::fs::create_dir_all(dir)?;
    spec.save(&path)?;
    Ok(spec)
}

pub fn apply_multiplier(
    spec: &SpectralData,
    fam: &MultiplierFamily,
    which: &Multiplier,
    t: f64,
    f: &[f64],
) -> Result<Vec<f64>> {
    if !(t > 0.0) {
        return Err(invalid("t", format!("scale must be positive, got {t}")));
    }
    if let Multiplier::Power(s) = which {
        if !(*s >= 0.0) {
            return Err(invalid("s", format!("power must be nonnegative, got {s}")));
        }
    }
    spec.apply_fn(|l| which.value(fam, t * l), f)
}

pub fn make_quadrature(
    spec: &SpectralData,
    fam: &MultiplierFamily,
    nodes_per_decade: usize,
    pad_decades: f64,
) -> Result<QuadratureRule> {
    make_quadrature_with(
        spec,
        fam,
        QuadratureOptions {
            nodes_per_decade,
            pad_decades,
            points_per_cell: 1,
        },
    )
}

pub fn make_quadrature_with(spec: &SpectralData, fam: &MultiplierFamily, opts: QuadratureOptions) -> Result<QuadratureRule> {
    let lmin = spec
        .lambda_min_pos()
        .ok_or_else(|| Error::Precondition("L has no positive eigenvalue".into()))?;
    let levels: Vec<f64> = spec.levels.iter().map(|r| spec.eigenvalues[r.start]).collect();
    QuadratureRule::for_levels(fam, lmin, spec.lambda_max(), &levels, opts)
}

/// Sums `body` over the node range in fixed-size chunks, merging chunk results
/// in ascending order so the result is independent of the worker count.
pub(crate) fn sum_over_nodes<F>(n: usize, nodes: Range<usize>, body: F) -> DVector<f64>
where
    F: Fn(Range<usize>) -> DVector<f64> + Sync + Send,
{
    let chunks: Vec<Range<usize>> = nodes
        .clone()
        .step_by(NODE_CHUNK)
        .map(|s| s..(s + NODE_CHUNK).min(nodes.end))
        .collect();
    let parts: Vec<DVector<f64>> = chunks.into_par_iter().map(body).collect();
    parts.into_iter().fold(DVector::zeros(n), |acc, p| acc + p)
}

/// Smoothed copies `b(t_j L) f` as columns, from the coefficients of f.
pub(crate) fn smoothed(spec: &SpectralData, c: &DVector<f64>, ts: &[f64], b: impl Fn(f64) -> f64) -> DMatrix<f64> {
    spec.synthesize_cols(&spec.modulate(c, ts, b))
}

/// Σ_{j ∈ nodes} w_j outer(t_j L)[inner(t_j)], where `inner` returns one physical
/// column per node of the chunk it is handed.
pub(crate) fn node_integral<I, O>(spec: &SpectralData, quad: &QuadratureRule, nodes: Range<usize>, inner: I, outer: O) -> Vec<f64>
where
    I: Fn(&[f64]) -> DMatrix<f64> + Sync + Send,
    O: Fn(f64) -> f64 + Sync + Send,
{
    let n = spec.len();
    let c = sum_over_nodes(n, nodes, |r| {
        let ts = &quad.nodes()[r.clone()];
        let ws = &quad.weights()[r];
        let q = spec.analyze_cols(&inner(ts));
        let mut acc = DVector::zeros(n);
        for (j, (&t, &w)) in ts.iter().zip(ws).enumerate() {
            for i in 0..n {
                acc[i] += w * outer(t * spec.eigenvalues[i]) * q[(i, j)];
            }
        }
        acc
    });
    spec.synthesize(&c)
}

/// −Σ_j w_j ψ(t_j L) f.
pub fn reconstruct(spec: &SpectralData, fam: &MultiplierFamily, quad: &QuadratureRule, f: &[f64]) -> Result<Vec<f64>> {
    spec.apply_fn(
        |l| if l == 0.0 { 0.0 } else { quad.identity_factor(fam, l) },
        f,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SquareVariant {
    Psi,
    Grad,
}

/// Pointwise (Σ_j w_j |ψ(t_j L) f|²)^{1/2}, or with |t_j^{1/2} ∇ φ̃(t_j L) f|²
/// for the gradient variant.
pub fn square_function(
    spec: &SpectralData,
    scene: &Scene,
    fam: &MultiplierFamily,
    quad: &QuadratureRule,
    f: &[f64],
    variant: SquareVariant,
) -> Result<Vec<f64>> {
    let c = spec.coeffs(f)?;
    let n = spec.len();
    let acc = sum_over_nodes(n, 0..quad.len(), |r| {
        let ts = &quad.nodes()[r.clone()];
        let ws = &quad.weights()[r];
        let mut acc = DVector::zeros(n);
        match variant {
            SquareVariant::Psi => {
                let p = spec.synthesize_cols(&spec.modulate(&c, ts, |x| fam.psi(x)));
                for j in 0..ts.len() {
                    for i in 0..n {
                        acc[i] += ws[j] * p[(i, j)] * p[(i, j)];
                    }
                }
            }
            SquareVariant::Grad => {
                let p = spec.synthesize_cols(&spec.modulate(&c, ts, |x| fam.phi_tilde(x)));
                for j in 0..ts.len() {
                    let col: Vec<f64> = p.column(j).iter().copied().collect();
                    let g = scene.gradient_magnitude(&col);
                    for i in 0..n {
                        acc[i] += ws[j] * ts[j] * g[i] * g[i];
                    }
                }
            }
        }
        acc
    });
    Ok(acc.iter().map(|v| v.sqrt()).collect())
}

#[derive(Clone, Debug, Serialize)]
pub struct KernelBoundPoint {
    pub t: f64,
    pub constant: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct KernelBoundReport {
    pub dimension: f64,
    pub growth_exponent: f64,
    pub delta: f64,
    pub points: Vec<KernelBoundPoint>,
}

/// Smallest C(t) with |a_t(x,y)| ≤ C / μ(B(x,√t)) · (1 + d(x,y)/√t)^{−d−2N−δ},
/// where a_t is the kernel of e^{−tL} against μ.
pub fn kernel_bound_probe(
    spec: &SpectralData,
    scene: &Scene,
    ts: &[f64],
    dimension: f64,
    growth_exponent: f64,
    delta: f64,
) -> Result<KernelBoundReport> {
    let n = spec.len();
    if scene.len() != n {
        return Err(Error::Mismatch { expected: n, found: scene.len() });
    }
    let exponent = dimension + 2.0 * growth_exponent + delta;
    let points = ts
        .par_iter()
        .map(|&t| {
            let mut scaled = spec.basis.clone();
            for (j, &l) in spec.eigenvalues.iter().enumerate() {
                scaled.column_mut(j).scale_mut((-t * l).exp());
            }
            let kernel = &scaled * spec.basis.transpose();
            let rt = t.sqrt();
            let mut c: f64 = 0.0;
            for x in 0..n {
                let row = scene.metric_row(x);
                let vol: f64 = row.iter().zip(scene.mu()).filter(|(&d, _)| d < rt).map(|(_, m)| m).sum();
                let vol = vol.max(scene.mu()[x]);
                for y in 0..n {
                    if row[y].is_finite() {
                        let w = vol * (1.0 + row[y] / rt).powf(exponent);
                        c = c.max(kernel[(x, y)].abs() * w);
                    }
                }
            }
            KernelBoundPoint { t, constant: c }
        })
        .collect();
    Ok(KernelBoundReport {
        dimension,
        growth_exponent,
        delta,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{GraphData, Scene};
    use proptest::prelude::*;

    #[test]
    fn circle_eight_closed_form() {
        let s = Scene::circle(8).unwrap();
        let spec = eigendecompose(&s).unwrap();
        let h = s.h();
        let mut expected: Vec<f64> = (0..8)
            .map(|k| 2.0 / (h * h) * (1.0 - (2.0 * std::f64::consts::PI * k as f64 / 8.0).cos()))
            .collect();
        expected.sort_by(f64::total_cmp);
        for (a, b) in spec.eigenvalues().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12 * expected[7], "{a} vs {b}");
        }
        assert_eq!(spec.kernel_dim(), 1);
        assert_eq!(spec.level_count(), 4);
        assert_eq!(spec.level(1).unwrap().len(), 2);
        assert_eq!(spec.level(4).unwrap().len(), 1);
    }

    #[test]
    fn orthonormal_and_eigen_equation() {
        let s = Scene::torus2(5, 6).unwrap();
        let spec = eigendecompose(&s).unwrap();
        let n = s.len();
        for i in 0..n {
            let ei = spec.eigenvector(i);
            let lei = s.apply_laplacian(&ei).unwrap();
            for r in 0..n {
                assert!((lei[r] - spec.eigenvalues()[i] * ei[r]).abs() <= 1e-8 * spec.lambda_max());
            }
            for j in 0..n {
                let ip = s.inner(&ei, &spec.eigenvector(j));
                assert!((ip - if i == j { 1.0 } else { 0.0 }).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn two_components_two_zero_modes() {
        // Two disjoint 5-cycles with centered differences.
        let mut t = Vec::new();
        for base in [0, 5] {
            for i in 0..5 {
                t.push((base + i, base + (i + 1) % 5, 0.5));
                t.push((base + i, base + (i + 4) % 5, -0.5));
            }
        }
        let s = Scene::graph(GraphData { mu: vec![1.0; 10], h: 1.0, fields: vec![t], energy: None }).unwrap();
        assert_eq!(eigendecompose(&s).unwrap().kernel_dim(), 2);
    }

    #[test]
    fn cap_is_enforced() {
        let s = Scene::circle(40).unwrap();
        assert!(matches!(eigendecompose_with_cap(&s, 32), Err(Error::SizeCap { .. })));
    }

    #[test]
    fn multiplier_actions() {
        let s = Scene::circle(16).unwrap();
        let spec = eigendecompose(&s).unwrap();
        let fam = MultiplierFamily::default();
        let e = spec.eigenvector(5);
        let lam = spec.eigenvalues()[5];
        let out = apply_multiplier(&spec, &fam, &Multiplier::PhiTilde, 0.3, &e).unwrap();
        let k = fam.phi_tilde(0.3 * lam);
        assert!(out.iter().zip(&e).all(|(a, b)| (a - k * b).abs() < 1e-13));
        let id = apply_multiplier(&spec, &fam, &Multiplier::Custom(std::sync::Arc::new(|_| 1.0)), 1.0, &e).unwrap();
        assert!(id.iter().zip(&e).all(|(a, b)| (a - b).abs() < 1e-13));
        let f = spec.project_out_kernel(&(0..16).map(|i| (i as f64).sin() + 0.3).collect::<Vec<_>>()).unwrap();
        let t = 50.0 / spec.lambda_min_pos().unwrap();
        let heat = apply_multiplier(&spec, &fam, &Multiplier::Heat, t, &f).unwrap();
        assert!(heat.iter().all(|v| v.abs() < 1e-12));
        assert!(apply_multiplier(&spec, &fam, &Multiplier::Heat, 0.0, &f).is_err());
        assert!(apply_multiplier(&spec, &fam, &Multiplier::Heat, 1.0, &[0.0; 3]).is_err());
    }

    #[test]
    fn sidecar_round_trip() {
        let dir = std::env::temp_dir().join(format!("paralab-spec-{}", std::process::id()));
        let s = Scene::circle(12).unwrap();
        let a = eigendecompose_cached(&s, &dir).unwrap();
        let b = eigendecompose_cached(&s, &dir).unwrap();
        assert_eq!(a.eigenvalues(), b.eigenvalues());
        assert_eq!(a.basis(), b.basis());
        let other = Scene::circle(13).unwrap();
        let path = dir.join(format!("{}.spec", &s.content_hash()[..16]));
        assert!(SpectralData::load(&path, &other).unwrap().is_none());
        let _ = std::fs::remove_dir_all(&dir);
    }

    #[test]
    fn reconstruction_on_eigenvectors_and_constants() {
        let s = Scene::circle(64).unwrap();
        let spec = eigendecompose(&s).unwrap();
        let fam = MultiplierFamily::default();
        let q = make_quadrature(&spec, &fam, 16, 4.0).unwrap();
        assert!(!q.degraded());
        let r = reconstruct(&spec, &fam, &q, &vec![2.0; 64]).unwrap();
        assert!(r.iter().all(|v| v.abs() < 1e-12));
        for i in [1, 9, 40, 63] {
            let e = spec.eigenvector(i);
            let r = reconstruct(&spec, &fam, &q, &e).unwrap();
            let k = q.identity_factor(&fam, spec.eigenvalues()[i]);
            assert!((k - 1.0).abs() < 1e-8);
            assert!(r.iter().zip(&e).all(|(a, b)| (a - k * b).abs() < 1e-12));
        }
    }

    #[test]
    fn square_function_on_eigenvectors() {
        // ∫ψ(u)² du/u for N = 8 by the same independent Simpson oracle as the multiplier tests.
        let fam = MultiplierFamily::default();
        let oracle: f64 = {
            let g = |v: f64| fam.psi(v.exp()).powi(2);
            let steps = 200_000;
            let (a, b) = (-40.0f64, 6.0f64);
            let h = (b - a) / steps as f64;
            (0..=steps)
                .map(|k| {
                    let w = if k == 0 || k == steps { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
                    w * g(a + k as f64 * h)
                })
                .sum::<f64>()
                * h
                / 3.0
        };
        let s = Scene::circle(32).unwrap();
        let spec = eigendecompose(&s).unwrap();
        let q = make_quadrature(&spec, &fam, 16, 4.0).unwrap();
        for i in [1, 7, 31] {
            let e = spec.eigenvector(i);
            let sq = square_function(&spec, &s, &fam, &q, &e, SquareVariant::Psi).unwrap();
            let norm = s.inner(&sq, &sq).sqrt();
            assert!((norm - oracle.sqrt()).abs() < 1e-6, "{norm} vs {}", oracle.sqrt());
        }
        for v in [SquareVariant::Psi, SquareVariant::Grad] {
            let z = square_function(&spec, &s, &fam, &q, &vec![1.5; 32], v).unwrap();
            assert!(z.iter().all(|x| x.abs() < 1e-10));
        }
    }

    #[test]
    fn kernel_bound_is_bounded_on_circle() {
        let s = Scene::circle(64).unwrap();
        let spec = eigendecompose(&s).unwrap();
        let h = s.h();
        let diam = s.diameter();
        let ts: Vec<f64> = (0..12).map(|i| h * h * (diam * diam / (h * h)).powf(i as f64 / 11.0)).collect();
        let rep = kernel_bound_probe(&spec, &s, &ts, 3f64.log2(), 0.0, 1.0).unwrap();
        let cs: Vec<f64> = rep.points.iter().map(|p| p.constant).collect();
        let (lo, hi) = cs.iter().fold((f64::INFINITY, 0.0_f64), |(a, b), &c| (a.min(c), b.max(c)));
        assert!(hi.is_finite() && lo > 0.0 && hi / lo < 20.0, "{cs:?}");
    }

    proptest! {
        #[test]
        fn semigroup_law(f in proptest::collection::vec(-2.0..2.0f64, 24), s in 0.01..2.0f64, t in 0.01..2.0f64) {
            let sc = Scene::circle(24).unwrap();
            let spec = eigendecompose(&sc).unwrap();
            let fam = MultiplierFamily::default();
            let a = apply_multiplier(&spec, &fam, &Multiplier::Heat, t, &f).unwrap();
            let ab = apply_multiplier(&spec, &fam, &Multiplier::Heat, s, &a).unwrap();
            let c = apply_multiplier(&spec, &fam, &Multiplier::Heat, s + t, &f).unwrap();
            let d: f64 = ab.iter().zip(&c).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let nc: f64 = c.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!(d <= 1e-10 * nc.max(1e-300) + 1e-14);
        }

        #[test]
        fn bounded_symbols_contract(f in proptest::collection::vec(-2.0..2.0f64, 20), t in 0.001..10.0f64) {
            let sc = Scene::circle(20).unwrap();
            let spec = eigendecompose(&sc).unwrap();
            let fam = MultiplierFamily::default();
            for m in [Multiplier::Psi, Multiplier::PhiTilde, Multiplier::Heat] {
                let out = apply_multiplier(&spec, &fam, &m, t, &f).unwrap();
                let bound = spec.eigenvalues().iter().map(|&l| m.value(&fam, t * l).abs()).fold(0.0, f64::max);
                prop_assert!(sc.inner(&out, &out).sqrt() <= bound * sc.inner(&f, &f).sqrt() * (1.0 + 1e-12) + 1e-14);
            }
        }
    }
}
