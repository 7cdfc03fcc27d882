//! Compressed sparse row operators acting on grid functions.

use nalgebra::DMatrix;

#[derive(Clone, Debug, PartialEq)]
pub struct SparseOp {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseOp {
    /// Builds an n×n operator, summing duplicate entries and dropping exact zeros.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0usize; n + 1];
        let mut indices = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        let mut rows = Vec::with_capacity(sorted.len());
        for (r, c, v) in sorted {
            assert!(r < n && c < n, "triplet ({r}, {c}) outside {n}x{n}");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                values.push(v);
                rows.push(r);
                last = Some((r, c));
            }
        }
        let mut keep_idx = Vec::with_capacity(indices.len());
        let mut keep_val = Vec::with_capacity(values.len());
        for ((r, c), v) in rows.into_iter().zip(indices).zip(values) {
            if v != 0.0 {
                indptr[r + 1] += 1;
                keep_idx.push(c);
                keep_val.push(v);
            }
        }
        for i in 0..n {
            indptr[i + 1] += indptr[i];
        }
        SparseOp {
            n,
            indptr,
            indices: keep_idx,
            values: keep_val,
        }
    }

    pub fn zero(n: usize) -> Self {
        Self::from_triplets(n, &[])
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[i]..self.indptr[i + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.n)
            .flat_map(|i| self.row(i).map(move |(j, v)| (i, j, v)))
            .collect()
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        assert_eq!(u.len(), self.n);
        (0..self.n)
            .map(|i| self.row(i).map(|(j, v)| v * u[j]).sum())
            .collect()
    }

    /// Adjoint in the inner product weighted by `mu`: (A*)_{ij} = mu_j A_{ji} / mu_i.
    pub fn adjoint(&self, mu: &[f64]) -> Self {
        let t: Vec<_> = self
            .triplets()
            .into_iter()
            .map(|(i, j, v)| (j, i, mu[i] * v / mu[j]))
            .collect();
        Self::from_triplets(self.n, &t)
    }

    /// The composition `self ∘ other`.
    pub fn compose(&self, other: &SparseOp) -> Self {
        assert_eq!(self.n, other.n);
        let mut t = Vec::new();
        for i in 0..self.n {
            for (k, a) in self.row(i) {
                for (j, b) in other.row(k) {
                    t.push((i, j, a * b));
                }
            }
        }
        Self::from_triplets(self.n, &t)
    }

    pub fn add(&self, other: &SparseOp) -> Self {
        assert_eq!(self.n, other.n);
        let mut t = self.triplets();
        t.extend(other.triplets());
        Self::from_triplets(self.n, &t)
    }

    pub fn scale(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= c);
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for (i, j, v) in self.triplets() {
            m[(i, j)] += v;
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_sum_and_zeros_drop() {
        let a = SparseOp::from_triplets(3, &[(0, 1, 1.0), (0, 1, 2.0), (2, 0, 0.0), (1, 1, -1.0)]);
        assert_eq!(a.nnz(), 2);
        assert_eq!(a.apply(&[1.0, 2.0, 3.0]), vec![6.0, -2.0, 0.0]);
    }

    #[test]
    fn compose_matches_dense() {
        let a = SparseOp::from_triplets(3, &[(0, 1, 2.0), (1, 2, 3.0), (2, 0, 1.0), (2, 2, -1.0)]);
        let b = SparseOp::from_triplets(3, &[(0, 0, 1.0), (1, 0, 4.0), (2, 1, 5.0)]);
        let dense = a.to_dense() * b.to_dense();
        assert_eq!(a.compose(&b).to_dense(), dense);
    }

    #[test]
    fn weighted_adjoint() {
        let mu = [1.0, 2.0, 4.0];
        let a = SparseOp::from_triplets(3, &[(0, 1, 2.0), (1, 2, 3.0), (2, 0, 1.0)]);
        let adj = a.adjoint(&mu);
        let u = [0.3, -1.0, 2.0];
        let v = [1.5, 0.25, -0.5];
        let ip = |x: &[f64], y: &[f64]| -> f64 { (0..3).map(|i| mu[i] * x[i] * y[i]).sum() };
        assert!((ip(&a.apply(&u), &v) - ip(&u, &adj.apply(&v))).abs() < 1e-14);
    }
}
