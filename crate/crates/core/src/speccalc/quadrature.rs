//! Log-spaced quadrature for ∫_0^∞ · dt/t.
//!
//! Cells are the intervals [10^{m/npd}, 10^{(m+1)/npd}], so t = 1 is always a
//! cell edge. Each cell carries either its log-midpoint (the default) or a
//! Gauss–Legendre rule in log t.

use serde::Serialize;

use super::multiplier::MultiplierFamily;
use crate::error::{invalid, Result};

/// Scalar reconstruction tolerance at default resolution.
pub const QUAD_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct QuadratureOptions {
    pub nodes_per_decade: usize,
    pub pad_decades: f64,
    /// 1 gives the midpoint rule; 2..=5 gives Gauss–Legendre per cell.
    pub points_per_cell: usize,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        QuadratureOptions {
            nodes_per_decade: 16,
            pad_decades: 4.0,
            points_per_cell: 1,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    t_min: f64,
    t_max: f64,
    options: QuadratureOptions,
    degraded: bool,
    worst_error: f64,
}

fn gauss_legendre(p: usize) -> (Vec<f64>, Vec<f64>) {
    match p {
        1 => (vec![0.0], vec![2.0]),
        2 => {
            let a = 1.0 / 3f64.sqrt();
            (vec![-a, a], vec![1.0, 1.0])
        }
        3 => {
            let a = (0.6f64).sqrt();
            (vec![-a, 0.0, a], vec![5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])
        }
        4 => {
            let r = (6.0f64 / 5.0).sqrt() * 2.0;
            let (a, b) = (((3.0 - r) / 7.0f64).sqrt(), ((3.0 + r) / 7.0f64).sqrt());
            let s = 30f64.sqrt();
            let (wa, wb) = ((18.0 + s) / 36.0, (18.0 - s) / 36.0);
            (vec![-b, -a, a, b], vec![wb, wa, wa, wb])
        }
        _ => {
            let r = 2.0 * (10.0f64 / 7.0).sqrt();
            let (a, b) = ((5.0 - r).sqrt() / 3.0, (5.0 + r).sqrt() / 3.0);
            let s = 13.0 * 70f64.sqrt();
            let (wa, wb) = ((322.0 + s) / 900.0, (322.0 - s) / 900.0);
            (vec![-b, -a, 0.0, a, b], vec![wb, wa, 128.0 / 225.0, wa, wb])
        }
    }
}

impl QuadratureRule {
    /// Rule covering [10^{−pad}/λ_max, 10^{pad}/λ_min] with cell edges aligned to 10^{m/npd}.
    pub fn for_range(fam: &MultiplierFamily, lambda_min: f64, lambda_max: f64, opts: QuadratureOptions) -> Result<Self> {
        Self::for_levels(fam, lambda_min, lambda_max, &[], opts)
    }

    pub(crate) fn for_levels(
        fam: &MultiplierFamily,
        lambda_min: f64,
        lambda_max: f64,
        levels: &[f64],
        opts: QuadratureOptions,
    ) -> Result<Self> {
        if !(lambda_min > 0.0 && lambda_max >= lambda_min && lambda_max.is_finite()) {
            return Err(invalid(
                "spectrum",
                format!("need 0 < λ_min ≤ λ_max, got [{lambda_min}, {lambda_max}]"),
            ));
        }
        if opts.nodes_per_decade == 0 {
            return Err(invalid("nodes_per_decade", "must be at least 1"));
        }
        if !(opts.pad_decades >= 0.0 && opts.pad_decades.is_finite()) {
            return Err(invalid("pad_decades", format!("must be a nonnegative number, got {}", opts.pad_decades)));
        }
        if !(1..=5).contains(&opts.points_per_cell) {
            return Err(invalid("points_per_cell", format!("must lie in 1..=5, got {}", opts.points_per_cell)));
        }
        let npd = opts.nodes_per_decade as f64;
        let lo_req = 10f64.powf(-opts.pad_decades) / lambda_max;
        let hi_req = 10f64.powf(opts.pad_decades) / lambda_min;
        let m_lo = (npd * lo_req.log10() + 1e-9).floor() as i64;
        let m_hi = ((npd * hi_req.log10() - 1e-9).ceil() as i64).max(m_lo + 1);
        let delta = std::f64::consts::LN_10 / npd;
        let (xi, wi) = gauss_legendre(opts.points_per_cell);
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for m in m_lo..m_hi {
            let centre = (m as f64 + 0.5) * delta;
            for (x, w) in xi.iter().zip(&wi) {
                nodes.push((centre + 0.5 * delta * x).exp());
                weights.push(0.5 * delta * w);
            }
        }
        let mut rule = QuadratureRule {
            nodes,
            weights,
            t_min: (m_lo as f64 * delta).exp(),
            t_max: (m_hi as f64 * delta).exp(),
            options: opts,
            degraded: false,
            worst_error: 0.0,
        };
        let mut probes: Vec<f64> = (0..=64)
            .map(|i| lambda_min * (lambda_max / lambda_min).powf(i as f64 / 64.0))
            .collect();
        probes.extend(levels.iter().copied().filter(|&l| l > 0.0));
        rule.worst_error = probes
            .iter()
            .map(|&l| (rule.identity_factor(fam, l) - 1.0).abs())
            .fold(0.0, f64::max);
        rule.degraded = !(rule.worst_error <= QUAD_TOL);
        Ok(rule)
    }

    /// −Σ_j w_j ψ(t_j λ), the scalar factor that reconstruction applies to e_λ.
    pub fn identity_factor(&self, fam: &MultiplierFamily, lambda: f64) -> f64 {
        -self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(t, w)| w * fam.psi(t * lambda))
            .sum::<f64>()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn t_min(&self) -> f64 {
        self.t_min
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn nodes_per_decade(&self) -> usize {
        self.options.nodes_per_decade
    }

    pub fn options(&self) -> QuadratureOptions {
        self.options
    }

    pub fn degraded(&self) -> bool {
        self.degraded
    }

    pub fn worst_error(&self) -> f64 {
        self.worst_error
    }

    /// Number of nodes with t_j < t_split; nodes never straddle an aligned split.
    pub fn split_index(&self, t_split: f64) -> usize {
        self.nodes.partition_point(|&t| t < t_split)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(npd: usize, pad: f64) -> QuadratureOptions {
        QuadratureOptions {
            nodes_per_decade: npd,
            pad_decades: pad,
            points_per_cell: 1,
        }
    }

    #[test]
    fn unit_spectrum_default_rule() {
        let fam = MultiplierFamily::default();
        let q = QuadratureRule::for_range(&fam, 1.0, 1.0, QuadratureOptions::default()).unwrap();
        assert!((q.identity_factor(&fam, 1.0) - 1.0).abs() <= 1e-8);
        assert!(!q.degraded());
        let ratio = q.nodes()[1] / q.nodes()[0];
        assert!((ratio - 10f64.powf(1.0 / 16.0)).abs() < 1e-12);
        assert!(q.weights().iter().all(|&w| (w - std::f64::consts::LN_10 / 16.0).abs() < 1e-15));
    }

    #[test]
    fn coarser_rule_is_worse() {
        let fam = MultiplierFamily::default();
        let e16 = QuadratureRule::for_range(&fam, 1.0, 1.0, opts(16, 4.0)).unwrap().worst_error();
        let e8 = QuadratureRule::for_range(&fam, 1.0, 1.0, opts(8, 4.0)).unwrap().worst_error();
        assert!(e8 > e16);
    }

    #[test]
    fn no_padding_is_degraded() {
        let fam = MultiplierFamily::default();
        let q = QuadratureRule::for_range(&fam, 0.5, 50.0, opts(16, 0.0)).unwrap();
        assert!(q.degraded());
        assert!(q.worst_error() > QUAD_TOL);
    }

    #[test]
    fn one_is_a_cell_edge() {
        let fam = MultiplierFamily::default();
        for p in 1..=5 {
            let q = QuadratureRule::for_range(
                &fam,
                0.37,
                913.0,
                QuadratureOptions { nodes_per_decade: 16, pad_decades: 4.0, points_per_cell: p },
            )
            .unwrap();
            let k = q.split_index(1.0);
            assert_eq!(k % p, 0);
            let below: f64 = q.weights()[..k].iter().sum();
            let decades = -q.t_min().log10();
            assert!((below - decades * std::f64::consts::LN_10).abs() < 1e-10);
        }
    }

    #[test]
    fn gauss_rules_integrate_polynomials() {
        for p in 1..=5 {
            let (x, w) = gauss_legendre(p);
            for deg in 0..(2 * p) {
                let exact = if deg % 2 == 0 { 2.0 / (deg as f64 + 1.0) } else { 0.0 };
                let got: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                assert!((got - exact).abs() < 1e-14, "p={p} deg={deg}");
            }
        }
    }
}
