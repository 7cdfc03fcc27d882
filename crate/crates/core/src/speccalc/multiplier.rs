//! The ψ / φ / φ̃ / ψ̃ multiplier family and other scalar symbols.
//!
//! With `Q(n, x) = e^{−x} Σ_{k<n} x^k/k!` the regularized upper incomplete gamma
//! function and `c0 = −1/(Γ(N)(1 − 2^{−N}))`:
//!
//! ```text
//! ψ(x)  = c0 x^N e^{−x}(1 − e^{−x})
//! ψ̃(x)  = ψ(x)/x
//! φ(x)  = N/(1 − 2^{−N}) [Q(N+1, x) − 2^{−N−1} Q(N+1, 2x)]      φ' = ψ
//! φ̃(x)  = 1/(1 − 2^{−N}) [Q(N, x) − 2^{−N} Q(N, 2x)]           x φ̃' = ψ, φ̃(0) = 1
//! ```

use std::fmt;
use std::sync::Arc;

use crate::error::{invalid, Result};

pub const DEFAULT_ORDER: u32 = 8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MultiplierFamily {
    order: u32,
    c0: f64,
}

impl Default for MultiplierFamily {
    fn default() -> Self {
        Self::new(DEFAULT_ORDER).expect("default order is valid")
    }
}

/// `Q(n, x)` by the finite sum; exact for integer n.
pub fn upper_gamma_q(n: u32, x: f64) -> f64 {
    if x == 0.0 {
        return 1.0;
    }
    let mut term = (-x).exp();
    let mut sum = term;
    for k in 1..n {
        term *= x / k as f64;
        sum += term;
    }
    sum
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

impl MultiplierFamily {
    pub fn new(order: u32) -> Result<Self> {
        if !(2..=40).contains(&order) {
            return Err(invalid("order", format!("multiplier order must lie in 2..=40, got {order}")));
        }
        let c0 = -1.0 / (factorial(order - 1) * (1.0 - 0.5f64.powi(order as i32)));
        Ok(MultiplierFamily { order, c0 })
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn c0(&self) -> f64 {
        self.c0
    }

    /// x^m e^{−x}(1 − e^{−x}), evaluated in log form to avoid overflow.
    fn bump(&self, m: i32, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        (m as f64 * x.ln() - x).exp() * -(-x).exp_m1()
    }

    pub fn psi(&self, x: f64) -> f64 {
        self.c0 * self.bump(self.order as i32, x)
    }

    pub fn psi_tilde(&self, x: f64) -> f64 {
        self.c0 * self.bump(self.order as i32 - 1, x)
    }

    pub fn phi(&self, x: f64) -> f64 {
        let n = self.order;
        let a = n as f64 / (1.0 - 0.5f64.powi(n as i32));
        a * (upper_gamma_q(n + 1, x) - 0.5f64.powi(n as i32 + 1) * upper_gamma_q(n + 1, 2.0 * x))
    }

    pub fn phi_tilde(&self, x: f64) -> f64 {
        let n = self.order;
        let a = 1.0 / (1.0 - 0.5f64.powi(n as i32));
        a * (upper_gamma_q(n, x) - 0.5f64.powi(n as i32) * upper_gamma_q(n, 2.0 * x))
    }
}

/// A scalar symbol b applied as b(tL).
#[derive(Clone)]
pub enum Multiplier {
    Psi,
    PsiTilde,
    Phi,
    PhiTilde,
    Heat,
    /// x^s, taken as 0 at x = 0 for s > 0 and 1 for s = 0.
    Power(f64),
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for Multiplier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Multiplier::Psi => write!(f, "Psi"),
            Multiplier::PsiTilde => write!(f, "PsiTilde"),
            Multiplier::Phi => write!(f, "Phi"),
            Multiplier::PhiTilde => write!(f, "PhiTilde"),
            Multiplier::Heat => write!(f, "Heat"),
            Multiplier::Power(s) => write!(f, "Power({s})"),
            Multiplier::Custom(_) => write!(f, "Custom"),
        }
    }
}

pub fn power(x: f64, s: f64) -> f64 {
    if x == 0.0 {
        if s == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        x.powf(s)
    }
}

impl Multiplier {
    /// Evaluation without the sign check, for internal hot loops.
    pub(crate) fn value(&self, fam: &MultiplierFamily, x: f64) -> f64 {
        match self {
            Multiplier::Psi => fam.psi(x),
            Multiplier::PsiTilde => fam.psi_tilde(x),
            Multiplier::Phi => fam.phi(x),
            Multiplier::PhiTilde => fam.phi_tilde(x),
            Multiplier::Heat => (-x).exp(),
            Multiplier::Power(s) => power(x, *s),
            Multiplier::Custom(b) => b(x),
        }
    }
}

pub fn eval_multiplier(fam: &MultiplierFamily, which: &Multiplier, x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(invalid("x", format!("multipliers are evaluated on [0, ∞), got {x}")));
    }
    if let Multiplier::Power(s) = which {
        if !(*s >= 0.0) {
            return Err(invalid("s", format!("power must be nonnegative, got {s}")));
        }
    }
    Ok(which.value(fam, x))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Adaptive Simpson on [a, b].
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
            let (flm, frm) = (f(lm), f(rm));
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                left + right + (left + right - whole) / 15.0
            } else {
                rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                    + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
            }
        }
        let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
        rec(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 50)
    }

    /// ∫_0^∞ g(u) du/u via u = e^v on [−40, 6], split into unit pieces.
    fn log_integral(g: &dyn Fn(f64) -> f64) -> f64 {
        let h = |v: f64| g(v.exp());
        (-40..6).map(|k| simpson(&h, k as f64, k as f64 + 1.0, 1e-16)).sum()
    }

    #[test]
    fn c0_for_order_three() {
        let fam = MultiplierFamily::new(3).unwrap();
        assert!((fam.c0() + 4.0 / 7.0).abs() < 1e-15);
        let raw = log_integral(&|u: f64| u.powi(3) * (-u).exp() * (1.0 - (-u).exp()));
        assert!((-1.0 / raw - fam.c0()).abs() < 1e-12);
    }

    #[test]
    fn normalizations_hold_together() {
        for n in [2, 3, 5, 8, 12] {
            let fam = MultiplierFamily::new(n).unwrap();
            assert!((fam.phi_tilde(0.0) - 1.0).abs() < 1e-15);
            assert_eq!(fam.psi(0.0), 0.0);
            let total = log_integral(&|u| fam.psi(u));
            assert!((total + 1.0).abs() < 1e-11, "order {n}: {total}");
        }
    }

    #[test]
    fn derivative_identities_by_finite_differences() {
        let fam = MultiplierFamily::default();
        for i in 0..20 {
            let x = 10f64.powf(-2.0 + 4.0 * i as f64 / 19.0);
            let d = 1e-5 * x;
            let dphi = (fam.phi(x + d) - fam.phi(x - d)) / (2.0 * d);
            let dphit = (fam.phi_tilde(x + d) - fam.phi_tilde(x - d)) / (2.0 * d);
            assert!((dphi - fam.psi(x)).abs() < 1e-6, "phi' at {x}");
            assert!((x * dphit - fam.psi(x)).abs() < 1e-6, "x phi~' at {x}");
            assert!((fam.psi_tilde(x) * x - fam.psi(x)).abs() < 1e-14);
        }
    }

    #[test]
    fn psi_phi_tilde_pairing() {
        // ∫ 2ψ φ̃ dx/x = [φ̃²]_0^∞ = −1.
        let fam = MultiplierFamily::default();
        let v = log_integral(&|u| 2.0 * fam.psi(u) * fam.phi_tilde(u));
        assert!((v + 1.0).abs() < 1e-11);
    }

    #[test]
    fn power_and_sign_rules() {
        let fam = MultiplierFamily::default();
        assert_eq!(eval_multiplier(&fam, &Multiplier::Power(0.5), 0.0).unwrap(), 0.0);
        assert_eq!(eval_multiplier(&fam, &Multiplier::Power(0.0), 0.0).unwrap(), 1.0);
        assert!(eval_multiplier(&fam, &Multiplier::Heat, -1.0).is_err());
        assert!(MultiplierFamily::new(1).is_err());
        assert!(fam.psi(1e12).abs() == 0.0 && fam.phi_tilde(1e12) == 0.0);
    }
}
