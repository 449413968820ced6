//! The covariance function ξ(r) = Σ_p β_p² r^p of a mixed p-spin model.
//!
//! Besides ξ and its derivatives this module provides the Onsager
//! integrand θ(r) = rξ'(r) − ξ(r) and the convex conjugate restricted to
//! the half line, ξ*(s) = sup_{r ≥ 0} (rs − ξ(r)).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const NEWTON_TOL: f64 = 1e-12;
const NEWTON_MAX_ITER: usize = 100;

/// One term β_p² r^p of the mixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureTerm {
    pub p: u32,
    pub coeff: f64,
}

/// A finite mixture with nonnegative coefficients and exponents p ≥ 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(u32, f64)>", into = "Vec<(u32, f64)>")]
pub struct MixtureFunction {
    terms: Vec<MixtureTerm>,
}

impl TryFrom<Vec<(u32, f64)>> for MixtureFunction {
    type Error = Error;

    fn try_from(pairs: Vec<(u32, f64)>) -> Result<Self> {
        Self::new(&pairs)
    }
}

impl From<MixtureFunction> for Vec<(u32, f64)> {
    fn from(m: MixtureFunction) -> Self {
        m.terms.iter().map(|t| (t.p, t.coeff)).collect()
    }
}

impl MixtureFunction {
    /// Builds ξ from `(p, β_p²)` pairs. Repeated exponents are summed.
    pub fn new(pairs: &[(u32, f64)]) -> Result<Self> {
        let mut terms: Vec<MixtureTerm> = Vec::with_capacity(pairs.len());
        for &(p, coeff) in pairs {
            if p < 2 {
                return Err(Error::InvalidMixture(format!("exponent p = {p} is below 2")));
            }
            if !coeff.is_finite() || coeff < 0.0 {
                return Err(Error::InvalidMixture(format!(
                    "coefficient for p = {p} must be finite and nonnegative, got {coeff}"
                )));
            }
            match terms.iter_mut().find(|t| t.p == p) {
                Some(t) => t.coeff += coeff,
                None => terms.push(MixtureTerm { p, coeff }),
            }
        }
        terms.retain(|t| t.coeff > 0.0);
        if terms.is_empty() {
            return Err(Error::InvalidMixture(
                "at least one coefficient must be positive".into(),
            ));
        }
        terms.sort_by_key(|t| t.p);
        Ok(Self { terms })
    }

    /// The Sherrington-Kirkpatrick mixture ξ(r) = β² r².
    pub fn sk(beta: f64) -> Result<Self> {
        Self::new(&[(2, beta * beta)])
    }

    pub fn terms(&self) -> &[MixtureTerm] {
        &self.terms
    }

    /// Largest exponent present.
    pub fn degree(&self) -> u32 {
        self.terms.last().map(|t| t.p).unwrap_or(0)
    }

    /// ξ scaled by a positive factor, i.e. r ↦ c ξ(r).
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(crate::error::domain(
                "scale",
                format!("must be positive, got {c}"),
            ));
        }
        Ok(Self {
            terms: self
                .terms
                .iter()
                .map(|t| MixtureTerm {
                    p: t.p,
                    coeff: t.coeff * c,
                })
                .collect(),
        })
    }

    /// True when every exponent is even, so ξ is convex on all of ℝ.
    pub fn is_even(&self) -> bool {
        self.terms.iter().all(|t| t.p % 2 == 0)
    }

    pub fn xi(&self, r: f64) -> f64 {
        self.terms.iter().map(|t| t.coeff * r.powi(t.p as i32)).sum()
    }

    pub fn xi_prime(&self, r: f64) -> f64 {
        self.terms
            .iter()
            .map(|t| t.coeff * t.p as f64 * r.powi(t.p as i32 - 1))
            .sum()
    }

    pub fn xi_second(&self, r: f64) -> f64 {
        self.terms
            .iter()
            .map(|t| t.coeff * (t.p * (t.p - 1)) as f64 * r.powi(t.p as i32 - 2))
            .sum()
    }

    /// θ(r) = rξ'(r) − ξ(r), defined for r ≥ 0.
    pub fn theta(&self, r: f64) -> Result<f64> {
        if r < 0.0 || r.is_nan() {
            return Err(crate::error::domain("r", format!("theta needs r >= 0, got {r}")));
        }
        // Σ (p − 1) β_p² r^p avoids the cancellation in rξ' − ξ.
        Ok(self
            .terms
            .iter()
            .map(|t| t.coeff * (t.p - 1) as f64 * r.powi(t.p as i32))
            .sum())
    }

    /// ξ*(s) = sup_{r ≥ 0} (rs − ξ(r)). Zero for s ≤ 0.
    pub fn xi_star(&self, s: f64) -> Result<f64> {
        if s.is_nan() {
            return Err(crate::error::domain("s", "NaN"));
        }
        if s <= 0.0 {
            return Ok(0.0);
        }
        let r = self.inverse_xi_prime(s)?;
        // r s − ξ(r) = θ(r) + r (s − ξ'(r)); the θ form is exact at the root.
        Ok(self.theta(r)? + r * (s - self.xi_prime(r)))
    }

    /// (ξ*)'(s) = (ξ')^{-1}(s) for s ≥ 0.
    pub fn xi_star_prime(&self, s: f64) -> Result<f64> {
        if s < 0.0 || s.is_nan() {
            return Err(crate::error::domain(
                "s",
                format!("xi_star_prime needs s >= 0, got {s}"),
            ));
        }
        self.inverse_xi_prime(s)
    }

    /// Solves ξ'(r) = s for r ≥ 0 by Newton's method safeguarded with bisection.
    pub fn inverse_xi_prime(&self, s: f64) -> Result<f64> {
        if s <= 0.0 {
            return Ok(0.0);
        }
        let mut lo = 0.0_f64;
        let mut hi = 1.0_f64;
        let mut grow = 0;
        while self.xi_prime(hi) < s {
            lo = hi;
            hi *= 2.0;
            grow += 1;
            if grow > 2000 || !hi.is_finite() {
                return Err(Error::Numerical {
                    context: "xi_star",
                    detail: format!("could not bracket the root of xi'(r) = {s}"),
                });
            }
        }
        let tol = NEWTON_TOL * s.max(1.0);
        let mut r = 0.5 * (lo + hi);
        for _ in 0..NEWTON_MAX_ITER {
            let g = self.xi_prime(r) - s;
            if g.abs() <= tol {
                return Ok(r);
            }
            if g > 0.0 {
                hi = r;
            } else {
                lo = r;
            }
            let slope = self.xi_second(r);
            let newton = r - g / slope;
            r = if slope > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if hi - lo <= f64::EPSILON * hi {
                return Ok(r);
            }
        }
        let g = self.xi_prime(r) - s;
        if g.abs() <= 1e3 * tol {
            return Ok(r);
        }
        Err(Error::Numerical {
            context: "xi_star",
            detail: format!("Newton iteration did not converge for s = {s} (residual {g:.3e})"),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn mixed() -> MixtureFunction {
        MixtureFunction::new(&[(2, 1.0), (4, 0.5)]).unwrap()
    }

    #[test]
    fn polynomial_values() {
        let sk = MixtureFunction::sk(1.0).unwrap();
        assert_abs_diff_eq!(sk.xi(0.5), 0.25, epsilon = 1e-15);
        assert_eq!(mixed().xi(0.0), 0.0);
        assert_abs_diff_eq!(mixed().xi(1.0), 1.5, epsilon = 1e-15);
        assert_abs_diff_eq!(sk.xi_prime(0.7), 1.4, epsilon = 1e-15);
        assert_eq!(sk.xi_prime(0.0), 0.0);
        assert_abs_diff_eq!(mixed().xi_prime(1.0), 4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(mixed().xi_second(1.0), 2.0 + 6.0, epsilon = 1e-15);
    }

    #[test]
    fn theta_values_and_domain() {
        let sk = MixtureFunction::sk(1.0).unwrap();
        assert_abs_diff_eq!(sk.theta(0.5).unwrap(), 0.25, epsilon = 1e-15);
        assert_eq!(sk.theta(0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(mixed().theta(1.0).unwrap(), 2.5, epsilon = 1e-15);
        assert!(sk.theta(-0.1).is_err());
    }

    #[test]
    fn conjugate_examples() {
        let sk = MixtureFunction::sk(1.0).unwrap();
        assert_eq!(sk.xi_star(-3.0).unwrap(), 0.0);
        assert_eq!(sk.xi_star(0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(sk.xi_star(2.0).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sk.xi_star(1.4).unwrap(), 0.49, epsilon = 1e-12);
        assert_abs_diff_eq!(sk.xi_star_prime(1.4).unwrap(), 0.7, epsilon = 1e-12);
        assert_eq!(sk.xi_star_prime(0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(mixed().xi_star_prime(4.0).unwrap(), 1.0, epsilon = 1e-12);
        assert!(sk.xi_star_prime(-1.0).is_err());
    }

    #[test]
    fn rejects_bad_coefficients() {
        assert!(MixtureFunction::new(&[(1, 1.0)]).is_err());
        assert!(MixtureFunction::new(&[(2, -1.0)]).is_err());
        assert!(MixtureFunction::new(&[(2, 0.0)]).is_err());
        assert!(MixtureFunction::new(&[]).is_err());
    }

    #[test]
    fn young_inequality_on_grid() {
        let m = mixed();
        for i in 0..=30 {
            let r = 0.1 * i as f64;
            let smax = m.xi_prime(3.0);
            for j in 0..=40 {
                let s = -3.0 + (smax + 3.0) * j as f64 / 40.0;
                assert!(r * s <= m.xi(r) + m.xi_star(s).unwrap() + 1e-9);
            }
            let s = m.xi_prime(r);
            assert_abs_diff_eq!(r * s, m.xi(r) + m.xi_star(s).unwrap(), epsilon = 1e-9);
        }
    }

    #[test]
    fn finite_difference_consistency() {
        let m = mixed();
        let h = 1e-5;
        for i in 1..30 {
            let r = 0.1 * i as f64;
            let fd = (m.xi(r + h) - m.xi(r - h)) / (2.0 * h);
            assert!((fd - m.xi_prime(r)).abs() <= 1e-6 * m.xi_prime(r).abs());
            let s = 0.3 * i as f64;
            let fd = (m.xi_star(s + h).unwrap() - m.xi_star(s - h).unwrap()) / (2.0 * h);
            let exact = m.xi_star_prime(s).unwrap();
            assert!((fd - exact).abs() <= 1e-6 * exact.abs());
        }
    }

    #[test]
    fn conjugate_monotone_and_convex() {
        let m = mixed();
        let grid: Vec<f64> = (0..200).map(|i| -1.0 + 0.05 * i as f64).collect();
        let vals: Vec<f64> = grid.iter().map(|&s| m.xi_star(s).unwrap()).collect();
        for w in vals.windows(3) {
            assert!(w[1] >= w[0] - 1e-14);
            assert!(w[1] <= 0.5 * (w[0] + w[2]) + 1e-12);
        }
    }
}
