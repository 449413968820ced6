//! The Parisi functional 𝒫(ν, λ) for atomic ν.
//!
//! On each interval where ν(t) is constant the backward equation
//! ∂_t Φ = −½(∂_x²Φ + ν(t)(∂_xΦ)²) is solved exactly by the Cole-Hopf
//! step Φ(t⁻, x) = ζ⁻¹ log 𝔼 exp(ζ Φ(t⁺, x + √Δ G)), with the heat step
//! 𝔼 Φ(t⁺, x + √Δ G) when ζ = 0. Expectations use Gauss-Hermite
//! quadrature and a cubic spline on a uniform x-grid.

use crate::error::{Error, Result};
use crate::measures::DiscreteMeasure;
use crate::quadrature::{log_sum_exp, GaussHermite, UniformSpline};

const PROB_TOL: f64 = 1e-9;

/// Finitely supported law of a single spin.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseMeasure {
    points: Vec<(f64, f64)>,
}

impl BaseMeasure {
    /// Builds the law from `(σ, prob)` pairs. Equal spin values are merged.
    pub fn new(points: &[(f64, f64)]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidBaseMeasure("support is empty".into()));
        }
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(points.len());
        for &(s, p) in points {
            if !s.is_finite() {
                return Err(Error::InvalidBaseMeasure(format!("spin value {s} is not finite")));
            }
            if !p.is_finite() || p <= 0.0 {
                return Err(Error::InvalidBaseMeasure(format!(
                    "probability of spin {s} must be positive, got {p}"
                )));
            }
            match merged.iter_mut().find(|(v, _)| *v == s) {
                Some(e) => e.1 += p,
                None => merged.push((s, p)),
            }
        }
        let total: f64 = merged.iter().map(|e| e.1).sum();
        if (total - 1.0).abs() > PROB_TOL {
            return Err(Error::InvalidBaseMeasure(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        for e in &mut merged {
            e.1 /= total;
        }
        merged.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self { points: merged })
    }

    /// Uniform law on {−1, +1}.
    pub fn ising() -> Self {
        Self {
            points: vec![(-1.0, 0.5), (1.0, 0.5)],
        }
    }

    /// Uniform law on the given spin values.
    pub fn uniform(values: &[f64]) -> Result<Self> {
        let p = 1.0 / values.len().max(1) as f64;
        Self::new(&values.iter().map(|&s| (s, p)).collect::<Vec<_>>())
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Smallest point in the support of σ².
    pub fn d(&self) -> f64 {
        self.points
            .iter()
            .map(|p| p.0 * p.0)
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest point in the support of σ².
    #[allow(non_snake_case)]
    pub fn D(&self) -> f64 {
        self.points.iter().map(|p| p.0 * p.0).fold(0.0, f64::max)
    }

    /// Distinct values of σ², ascending.
    pub fn square_values(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.points.iter().map(|p| p.0 * p.0).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    /// The law reweighted by exp(hσ²), together with log 𝔼 exp(hσ²).
    pub fn tilted(&self, h: f64) -> (Self, f64) {
        let logs: Vec<f64> = self.points.iter().map(|&(s, p)| p.ln() + h * s * s).collect();
        let log_norm = log_sum_exp(logs.iter().copied());
        let points = self
            .points
            .iter()
            .zip(&logs)
            .map(|(&(s, _), &l)| (s, (l - log_norm).exp()))
            .collect();
        (Self { points }, log_norm)
    }
}

/// Numerical settings for the PDE solver.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct PdeConfig {
    /// Gauss-Hermite nodes per level.
    pub quad_order: usize,
    /// Half width of the x-grid; derived from the time span when `None`.
    pub x_grid_halfwidth: Option<f64>,
    pub x_grid_step: f64,
    /// Fail when the error estimate exceeds this bound.
    pub max_error: Option<f64>,
}

impl Default for PdeConfig {
    fn default() -> Self {
        Self {
            quad_order: 40,
            x_grid_halfwidth: None,
            x_grid_step: 0.02,
            max_error: None,
        }
    }
}

impl PdeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.quad_order < 8 {
            return Err(Error::InvalidConfig(format!(
                "quad_order must be at least 8, got {}",
                self.quad_order
            )));
        }
        if !(self.x_grid_step > 0.0) || !self.x_grid_step.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "x_grid_step must be positive, got {}",
                self.x_grid_step
            )));
        }
        Ok(())
    }

    fn halfwidth(&self, span: f64, big_d: f64) -> Result<f64> {
        let min = 4.0 * (span * big_d.max(1.0)).sqrt() + 4.0;
        match self.x_grid_halfwidth {
            None => Ok(min),
            Some(w) if w >= min => Ok(w),
            Some(w) => Err(Error::InvalidConfig(format!(
                "x_grid_halfwidth {w} is below the required {min:.4}"
            ))),
        }
    }
}

/// 𝒫(ν, λ) together with a quadrature-refinement error estimate.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ParisiValue {
    pub value: f64,
    pub err_estimate: f64,
}

/// log ∫ exp(σx + λσ²) dP₁(σ).
pub fn terminal_condition(base: &BaseMeasure, lambda: f64, x: f64) -> f64 {
    log_sum_exp(base.points.iter().map(|&(s, p)| p.ln() + s * x + lambda * s * s))
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Step {
    zeta: f64,
    delta: f64,
}

/// Constant pieces of ν(t) on [0, a], listed from t = a backward.
fn backward_steps(nu: &DiscreteMeasure, a: f64) -> Vec<Step> {
    let q = nu.atoms();
    let levels = nu.levels();
    let k = q.len() - 1;
    let mut steps = Vec::with_capacity(q.len() + 1);
    if a > q[k] {
        steps.push(Step {
            zeta: 1.0,
            delta: a - q[k],
        });
    }
    for j in (1..=k).rev() {
        steps.push(Step {
            zeta: levels[j - 1],
            delta: q[j] - q[j - 1],
        });
    }
    if q[0] > 0.0 {
        steps.push(Step {
            zeta: 0.0,
            delta: q[0],
        });
    }
    steps.retain(|s| s.delta > 0.0);
    steps
}

/// One Cole-Hopf step at a point, given Φ⁺ at the shifted nodes.
#[inline]
fn combine(zeta: f64, weights: &[f64], vals: impl Iterator<Item = f64> + Clone) -> f64 {
    if zeta == 0.0 {
        return weights.iter().zip(vals).map(|(w, v)| w * v).sum();
    }
    let mx = vals.clone().fold(f64::NEG_INFINITY, f64::max);
    // expm1/ln_1p keep precision when ζ is small.
    let s: f64 = weights
        .iter()
        .zip(vals)
        .map(|(w, v)| w * (zeta * (v - mx)).exp_m1())
        .sum();
    mx + s.ln_1p() / zeta
}

/// exp(σx + λσ²) summed against P₁, with log p + λσ² folded in.
struct Terminal {
    terms: Vec<(f64, f64)>,
}

impl Terminal {
    fn new(base: &BaseMeasure, lambda: f64) -> Self {
        Self {
            terms: base
                .points
                .iter()
                .map(|&(s, p)| (s, p.ln() + lambda * s * s))
                .collect(),
        }
    }

    #[inline]
    fn eval(&self, x: f64) -> f64 {
        let mut mx = f64::NEG_INFINITY;
        for &(s, c) in &self.terms {
            mx = mx.max(c + s * x);
        }
        let mut acc = 0.0;
        for &(s, c) in &self.terms {
            acc += (c + s * x - mx).exp();
        }
        mx + acc.ln()
    }
}

/// Applies one step at every grid point. `shifted[m]` holds Φ⁺ at the
/// points shifted by the m-th node.
fn combine_grid(zeta: f64, weights: &[f64], shifted: &[Vec<f64>], out: &mut [f64]) {
    if zeta == 0.0 {
        out.fill(0.0);
        for (w, row) in weights.iter().zip(shifted) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += w * v;
            }
        }
        return;
    }
    let mut mx = shifted[0].clone();
    for row in &shifted[1..] {
        for (m, v) in mx.iter_mut().zip(row) {
            *m = m.max(*v);
        }
    }
    out.fill(0.0);
    for (w, row) in weights.iter().zip(shifted) {
        for ((o, v), m) in out.iter_mut().zip(row).zip(&mx) {
            *o += w * (zeta * (v - m)).exp_m1();
        }
    }
    for (o, m) in out.iter_mut().zip(&mx) {
        *o = m + o.ln_1p() / zeta;
    }
}

fn solve(
    steps: &[Step],
    base: &BaseMeasure,
    lambda: f64,
    order: usize,
    step: f64,
    cfg: &PdeConfig,
) -> Result<f64> {
    let terminal = Terminal::new(base, lambda);
    if steps.is_empty() {
        return Ok(terminal.eval(0.0));
    }
    let gh = GaussHermite::cached(order)?;
    let w = gh.weights();

    if steps.len() == 1 {
        let Step { zeta, delta } = steps[0];
        let sd = delta.sqrt();
        return Ok(combine(
            zeta,
            w,
            gh.nodes().iter().map(|&y| terminal.eval(sd * y)),
        ));
    }

    let span: f64 = steps.iter().map(|s| s.delta).sum();
    let halfwidth = cfg.halfwidth(span, base.D())?;
    let n_half = (halfwidth / step).ceil() as usize;
    let n = 2 * n_half + 1;
    let x0 = -(n_half as f64) * step;

    let mut shifted = vec![vec![0.0; n]; order];
    let mut values = vec![0.0; n];
    let Step { zeta, delta } = steps[0];
    let sd = delta.sqrt();
    for (row, &y) in shifted.iter_mut().zip(gh.nodes()) {
        for (i, v) in row.iter_mut().enumerate() {
            *v = terminal.eval(x0 + step * i as f64 + sd * y);
        }
    }
    combine_grid(zeta, w, &shifted, &mut values);

    let last = steps.len() - 1;
    for st in &steps[1..last] {
        let spline = UniformSpline::new(x0, step, values.clone())?;
        let sd = st.delta.sqrt();
        for (row, &y) in shifted.iter_mut().zip(gh.nodes()) {
            spline.eval_shifted(sd * y, row);
        }
        combine_grid(st.zeta, w, &shifted, &mut values);
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical {
                context: "parisi_pde",
                detail: "non-finite value on the x-grid".into(),
            });
        }
    }

    let spline = UniformSpline::new(x0, step, values)?;
    let Step { zeta, delta } = steps[last];
    let sd = delta.sqrt();
    Ok(combine(zeta, w, gh.nodes().iter().map(|&y| spline.eval(sd * y))))
}

fn solve_with_estimate(
    steps: &[Step],
    base: &BaseMeasure,
    lambda: f64,
    cfg: &PdeConfig,
) -> Result<ParisiValue> {
    cfg.validate()?;
    if !lambda.is_finite() {
        return Err(crate::error::domain(
            "lambda",
            format!("must be finite, got {lambda}"),
        ));
    }
    let value = solve(steps, base, lambda, cfg.quad_order, cfg.x_grid_step, cfg)?;
    // Halve the quadrature order and, separately, double the grid step.
    let err_estimate = if steps.len() <= 1 {
        let coarse = solve(steps, base, lambda, cfg.quad_order / 2, cfg.x_grid_step, cfg)?;
        (value - coarse).abs()
    } else {
        let coarse_quad = solve(steps, base, lambda, cfg.quad_order / 2, cfg.x_grid_step, cfg)?;
        let coarse_grid = solve(steps, base, lambda, cfg.quad_order, 2.0 * cfg.x_grid_step, cfg)?;
        (value - coarse_quad).abs().max((value - coarse_grid).abs())
    };
    if !value.is_finite() {
        return Err(Error::Numerical {
            context: "parisi_pde",
            detail: format!("solution is not finite (lambda = {lambda})"),
        });
    }
    if let Some(bound) = cfg.max_error {
        if err_estimate > bound {
            return Err(Error::ErrorBoundExceeded {
                estimate: err_estimate,
                bound,
            });
        }
    }
    Ok(ParisiValue { value, err_estimate })
}

/// 𝒫(ν, λ) = Φ_{ν,λ}(0, 0).
pub fn parisi_value(
    nu: &DiscreteMeasure,
    lambda: f64,
    base: &BaseMeasure,
    cfg: &PdeConfig,
) -> Result<ParisiValue> {
    solve_with_estimate(&backward_steps(nu, nu.top()), base, lambda, cfg)
}

/// 𝒫(ν, λ) without the error estimate; one solve instead of three.
pub fn parisi_value_only(
    nu: &DiscreteMeasure,
    lambda: f64,
    base: &BaseMeasure,
    cfg: &PdeConfig,
) -> Result<f64> {
    cfg.validate()?;
    let steps = backward_steps(nu, nu.top());
    let v = solve(&steps, base, lambda, cfg.quad_order, cfg.x_grid_step, cfg)?;
    if !v.is_finite() {
        return Err(Error::Numerical {
            context: "parisi_pde",
            detail: format!("solution is not finite (lambda = {lambda})"),
        });
    }
    Ok(v)
}

/// 𝒫(ν, λ) by whichever method is cheaper: nested quadrature when ν(t)
/// has at most two constant pieces, one grid solve otherwise.
pub fn parisi_value_fast(
    nu: &DiscreteMeasure,
    lambda: f64,
    base: &BaseMeasure,
    cfg: &PdeConfig,
) -> Result<f64> {
    if backward_steps(nu, nu.top()).len() <= 2 {
        cfg.validate()?;
        let v = parisi_value_recursive(nu, lambda, base, cfg.quad_order)?;
        if !v.is_finite() {
            return Err(Error::Numerical {
                context: "parisi_pde",
                detail: format!("solution is not finite (lambda = {lambda})"),
            });
        }
        return Ok(v);
    }
    parisi_value_only(nu, lambda, base, cfg)
}

/// 𝒫^a(ν, λ): the same equation on [0, a] with ν(t) = 1 past the top atom.
pub fn parisi_value_extended(
    nu: &DiscreteMeasure,
    lambda: f64,
    a: f64,
    base: &BaseMeasure,
    cfg: &PdeConfig,
) -> Result<ParisiValue> {
    if !(a >= nu.top()) {
        return Err(crate::error::domain(
            "a",
            format!("must be at least the top atom {}, got {a}", nu.top()),
        ));
    }
    solve_with_estimate(&backward_steps(nu, a), base, lambda, cfg)
}

/// Ψ(μ, h) = 𝒫(μ, h − ½μ⁻¹(1)).
pub fn psi_capital(mu: &DiscreteMeasure, h: f64, base: &BaseMeasure, cfg: &PdeConfig) -> Result<ParisiValue> {
    parisi_value(mu, h - 0.5 * mu.top(), base, cfg)
}

/// ψ(μ) = Ψ(μ, 0).
pub fn psi(mu: &DiscreteMeasure, base: &BaseMeasure, cfg: &PdeConfig) -> Result<ParisiValue> {
    psi_capital(mu, 0.0, base, cfg)
}

/// Grid-free evaluation of 𝒫(ν, λ) by nested quadrature over a tree of
/// Gaussian increments. Cost grows like `order` to the number of levels,
/// so only measures with at most three atoms are accepted.
pub fn parisi_value_recursive(
    nu: &DiscreteMeasure,
    lambda: f64,
    base: &BaseMeasure,
    order: usize,
) -> Result<f64> {
    parisi_value_recursive_extended(nu, lambda, nu.top(), base, order)
}

/// Nested-quadrature counterpart of [`parisi_value_extended`].
pub fn parisi_value_recursive_extended(
    nu: &DiscreteMeasure,
    lambda: f64,
    a: f64,
    base: &BaseMeasure,
    order: usize,
) -> Result<f64> {
    if nu.len() > 3 {
        return Err(Error::InvalidMeasure(format!(
            "recursive evaluation supports at most 3 atoms, got {}",
            nu.len()
        )));
    }
    if !(a >= nu.top()) {
        return Err(crate::error::domain("a", format!("below the top atom: {a}")));
    }
    // Forward intervals [t_j, t_{j+1}) read off the CDF of ν directly.
    let mut cuts: Vec<f64> = std::iter::once(0.0)
        .chain(nu.atoms().iter().copied())
        .chain(std::iter::once(a))
        .collect();
    cuts.dedup_by(|x, y| x == y);
    let pieces: Vec<(f64, f64)> = cuts
        .windows(2)
        .filter(|c| c[1] > c[0])
        .map(|c| (nu.cdf(0.5 * (c[0] + c[1])), c[1] - c[0]))
        .collect();
    let gh = GaussHermite::cached(order)?;

    fn go(pieces: &[(f64, f64)], x: f64, gh: &GaussHermite, terminal: &Terminal) -> f64 {
        let Some((&(zeta, delta), rest)) = pieces.split_first() else {
            return terminal.eval(x);
        };
        let sd = delta.sqrt();
        let mut vals = [0.0; 64];
        let vals = if gh.order() <= 64 {
            &mut vals[..gh.order()]
        } else {
            return combine(
                zeta,
                gh.weights(),
                gh.nodes()
                    .iter()
                    .map(|&y| go(rest, x + sd * y, gh, terminal))
                    .collect::<Vec<_>>()
                    .into_iter(),
            );
        };
        for (v, &y) in vals.iter_mut().zip(gh.nodes()) {
            *v = go(rest, x + sd * y, gh, terminal);
        }
        combine(zeta, gh.weights(), vals.iter().copied())
    }
    let terminal = Terminal::new(base, lambda);
    Ok(go(&pieces, 0.0, &gh, &terminal))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn m(pairs: &[(f64, f64)]) -> DiscreteMeasure {
        DiscreteMeasure::new(pairs).unwrap()
    }

    #[test]
    fn base_measure_bounds() {
        let ising = BaseMeasure::ising();
        assert_eq!((ising.d(), ising.D()), (1.0, 1.0));
        let soft = BaseMeasure::uniform(&[-1.0, 0.0, 1.0]).unwrap();
        assert_eq!((soft.d(), soft.D()), (0.0, 1.0));
        assert_eq!(soft.square_values(), vec![0.0, 1.0]);
        assert!(BaseMeasure::new(&[(1.0, 0.5), (-1.0, 0.4)]).is_err());
        assert!(BaseMeasure::new(&[(1.0, 0.0), (-1.0, 1.0)]).is_err());
        assert!(BaseMeasure::new(&[]).is_err());
    }

    #[test]
    fn tilting_reweights_by_square() {
        let soft = BaseMeasure::uniform(&[-1.0, 0.0, 1.0]).unwrap();
        let (tilted, log_z) = soft.tilted(0.7);
        let z = (1.0 + 2.0 * 0.7_f64.exp()) / 3.0;
        assert_abs_diff_eq!(log_z, z.ln(), epsilon = 1e-14);
        let p0 = tilted.points().iter().find(|p| p.0 == 0.0).unwrap().1;
        assert_abs_diff_eq!(p0, 1.0 / (3.0 * z), epsilon = 1e-14);
    }

    #[test]
    fn terminal_condition_examples() {
        let ising = BaseMeasure::ising();
        assert_eq!(terminal_condition(&ising, 0.0, 0.0), 0.0);
        assert_abs_diff_eq!(
            terminal_condition(&ising, 0.0, 1.3),
            1.3_f64.cosh().ln(),
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(terminal_condition(&ising, 0.37, 0.0), 0.37, epsilon = 1e-15);
        assert_abs_diff_eq!(
            terminal_condition(&ising, 0.0, 800.0),
            800.0 - 2f64.ln(),
            epsilon = 1e-10
        );
        let soft = BaseMeasure::uniform(&[-1.0, 0.0, 1.0]).unwrap();
        assert_abs_diff_eq!(terminal_condition(&soft, 0.0, 0.0), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn step_schedule() {
        let nu = m(&[(0.2, 0.5), (0.6, 0.5)]);
        let steps = backward_steps(&nu, 0.6);
        assert_eq!(steps.len(), 2);
        assert_eq!(steps[0].zeta, 0.5);
        assert_abs_diff_eq!(steps[0].delta, 0.4, epsilon = 1e-15);
        assert_eq!(
            steps[1],
            Step {
                zeta: 0.0,
                delta: 0.2
            }
        );
        let ext = backward_steps(&nu, 1.0);
        assert_eq!(ext[0].zeta, 1.0);
        assert!(backward_steps(&m(&[(0.0, 1.0)]), 0.0).is_empty());
    }

    #[test]
    fn dirac_zero_is_terminal_value() {
        let cfg = PdeConfig::default();
        let ising = BaseMeasure::ising();
        let v = parisi_value(&m(&[(0.0, 1.0)]), 0.0, &ising, &cfg).unwrap();
        assert_eq!(v.value, 0.0);
        assert_eq!(psi(&m(&[(0.0, 1.0)]), &ising, &cfg).unwrap().value, 0.0);
        let v = psi_capital(&m(&[(0.0, 1.0)]), 0.4, &ising, &cfg).unwrap();
        assert_abs_diff_eq!(v.value, 0.4, epsilon = 1e-15);
    }

    #[test]
    fn extension_at_top_is_identity() {
        let cfg = PdeConfig::default();
        let nu = m(&[(0.1, 0.3), (0.5, 0.7)]);
        let base = BaseMeasure::uniform(&[-1.0, 0.0, 1.0]).unwrap();
        let a = parisi_value(&nu, -0.2, &base, &cfg).unwrap();
        let b = parisi_value_extended(&nu, -0.2, 0.5, &base, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(parisi_value_extended(&nu, 0.0, 0.4, &base, &cfg).is_err());
    }

    #[test]
    fn small_quad_order_rejected() {
        let cfg = PdeConfig {
            quad_order: 4,
            ..PdeConfig::default()
        };
        let nu = m(&[(0.3, 1.0)]);
        assert!(matches!(
            parisi_value(&nu, 0.0, &BaseMeasure::ising(), &cfg),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn error_bound_is_enforced() {
        let cfg = PdeConfig {
            max_error: Some(0.0),
            quad_order: 8,
            ..PdeConfig::default()
        };
        let nu = m(&[(0.3, 0.5), (2.5, 0.5)]);
        assert!(matches!(
            parisi_value(&nu, 0.0, &BaseMeasure::ising(), &cfg),
            Err(Error::ErrorBoundExceeded { .. })
        ));
    }

    #[test]
    fn recursive_rejects_many_atoms() {
        let nu = m(&[(0.1, 0.25), (0.2, 0.25), (0.3, 0.25), (0.4, 0.25)]);
        assert!(parisi_value_recursive(&nu, 0.0, &BaseMeasure::ising(), 10).is_err());
    }

    #[test]
    fn small_zeta_matches_heat_step() {
        // ζ → 0 in the Cole-Hopf step recovers the linear average.
        let cfg = PdeConfig::default();
        let ising = BaseMeasure::ising();
        let heat = parisi_value(&m(&[(0.3, 1.0)]), 0.0, &ising, &cfg).unwrap().value;
        let nearly = parisi_value(&m(&[(0.0, 1e-10), (0.3, 1.0 - 1e-10)]), 0.0, &ising, &cfg)
            .unwrap()
            .value;
        assert_abs_diff_eq!(heat, nearly, epsilon = 1e-8);
    }
}
