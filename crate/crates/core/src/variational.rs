//! Variational formulas for the limiting free energy: the Hopf-Lax
//! infimum over measures, the classical Parisi sup-inf, the enriched
//! sup-inf over an external field h', and the Hamilton-Jacobi residual of
//! the resulting surface.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::measures::{
    cdf_stieltjes, dominate_truncate, transport_cost, truncate_support, zeta_mu, DiscreteMeasure,
};
use crate::mixture::MixtureFunction;
use crate::optimize::{expand_bracket, golden_section, nelder_mead, SimplexConfig};
use crate::parisi_pde::{parisi_value_fast, BaseMeasure, PdeConfig};
use crate::quadrature::UniformSpline;

const MAX_LOGIT: f64 = 20.0;
/// Target spacing of the h' grid behind the field profile.
const PROFILE_STEP: f64 = 0.025;
const PROFILE_SCAN: usize = 2001;

/// Settings shared by the variational solvers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    /// Atoms of the candidate measures.
    pub n_atoms: usize,
    pub multistarts: usize,
    pub simplex: SimplexConfig,
    pub golden_tol: f64,
    /// Largest |λ| searched.
    pub lambda_limit: f64,
    /// Points of the coarse u-grid on [d, D].
    pub u_grid: usize,
    /// Local refinements of the u-grid, each by a factor of four.
    pub u_refinements: usize,
    /// Minimum number of h' grid points behind the field profile.
    pub h_grid: usize,
    /// Replace each candidate ν by its projection onto {ν ≽ μ}.
    pub dominate: bool,
    pub seed: u64,
    pub pde: PdeConfig,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            n_atoms: 2,
            multistarts: 8,
            simplex: SimplexConfig::default(),
            golden_tol: 1e-8,
            lambda_limit: 64.0,
            u_grid: 33,
            u_refinements: 2,
            h_grid: 41,
            dominate: false,
            seed: 0,
            pde: PdeConfig::default(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_atoms == 0 {
            return bad("n_atoms must be at least 1".into());
        }
        if self.multistarts == 0 {
            return bad("multistarts must be at least 1".into());
        }
        let s = &self.simplex;
        if !(s.f_tol > 0.0 && s.x_tol > 0.0 && s.initial_step > 0.0) || s.max_evals == 0 {
            return bad("simplex tolerances, step and max_evals must be positive".into());
        }
        if !(self.golden_tol > 0.0) {
            return bad(format!("golden_tol must be positive, got {}", self.golden_tol));
        }
        if !(self.lambda_limit > 0.0) {
            return bad(format!(
                "lambda_limit must be positive, got {}",
                self.lambda_limit
            ));
        }
        if self.u_grid < 2 || self.h_grid < 3 {
            return bad("u_grid needs at least 2 points and h_grid at least 3".into());
        }
        self.pde.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub restarts: usize,
    pub evals: usize,
    pub converged: bool,
    /// The outer maximizer sits on the edge of its search interval.
    pub at_bracket_edge: bool,
}

impl Diagnostics {
    fn absorb(&mut self, other: &Diagnostics) {
        self.restarts += other.restarts;
        self.evals += other.evals;
        self.converged &= other.converged;
        self.at_bracket_edge |= other.at_bracket_edge;
    }
}

/// Optimal value with its optimizers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariationalResult {
    pub value: f64,
    /// ν* for the Hopf-Lax forms, ζ* for the classical form.
    pub measure: DiscreteMeasure,
    pub lambda: Option<f64>,
    /// u* or h'* where the formula has an outer scalar.
    pub scalar: Option<f64>,
    pub diagnostics: Diagnostics,
    #[serde(skip)]
    params: Vec<f64>,
}

/// Where the atoms of a parametrized measure live.
#[derive(Debug, Clone, Copy)]
enum Support {
    HalfLine,
    /// [0, u], via x = u(1 − e^{−y}).
    Interval(f64),
}

/// k − 1 logits (the first weight's logit is pinned at zero) followed by k
/// location increments entering as squares.
fn decode(params: &[f64], k: usize, support: Support) -> Result<DiscreteMeasure> {
    let (logits, incs) = params.split_at(k - 1);
    let logits: Vec<f64> = std::iter::once(0.0)
        .chain(logits.iter().map(|l| l.clamp(-MAX_LOGIT, MAX_LOGIT)))
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = raw.iter().sum();
    let mut y = 0.0;
    let pairs: Vec<(f64, f64)> = incs
        .iter()
        .zip(&raw)
        .map(|(a, w)| {
            y += a * a;
            let x = match support {
                Support::HalfLine => y,
                Support::Interval(u) => -u * (-y).exp_m1(),
            };
            (x, w / total)
        })
        .collect();
    DiscreteMeasure::new(&pairs)
}

/// Inverse of [`decode`] for a measure, coarsened or split to k atoms.
fn encode(nu: &DiscreteMeasure, k: usize, support: Support) -> Vec<f64> {
    let mut pairs: Vec<(f64, f64)> = nu.iter().collect();
    if pairs.len() > k {
        pairs = (0..k)
            .map(|j| {
                (
                    nu.quantile((j as f64 + 0.5) / k as f64).unwrap_or(0.0),
                    1.0 / k as f64,
                )
            })
            .collect();
    }
    while pairs.len() < k {
        let (q, w) = pairs.pop().unwrap();
        pairs.push((q, 0.5 * w));
        pairs.push((q, 0.5 * w));
    }
    let mut params: Vec<f64> = pairs[1..].iter().map(|p| (p.1 / pairs[0].1).ln()).collect();
    let mut prev = 0.0;
    for &(q, _) in &pairs {
        let y = match support {
            Support::HalfLine => q,
            Support::Interval(u) if u > 0.0 => -(1.0 - (q / u).min(1.0 - 1e-9)).ln(),
            Support::Interval(_) => 0.0,
        };
        params.push((y - prev).max(0.0).sqrt());
        prev = prev.max(y);
    }
    params
}

fn random_start(k: usize, reach: f64, support: Support, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut atoms: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..reach.max(1e-3))).collect();
    atoms.sort_by(f64::total_cmp);
    let logits: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    let pairs: Vec<(f64, f64)> = atoms.iter().zip(&w).map(|(&q, &w)| (q, w / total)).collect();
    let nu = DiscreteMeasure::new(&pairs).expect("random start is a valid measure");
    encode(&nu, k, support)
}

/// δ_0-like, a copy of `anchor`, an evenly spread grid, then random starts.
fn starting_points(
    k: usize,
    anchor: Option<&DiscreteMeasure>,
    reach: f64,
    support: Support,
    cfg: &OptimizerConfig,
) -> Vec<Vec<f64>> {
    let mut starts = vec![vec![0.0; 2 * k - 1]];
    if let Some(mu) = anchor {
        starts.push(encode(mu, k, support));
    }
    let spread: Vec<(f64, f64)> = (0..k)
        .map(|j| (reach * (j + 1) as f64 / k as f64, 1.0 / k as f64))
        .collect();
    if let Ok(nu) = DiscreteMeasure::new(&spread) {
        starts.push(encode(&nu, k, support));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    while starts.len() < cfg.multistarts {
        starts.push(random_start(k, reach, support, &mut rng));
    }
    starts.truncate(cfg.multistarts);
    starts
}

struct Search {
    x: Vec<f64>,
    value: f64,
    diagnostics: Diagnostics,
}

/// Nelder-Mead from every start, then one restart from the best point.
fn multistart<F>(f: &F, starts: &[Vec<f64>], simplex: &SimplexConfig) -> Search
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let runs: Vec<_> = starts.par_iter().map(|x0| nelder_mead(f, x0, simplex)).collect();
    let best = runs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.value.total_cmp(&b.1.value).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .unwrap();
    let polish = nelder_mead(f, &runs[best].x, simplex);
    let evals = runs.iter().map(|r| r.evals).sum::<usize>() + polish.evals;
    let (x, value) = if polish.value <= runs[best].value {
        (polish.x, polish.value)
    } else {
        (runs[best].x.clone(), runs[best].value)
    };
    Search {
        x,
        value,
        diagnostics: Diagnostics {
            restarts: starts.len() + 1,
            evals,
            converged: polish.converged,
            at_bracket_edge: false,
        },
    }
}

fn finite_or_inf(v: Result<f64>) -> f64 {
    match v {
        Ok(v) if v.is_finite() => v,
        _ => f64::INFINITY,
    }
}

/// Ψ(ν, h) = 𝒫(ν, h − ½ν⁻¹(1)).
fn psi_capital_fast(nu: &DiscreteMeasure, h: f64, base: &BaseMeasure, pde: &PdeConfig) -> Result<f64> {
    parisi_value_fast(nu, h - 0.5 * nu.top(), base, pde)
}

fn check_positive(name: &'static str, v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(domain(name, format!("must be positive, got {v}")));
    }
    Ok(())
}

/// The cost term added to Ψ(ν, h) inside the infimum over ν.
type Cost<'a> = dyn Fn(&DiscreteMeasure) -> Result<f64> + Sync + 'a;

/// inf_ν Ψ(ν, h) + cost(ν) over k-atom ν on ℝ₊.
fn field_infimum(
    h: f64,
    base: &BaseMeasure,
    cost: &Cost<'_>,
    mu: Option<&DiscreteMeasure>,
    starts: &[Vec<f64>],
    cfg: &OptimizerConfig,
) -> Result<VariationalResult> {
    let k = cfg.n_atoms;
    let candidate = |params: &[f64]| -> Result<DiscreteMeasure> {
        let nu = decode(params, k, Support::HalfLine)?;
        match (cfg.dominate, mu) {
            (true, Some(mu)) => dominate_truncate(&nu, mu),
            _ => Ok(nu),
        }
    };
    let objective = |params: &[f64]| {
        finite_or_inf(
            candidate(params).and_then(|nu| Ok(psi_capital_fast(&nu, h, base, &cfg.pde)? + cost(&nu)?)),
        )
    };
    let search = multistart(&objective, starts, &cfg.simplex);
    if !search.value.is_finite() {
        return Err(Error::Numerical {
            context: "hopf_lax",
            detail: "no start produced a finite objective".into(),
        });
    }
    Ok(VariationalResult {
        value: search.value,
        measure: candidate(&search.x)?,
        lambda: None,
        scalar: None,
        diagnostics: search.diagnostics,
        params: search.x,
    })
}

fn hopf_lax_cost<'a>(
    xi: &'a MixtureFunction,
    mu: &'a DiscreteMeasure,
    t: f64,
) -> impl Fn(&DiscreteMeasure) -> Result<f64> + Sync + 'a {
    move |nu| Ok(0.5 * t * transport_cost(xi, nu, mu, t)?)
}

/// inf_ν ( ψ(ν) + (t/2) 𝔼 ξ*((X_ν − X_μ)/t) ) over k-atom ν.
pub fn hopf_lax_value(
    xi: &MixtureFunction,
    mu: &DiscreteMeasure,
    t: f64,
    base: &BaseMeasure,
    cfg: &OptimizerConfig,
) -> Result<VariationalResult> {
    hopf_lax_field(xi, mu, t, 0.0, base, cfg)
}

/// The Hopf-Lax value with ψ replaced by Ψ(·, h).
pub fn hopf_lax_field(
    xi: &MixtureFunction,
    mu: &DiscreteMeasure,
    t: f64,
    h: f64,
    base: &BaseMeasure,
    cfg: &OptimizerConfig,
) -> Result<VariationalResult> {
    cfg.validate()?;
    check_positive("t", t)?;
    let reach = mu.top() + t * xi.xi_prime(base.D());
    let starts = starting_points(cfg.n_atoms, Some(mu), reach, Support::HalfLine, cfg);
    let cost = hopf_lax_cost(xi, mu, t);
    field_infimum(h, base, &cost, Some(mu), &starts, cfg)
}

/// inf_λ (−λu + f(λ)) for f with slope in [d, D]. Returns (λ*, value).
fn lambda_profile(
    f: impl Fn(f64) -> Result<f64>,
    u: f64,
    base: &BaseMeasure,
    cfg: &OptimizerConfig,
) -> Result<(f64, f64)> {
    let (d, big_d) = (base.d(), base.D());
    if !(u >= d - 1e-12 && u <= big_d + 1e-12) {
        return Err(domain("u", format!("must lie in [{d}, {big_d}], got {u}")));
    }
    if big_d - d < 1e-14 {
        // σ² is constant, so the objective does not depend on λ.
        return Ok((0.0, f(0.0)? + 0.0 * u));
    }
    let g = |l: f64| finite_or_inf(f(l).map(|v| v - l * u));
    let (a, b) = expand_bracket(g, 0.0, 1.0, cfg.lambda_limit);
    let (lam, v) = golden_section(g, a, b, cfg.golden_tol);
    if !v.is_finite() {
        return Err(Error::Numerical {
            context: "lambda_profile",
            detail: format!("objective is not finite near lambda = {lam}"),
        });
    }
    Ok((lam, v))
}

/// Γ_u(ν) = inf_λ (−λu + Ψ(ν, λ)).
pub fn gamma_u(nu: &DiscreteMeasure, u: f64, base: &BaseMeasure, cfg: &OptimizerConfig) -> Result<f64> {
    cfg.validate()?;
    Ok(gamma_u_with_lambda(nu, u, base, cfg)?.1)
}

/// Γ_u(ν) together with its minimizing λ.
pub fn gamma_u_with_lambda(
    nu: &DiscreteMeasure,
    u: f64,
    base: &BaseMeasure,
    cfg: &OptimizerConfig,
) -> Result<(f64, f64)> {
    lambda_profile(|l| psi_capital_fast(nu, l, base, &cfg.pde), u, base, cfg)
}

/// −λu + 𝒫(ζ_μ, λ + ½(ξ'(u) − ξ'(ζ⁻¹(1)))) without the λ part resolved:
/// returns the remaining u-terms and the λ-dependent function.
fn classical_terms<'a>(
    xi: &'a MixtureFunction,
    mu: &'a DiscreteMeasure,
    zeta: &DiscreteMeasure,
    u: f64,
    base: &'a BaseMeasure,
    pde: &'a PdeConfig,
) -> Result<(f64, impl Fn(f64) -> Result<f64> + 'a)> {
    let zm = zeta_mu(xi, zeta, mu)?;
    // ζ_μ⁻¹(1) − μ⁻¹(1) = ξ'(ζ⁻¹(1)), read off ζ_μ so that the shift stays
    // consistent with it when a negligible top atom was merged away.
    let shift = 0.5 * (xi.xi_prime(u) + mu.top() - zm.top());
    let theta = |s: f64| s * xi.xi_prime(s) - xi.xi(s);
    let rest = -0.5 * cdf_stieltjes(zeta, theta, u) - 0.5 * xi.xi(u) - 0.5 * mu.top() * u;
    Ok((rest, move |l: f64| parisi_value_fast(&zm, l + shift, base, pde)))
}

/// λ from an unconstrained parameter, bounded by the configured limit.
fn lambda_of(p: f64, cfg: &OptimizerConfig) -> f64 {
    cfg.lambda_limit * (p / cfg.lambda_limit).tanh()
}

/// inf over (ζ ∈ ℳ_{0,u}, λ) of the classical functional at fixed u.
/// Simplex search runs jointly over ζ and λ; λ is then re-optimized by
/// golden section at the final ζ.
fn classical_at_u(
    xi: &MixtureFunction,
    mu: &DiscreteMeasure,
    u: f64,
    base: &BaseMeasure,
    cfg: &OptimizerConfig,
    warm: Option<&[f64]>,
) -> Result<VariationalResult> {
    let k = cfg.n_atoms;
    let support = Support::Interval(u);
    let free_lambda = base.D() - base.d() >= 1e-14;
    let joint = |params: &[f64]| -> Result<f64> {
        let (zp, lp) = params.split_at(2 * k - 1);
        let zeta = decode(zp, k, support)?;
        let (rest, f) = classical_terms(xi, mu, &zeta, u, base, &cfg.pde)?;
        let lam = lp.first().map_or(0.0, |&p| lambda_of(p, cfg));
        Ok(f(lam)? - lam * u + rest)
    };
    let width = if free_lambda { 2 * k } else { 2 * k - 1 };
    let starts: Vec<Vec<f64>> = match warm {
        Some(w) => vec![w.to_vec(), vec![0.0; width]],
        None => starting_points(k, None, u, support, cfg)
            .into_iter()
            .map(|mut s| {
                s.resize(width, 0.0);
                s
            })
            .collect(),
    };
    let objective = |params: &[f64]| finite_or_inf(joint(params));
    let search = multistart(&objective, &starts, &cfg.simplex);
    let zeta = decode(&search.x[..2 * k - 1], k, support)?;
    let (rest, f) = classical_terms(xi, mu, &zeta, u, base, &cfg.pde)?;
    let (mut lam, mut value) = lambda_profile(f, u, base, cfg)?;
    value += rest;
    if search.value < value {
        lam = search.x.get(2 * k - 1).map_or(0.0, |&p| lambda_of(p, cfg));
        value = search.value;
    }
    Ok(VariationalResult {
        value,
        measure: zeta,
        lambda: Some(lam),
        scalar: Some(u),
        diagnostics: search.diagnostics,
        params: search.x,
    })
}

/// sup_u inf_{ζ, λ} of the classical Parisi functional at t = 1:
/// −λu + 𝒫(ζ_μ, λ + ½(ξ'(u) − ξ'(ζ⁻¹(1)))) − ½∫₀^u ζ dθ − ½ξ(u) − ½μ⁻¹(1)u.
pub fn classical_parisi_value(
    xi: &MixtureFunction,
    mu: &DiscreteMeasure,
    base: &BaseMeasure,
    cfg: &OptimizerConfig,
) -> Result<VariationalResult> {
    cfg.validate()?;
    let (d, big_d) = (base.d(), base.D());
    if big_d - d < 1e-14 {
        return classical_at_u(xi, mu, big_d, base, cfg, None);
    }
    let n = cfg.u_grid;
    let mut step = (big_d - d) / (n - 1) as f64;
    let mut evaluated: Vec<VariationalResult> = Vec::new();
    let mut diagnostics = Diagnostics {
        restarts: 0,
        evals: 0,
        converged: true,
        at_bracket_edge: false,
    };
    let mut warm: Option<Vec<f64>> = None;
    for i in 0..n {
        let u = d + step * i as f64;
        let r = classical_at_u(xi, mu, u, base, cfg, warm.as_deref())?;
        warm = Some(r.params.clone());
        evaluated.push(r);
    }
    let best_of = |v: &[VariationalResult]| -> usize {
        v.iter()
            .enumerate()
            .max_by(|a, b| a.1.value.total_cmp(&b.1.value).then(b.0.cmp(&a.0)))
            .unwrap()
            .0
    };
    for _ in 0..cfg.u_refinements {
        let best = &evaluated[best_of(&evaluated)];
        let center = best.scalar.unwrap();
        let warm = best.params.clone();
        step /= 4.0;
        for j in [-3i32, -2, -1, 1, 2, 3] {
            let u = center + step * j as f64;
            if u < d || u > big_d {
                continue;
            }
            let r = classical_at_u(xi, mu, u, base, cfg, Some(&warm))?;
            evaluated.push(r);
        }
    }
    for r in &evaluated {
        diagnostics.absorb(&r.diagnostics);
    }
    let mut result = evaluated.swap_remove(best_of(&evaluated));
    let u = result.scalar.unwrap();
    diagnostics.at_bracket_edge = u <= d || u >= big_d;
    result.diagnostics = diagnostics;
    Ok(result)
}

/// inf_{ζ, λ} sup_u of the classical functional, with ζ on [0, D] cut at u.
/// Never below [`classical_parisi_value`]; the gap measures how far the
/// computed saddle point is from a minimax pair.
pub fn classical_inf_sup(
    xi: &MixtureFunction,
    mu: &DiscreteMeasure,
    base: &BaseMeasure,
    cfg: &OptimizerConfig,
) -> Result<VariationalResult> {
    cfg.validate()?;
    let (d, big_d) = (base.d(), base.D());
    if big_d - d < 1e-14 {
        return classical_at_u(xi, mu, big_d, base, cfg, None);
    }
    let k = cfg.n_atoms;
    let support = Support::Interval(big_d);
    let lam_of = |p: f64| lambda_of(p, cfg);
    let at = |zeta: &DiscreteMeasure, lam: f64, u: f64| -> Result<f64> {
        let cut = truncate_support(zeta, u)?;
        let (rest, f) = classical_terms(xi, mu, &cut, u, base, &cfg.pde)?;
        Ok(f(lam)? - lam * u + rest)
    };
    let sup_u = |params: &[f64]| -> Result<(f64, f64)> {
        let (zp, lp) = params.split_at(2 * k - 1);
        let zeta = decode(zp, k, support)?;
        let lam = lam_of(lp[0]);
        let g = |u: f64| -finite_or_inf(at(&zeta, lam, u).map(|v| -v));
        let m = cfg.u_grid / 2 + 1;
        let step = (big_d - d) / (m - 1) as f64;
        let (i_best, _) = (0..m)
            .map(|i| (i, g(d + step * i as f64)))
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
            .unwrap();
        let lo = d + step * (i_best.saturating_sub(1)) as f64;
        let hi = (d + step * (i_best + 1) as f64).min(big_d);
        let (u, v) = golden_section(|u| -g(u), lo, hi, cfg.golden_tol);
        Ok((u, -v))
    };
    let objective = |params: &[f64]| finite_or_inf(sup_u(params).map(|r| r.1));
    let mut starts: Vec<Vec<f64>> = starting_points(k, None, big_d, support, cfg)
        .into_iter()
        .map(|mut s| {
            s.push(0.0);
            s
        })
        .collect();
    starts.truncate(cfg.multistarts);
    let search = multistart(&objective, &starts, &cfg.simplex);
    let (u, value) = sup_u(&search.x)?;
    let (zp, lp) = search.x.split_at(2 * k - 1);
    Ok(VariationalResult {
        value,
        measure: decode(zp, k, support)?,
        lambda: Some(lam_of(lp[0])),
        scalar: Some(u),
        diagnostics: search.diagnostics,
        params: search.x.clone(),
    })
}

/// h' ↦ inf_ν Ψ(ν, h') + cost(ν) on a uniform grid, with a spline through it.
pub struct FieldProfile {
    lo: f64,
    step: f64,
    fits: Vec<VariationalResult>,
    spline: UniformSpline,
}

impl FieldProfile {
    fn build(
        lo: f64,
        hi: f64,
        base: &BaseMeasure,
        cost: &Cost<'_>,
        mu: Option<&DiscreteMeasure>,
        reach: f64,
        cfg: &OptimizerConfig,
    ) -> Result<Self> {
        let n = cfg.h_grid.max(((hi - lo) / PROFILE_STEP).ceil() as usize + 1);
        let step = (hi - lo) / (n - 1) as f64;
        let k = cfg.n_atoms;
        let mut fits: Vec<VariationalResult> = Vec::with_capacity(n);
        for i in 0..n {
            let h = lo + step * i as f64;
            let starts = match fits.last() {
                Some(prev) => vec![prev.params.clone(), vec![0.0; 2 * k - 1]],
                None => starting_points(k, mu, reach, Support::HalfLine, cfg),
            };
            let mut fit = field_infimum(h, base, cost, mu, &starts, cfg)?;
            fit.scalar = Some(h);
            fits.push(fit);
        }
        let spline = UniformSpline::new(lo, step, fits.iter().map(|f| f.value).collect())?;
        Ok(Self {
            lo,
            step,
            fits,
            spline,
        })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.lo + self.step * (self.fits.len() - 1) as f64
    }

    /// (h', value) at the grid points.
    pub fn points(&self) -> Vec<(f64, f64)> {
        self.fits.iter().map(|f| (f.scalar.unwrap(), f.value)).collect()
    }

    pub fn eval(&self, h: f64) -> f64 {
        self.spline.eval(h)
    }

    fn nearest(&self, h: f64) -> &VariationalResult {
        let i = ((h - self.lo) / self.step)
            .round()
            .clamp(0.0, (self.fits.len() - 1) as f64);
        &self.fits[i as usize]
    }

    /// sup over h' ∈ [lo, hi] of profile(h') − penalty(h'), by a dense scan
    /// of the spline and a golden-section polish. Returns (h'*, value, edge).
    fn maximize(&self, penalty: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> (f64, f64, bool) {
        let g = |h: f64| self.eval(h) - penalty(h);
        let step = (hi - lo) / (PROFILE_SCAN - 1) as f64;
        let (i, _) = (0..PROFILE_SCAN)
            .map(|i| (i, g(lo + step * i as f64)))
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
            .unwrap();
        let a = lo + step * i.saturating_sub(1) as f64;
        let b = (lo + step * (i + 1) as f64).min(hi);
        let (h, v) = golden_section(|h| -g(h), a, b, tol);
        let edge = h - lo <= step || hi - h <= step;
        (h, -v, edge)
    }
}

fn xi_star_or_inf(xi: &MixtureFunction, s: f64) -> f64 {
    xi.xi_star(s).unwrap_or(f64::INFINITY)
}

/// sup_{h'} inf_ν ( Ψ(ν, h') + (t/2)𝔼ξ*((X_ν − X_μ)/t) − (s/2)ξ*(2(h' − h)/s) ).
///
/// The maximizer lies in [h, h + sξ'(D)/2]; the search runs on that
/// interval widened by one and flags a maximizer on its edge.
#[allow(clippy::too_many_arguments)]
pub fn theorem2_value(
    xi: &MixtureFunction,
    mu: &DiscreteMeasure,
    s: f64,
    t: f64,
    h: f64,
    base: &BaseMeasure,
    cfg: &OptimizerConfig,
) -> Result<VariationalResult> {
    cfg.validate()?;
    check_positive("s", s)?;
    check_positive("t", t)?;
    let hi = h + 0.5 * s * xi.xi_prime(base.D()) + 1.0;
    let cost = hopf_lax_cost(xi, mu, t);
    let reach = mu.top() + t * xi.xi_prime(base.D());
    let profile = FieldProfile::build(h, hi, base, &cost, Some(mu), reach, cfg)?;
    let penalty = |hp: f64| 0.5 * s * xi_star_or_inf(xi, 2.0 * (hp - h) / s);
    sup_over_field(&profile, penalty, h, hi, base, &cost, Some(mu), cfg)
}

/// Recomputes the infimum at the maximizer of the interpolated profile.
#[allow(clippy::too_many_arguments)]
fn sup_over_field(
    profile: &FieldProfile,
    penalty: impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    base: &BaseMeasure,
    cost: &Cost<'_>,
    mu: Option<&DiscreteMeasure>,
    cfg: &OptimizerConfig,
) -> Result<VariationalResult> {
    let (hp, _, edge) = profile.maximize(&penalty, lo, hi, cfg.golden_tol);
    let near = profile.nearest(hp);
    let starts = vec![near.params.clone(), vec![0.0; 2 * cfg.n_atoms - 1]];
    let mut fit = field_infimum(hp, base, cost, mu, &starts, cfg)?;
    fit.value -= penalty(hp);
    fit.scalar = Some(hp);
    let mut diagnostics = fit.diagnostics.clone();
    for f in &profile.fits {
        diagnostics.absorb(&f.diagnostics);
    }
    diagnostics.at_bracket_edge = edge;
    fit.diagnostics = diagnostics;
    Ok(fit)
}

/// sup_h inf_ν ( Ψ(ν, h) + ½∫ξ*(r) dν(r) − ½ξ*(2h) ).
pub fn corollary_value(
    xi: &MixtureFunction,
    base: &BaseMeasure,
    cfg: &OptimizerConfig,
) -> Result<VariationalResult> {
    cfg.validate()?;
    let hi = 0.5 * xi.xi_prime(base.D()) + 1.0;
    let cost = |nu: &DiscreteMeasure| -> Result<f64> {
        let mut total = 0.0;
        for (q, w) in nu.iter() {
            total += w * xi.xi_star(q)?;
        }
        Ok(0.5 * total)
    };
    let delta0 = DiscreteMeasure::dirac(0.0)?;
    let reach = xi.xi_prime(base.D());
    let profile = FieldProfile::build(0.0, hi, base, &cost, Some(&delta0), reach, cfg)?;
    let penalty = |h: f64| 0.5 * xi_star_or_inf(xi, 2.0 * h);
    sup_over_field(&profile, penalty, 0.0, hi, base, &cost, Some(&delta0), cfg)
}

/// f(s, h) from [`theorem2_value`] on a grid, sharing one field profile.
/// Rows are indexed by s, columns by h.
pub fn theorem2_grid(
    xi: &MixtureFunction,
    mu: &DiscreteMeasure,
    t: f64,
    s_values: &[f64],
    h_values: &[f64],
    base: &BaseMeasure,
    cfg: &OptimizerConfig,
) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    check_positive("t", t)?;
    if s_values.is_empty() || h_values.is_empty() {
        return Err(Error::InvalidConfig("empty (s, h) grid".into()));
    }
    for &s in s_values {
        check_positive("s", s)?;
    }
    let h_lo = h_values.iter().copied().fold(f64::INFINITY, f64::min);
    let h_hi = h_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s_hi = s_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let top = h_hi + 0.5 * s_hi * xi.xi_prime(base.D()) + 1.0;
    let cost = hopf_lax_cost(xi, mu, t);
    let reach = mu.top() + t * xi.xi_prime(base.D());
    let profile = FieldProfile::build(h_lo, top, base, &cost, Some(mu), reach, cfg)?;
    Ok(s_values
        .iter()
        .map(|&s| {
            h_values
                .iter()
                .map(|&h| {
                    let hi = h + 0.5 * s * xi.xi_prime(base.D()) + 1.0;
                    let penalty = |hp: f64| 0.5 * s * xi_star_or_inf(xi, 2.0 * (hp - h) / s);
                    profile.maximize(penalty, h, hi, cfg.golden_tol).1
                })
                .collect()
        })
        .collect())
}

/// Central-difference residual of 2∂_s f − ξ(∂_h f) at interior grid points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HjCheck {
    /// (s, h, residual) for every interior point.
    pub residuals: Vec<(f64, f64, f64)>,
    pub max_abs: f64,
    /// Points whose residual exceeds the tolerance.
    pub flagged: Vec<(f64, f64, f64)>,
}

fn uniform_step(name: &'static str, v: &[f64]) -> Result<f64> {
    if v.len() < 3 {
        return Err(domain(name, "needs at least 3 grid points"));
    }
    let step = v[1] - v[0];
    if !(step > 0.0) || step > 0.05 + 1e-12 {
        return Err(domain(
            name,
            format!("grid step must lie in (0, 0.05], got {step}"),
        ));
    }
    if v.windows(2)
        .any(|w| ((w[1] - w[0]) - step).abs() > 1e-9 * step.max(1.0))
    {
        return Err(domain(name, "grid must be uniform"));
    }
    Ok(step)
}

pub fn hj_check(
    s_values: &[f64],
    h_values: &[f64],
    f: &[Vec<f64>],
    xi: &MixtureFunction,
    tol: f64,
) -> Result<HjCheck> {
    let ds = uniform_step("s grid", s_values)?;
    let dh = uniform_step("h grid", h_values)?;
    if f.len() != s_values.len() || f.iter().any(|row| row.len() != h_values.len()) {
        return Err(Error::InvalidConfig("f grid shape does not match (s, h)".into()));
    }
    let mut residuals = Vec::new();
    for i in 1..s_values.len() - 1 {
        for j in 1..h_values.len() - 1 {
            let f_s = (f[i + 1][j] - f[i - 1][j]) / (2.0 * ds);
            let f_h = (f[i][j + 1] - f[i][j - 1]) / (2.0 * dh);
            residuals.push((s_values[i], h_values[j], 2.0 * f_s - xi.xi(f_h)));
        }
    }
    let max_abs = residuals.iter().map(|r| r.2.abs()).fold(0.0, f64::max);
    let flagged = residuals.iter().copied().filter(|r| r.2.abs() > tol).collect();
    Ok(HjCheck {
        residuals,
        max_abs,
        flagged,
    })
}
