//! Finite-N free energies by exact enumeration of spin configurations,
//! averaged over Gaussian disorder and cascade randomness.
//!
//! The Hamiltonian is sampled from an explicit factor Φ with ΦΦᵀ equal to
//! the covariance Nξ(σ·τ/N): one column per monomial Π σ_i^{m_i}, with
//! variance β_p² N^{1−p} p!/Π m_i!. Columns that coincide as functions on
//! the support are merged. Columns that are constant on the support only
//! shift log Z by a centered Gaussian, so they are left out of the sampled
//! field; the estimator stays unbiased with smaller variance.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::cascades::{cascade_for, sample_field, CascadeSampler, CascadeTree, HierGaussianSpec, NodeField};
use crate::error::{Error, Result};
use crate::measures::DiscreteMeasure;
use crate::mixture::MixtureFunction;
use crate::parisi_pde::BaseMeasure;
use crate::stats::{replicate, McEstimate, Welford};

/// Upper bound on the number of enumerated configurations.
pub const MAX_CONFIGS: usize = 200_000;
const MAX_FEATURES: usize = 1_000_000;
const CHOLESKY_MAX_CONFIGS: usize = 4096;
const CHOLESKY_JITTER: f64 = 1e-10;

/// How the Gaussian field H_N is drawn on the configuration set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum DisorderSampler {
    /// Monomial factor with constant columns dropped.
    #[default]
    Monomial,
    /// Cholesky factor of the full covariance matrix.
    Cholesky,
}

/// Monte Carlo settings shared by the estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct McConfig {
    pub replications: usize,
    /// Children drawn per cascade node.
    pub branching: usize,
    pub seed: u64,
    pub cascade: CascadeSampler,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            replications: 200,
            branching: 100,
            seed: 0,
            cascade: CascadeSampler::default(),
        }
    }
}

/// Mean ± stderr of a free-energy estimator with its parameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct FreeEnergyEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_replications: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub t: f64,
    pub s: f64,
    pub h: f64,
}

impl FreeEnergyEstimate {
    pub fn as_mc(&self) -> McEstimate {
        McEstimate {
            mean: self.mean,
            stderr: self.stderr,
            n: self.n_replications,
        }
    }
}

enum Disorder {
    /// Row-major C × F matrix, coefficients folded in.
    Features {
        phi: Vec<f64>,
        width: usize,
        constant_var: f64,
    },
    /// Row-major lower-triangular factor.
    Cholesky { l: Vec<f64> },
}

/// A finite-N model with its enumerated configuration space.
pub struct ModelInstance {
    n: usize,
    xi: MixtureFunction,
    base: BaseMeasure,
    mu: DiscreteMeasure,
    t: f64,
    s: f64,
    h: f64,
    /// Row-major C × N spins.
    spins: Vec<f64>,
    log_prob: Vec<f64>,
    /// |σ|² per configuration.
    sq: Vec<f64>,
    disorder: Disorder,
    zetas: Vec<f64>,
    spec: HierGaussianSpec,
}

impl std::fmt::Debug for ModelInstance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelInstance")
            .field("n", &self.n)
            .field("configs", &self.configs())
            .field("t", &self.t)
            .field("s", &self.s)
            .field("h", &self.h)
            .finish_non_exhaustive()
    }
}

/// Canonical exponent for each power 0..=max_p: the smallest exponent with
/// the same values on the support. 0 marks powers identically equal to 1.
fn canonical_powers(support: &[f64], max_p: usize) -> Vec<usize> {
    let powers: Vec<Vec<f64>> = (0..=max_p)
        .map(|e| support.iter().map(|s| s.powi(e as i32)).collect())
        .collect();
    (0..=max_p)
        .map(|e| (0..=e).find(|&c| powers[c] == powers[e]).unwrap_or(e))
        .collect()
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// A monomial as (site, canonical power) pairs, with its coefficient.
type Feature = (Vec<(usize, usize)>, f64);

/// Merged monomial features: key is a list of (site, canonical power).
fn monomial_features(xi: &MixtureFunction, n: usize, support: &[f64]) -> Result<(Vec<Feature>, f64)> {
    let max_p = xi.degree() as usize;
    let canon = canonical_powers(support, max_p);
    let mut features: BTreeMap<Vec<(usize, usize)>, f64> = BTreeMap::new();
    let mut constant_var = 0.0;
    for term in xi.terms() {
        let p = term.p as usize;
        let count = binomial(n + p - 1, p);
        if count > MAX_FEATURES as f64 {
            return Err(Error::TooLarge(format!(
                "{count} monomials of degree {p} on {n} sites"
            )));
        }
        let scale = term.coeff * (n as f64).powi(1 - p as i32) * factorial(p);
        // Nondecreasing index tuples enumerate multisets of size p.
        let mut idx = vec![0usize; p];
        loop {
            let mut key = Vec::new();
            let mut denom = 1.0;
            let mut j = 0;
            while j < p {
                let mut r = j;
                while r < p && idx[r] == idx[j] {
                    r += 1;
                }
                let mult = r - j;
                denom *= factorial(mult);
                let c = canon[mult];
                if c != 0 {
                    key.push((idx[j], c));
                }
                j = r;
            }
            let var = scale / denom;
            if key.is_empty() {
                constant_var += var;
            } else {
                *features.entry(key).or_insert(0.0) += var;
            }
            // Advance to the next nondecreasing tuple.
            let mut pos = p;
            while pos > 0 && idx[pos - 1] == n - 1 {
                pos -= 1;
            }
            if pos == 0 {
                break;
            }
            idx[pos - 1] += 1;
            let v = idx[pos - 1];
            for x in &mut idx[pos..] {
                *x = v;
            }
        }
    }
    Ok((features.into_iter().collect(), constant_var))
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).map(|i| (n - i) as f64 / (i + 1) as f64).product()
}

impl ModelInstance {
    /// Enumerates the configurations of an `n`-spin model at time `t`.
    pub fn new(
        n: usize,
        xi: MixtureFunction,
        base: BaseMeasure,
        mu: DiscreteMeasure,
        t: f64,
    ) -> Result<Self> {
        Self::with_sampler(n, xi, base, mu, t, DisorderSampler::default())
    }

    pub fn with_sampler(
        n: usize,
        xi: MixtureFunction,
        base: BaseMeasure,
        mu: DiscreteMeasure,
        t: f64,
        sampler: DisorderSampler,
    ) -> Result<Self> {
        if n == 0 {
            return Err(crate::error::domain("N", "must be at least 1"));
        }
        if !(t >= 0.0) || !t.is_finite() {
            return Err(crate::error::domain("t", format!("must be nonnegative, got {t}")));
        }
        let q = base.len();
        let configs = (q as f64).powi(n as i32);
        if configs > MAX_CONFIGS as f64 {
            return Err(Error::TooLarge(format!(
                "{q}^{n} = {configs} configurations exceeds {MAX_CONFIGS}"
            )));
        }
        let c_count = configs as usize;
        let points = base.points();
        let mut spins = Vec::with_capacity(c_count * n);
        let mut log_prob = Vec::with_capacity(c_count);
        let mut sq = Vec::with_capacity(c_count);
        let mut digits = vec![0usize; n];
        for _ in 0..c_count {
            let mut lp = 0.0;
            let mut s2 = 0.0;
            for &d in &digits {
                let (s, p) = points[d];
                spins.push(s);
                lp += p.ln();
                s2 += s * s;
            }
            log_prob.push(lp);
            sq.push(s2);
            for d in digits.iter_mut() {
                *d += 1;
                if *d < q {
                    break;
                }
                *d = 0;
            }
        }

        let support: Vec<f64> = points.iter().map(|p| p.0).collect();
        let disorder = match sampler {
            DisorderSampler::Monomial => {
                let (features, constant_var) = monomial_features(&xi, n, &support)?;
                let width = features.len();
                let mut phi = vec![0.0; c_count * width];
                for c in 0..c_count {
                    let sigma = &spins[c * n..(c + 1) * n];
                    for (f, (key, var)) in features.iter().enumerate() {
                        let mono: f64 = key.iter().map(|&(i, e)| sigma[i].powi(e as i32)).product();
                        phi[c * width + f] = var.sqrt() * mono;
                    }
                }
                Disorder::Features {
                    phi,
                    width,
                    constant_var,
                }
            }
            DisorderSampler::Cholesky => {
                if c_count > CHOLESKY_MAX_CONFIGS {
                    return Err(Error::TooLarge(format!(
                        "Cholesky sampling is limited to {CHOLESKY_MAX_CONFIGS} configurations"
                    )));
                }
                Disorder::Cholesky {
                    l: cholesky_factor(&xi, n, &spins, c_count)?,
                }
            }
        };
        let (zetas, spec) = cascade_for(&mu)?;
        Ok(Self {
            n,
            xi,
            base,
            mu,
            t,
            s: 0.0,
            h: 0.0,
            spins,
            log_prob,
            sq,
            disorder,
            zetas,
            spec,
        })
    }

    /// Sets the extra parameters (s, h) of the enriched free energy.
    pub fn with_sh(mut self, s: f64, h: f64) -> Result<Self> {
        if !(s >= 0.0) || !s.is_finite() {
            return Err(crate::error::domain("s", format!("must be nonnegative, got {s}")));
        }
        if !h.is_finite() {
            return Err(crate::error::domain("h", format!("must be finite, got {h}")));
        }
        self.s = s;
        self.h = h;
        Ok(self)
    }

    #[allow(non_snake_case)]
    pub fn N(&self) -> usize {
        self.n
    }

    pub fn configs(&self) -> usize {
        self.log_prob.len()
    }

    pub fn mixture(&self) -> &MixtureFunction {
        &self.xi
    }

    pub fn base(&self) -> &BaseMeasure {
        &self.base
    }

    pub fn mu(&self) -> &DiscreteMeasure {
        &self.mu
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// |σ|²/N for every configuration.
    pub fn self_overlaps(&self) -> Vec<f64> {
        self.sq.iter().map(|s| s / self.n as f64).collect()
    }

    fn sigma(&self, c: usize) -> &[f64] {
        &self.spins[c * self.n..(c + 1) * self.n]
    }

    /// Samples H_N on all configurations.
    fn sample_hamiltonian(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let c_count = self.configs();
        match &self.disorder {
            Disorder::Features { phi, width, .. } => {
                let g: Vec<f64> = (0..*width).map(|_| rng.sample(StandardNormal)).collect();
                (0..c_count)
                    .map(|c| {
                        phi[c * width..(c + 1) * width]
                            .iter()
                            .zip(&g)
                            .map(|(a, b)| a * b)
                            .sum()
                    })
                    .collect()
            }
            Disorder::Cholesky { l } => {
                let g: Vec<f64> = (0..c_count).map(|_| rng.sample(StandardNormal)).collect();
                (0..c_count)
                    .map(|c| {
                        l[c * c_count..c * c_count + c + 1]
                            .iter()
                            .zip(&g)
                            .map(|(a, b)| a * b)
                            .sum()
                    })
                    .collect()
            }
        }
    }

    /// ⟨ξ(R_{1,2})⟩ for a Gibbs σ-marginal `g`, via ΦᵀG.
    fn gibbs_xi_overlap(&self, g: &[f64]) -> f64 {
        let n = self.n as f64;
        match &self.disorder {
            Disorder::Features {
                phi,
                width,
                constant_var,
            } => {
                let mut proj = vec![0.0; *width];
                for (c, &gc) in g.iter().enumerate() {
                    if gc == 0.0 {
                        continue;
                    }
                    for (p, v) in proj.iter_mut().zip(&phi[c * width..(c + 1) * width]) {
                        *p += gc * v;
                    }
                }
                let total: f64 = g.iter().sum();
                (proj.iter().map(|p| p * p).sum::<f64>() + constant_var * total * total) / n
            }
            Disorder::Cholesky { .. } => {
                let mut acc = 0.0;
                for (c, &gc) in g.iter().enumerate() {
                    let sc = self.sigma(c);
                    for (d, &gd) in g.iter().enumerate() {
                        let dot: f64 = sc.iter().zip(self.sigma(d)).map(|(a, b)| a * b).sum();
                        acc += gc * gd * self.xi.xi(dot / n);
                    }
                }
                acc
            }
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng, cascade: CascadeSampler, branching: usize) -> Result<Draw> {
        let energy: Vec<f64> = if self.t > 0.0 {
            let st = self.t.sqrt();
            self.sample_hamiltonian(rng).into_iter().map(|e| st * e).collect()
        } else {
            vec![0.0; self.configs()]
        };
        let tree = CascadeTree::sample(&self.zetas, branching, cascade, rng)?;
        let fields: Vec<NodeField> = (0..self.n)
            .map(|_| sample_field(&tree, &self.spec, rng))
            .collect::<Result<_>>()?;
        let units = tree.units();
        let mut unit_z = vec![0.0; units.len() * self.n];
        for (u, unit) in units.iter().enumerate() {
            for (i, f) in fields.iter().enumerate() {
                unit_z[u * self.n + i] = f.at(unit.depth, unit.node);
            }
        }
        let unit_log_w = units.iter().map(|u| u.weight.ln()).collect();
        let unit_below = units.iter().map(|u| 0.5 * self.spec.below(u.depth)).collect();
        Ok(Draw {
            energy,
            tree,
            unit_z,
            unit_log_w,
            unit_below,
        })
    }

    /// Cascade part of the exponent for configuration c and unit u.
    #[inline]
    fn cascade_term(&self, draw: &Draw, c: usize, u: usize) -> f64 {
        let sigma = self.sigma(c);
        let z = &draw.unit_z[u * self.n..(u + 1) * self.n];
        let dot: f64 = sigma.iter().zip(z).map(|(a, b)| a * b).sum();
        draw.unit_log_w[u] + dot + draw.unit_below[u] * self.sq[c]
    }

    /// log Σ_α v_α exp(σ·z_α) for each configuration.
    fn cascade_logs(&self, draw: &Draw) -> Vec<f64> {
        let units = draw.unit_log_w.len();
        (0..self.configs())
            .map(|c| {
                if units == 1 {
                    self.cascade_term(draw, c, 0)
                } else {
                    lse((0..units).map(|u| self.cascade_term(draw, c, u)))
                }
            })
            .collect()
    }

    /// Configuration part of the 𝖥_N exponent at (s, h).
    fn config_term(&self, draw: &Draw, c: usize, s: f64, h: f64) -> f64 {
        let n = self.n as f64;
        let x = self.sq[c] / n;
        self.log_prob[c] + draw.energy[c]
            - 0.5 * n * (self.t - s) * self.xi.xi(x)
            - 0.5 * self.mu.top() * self.sq[c]
            + h * self.sq[c]
    }

    fn check_reps(reps: usize) -> Result<()> {
        if reps == 0 {
            return Err(Error::InvalidConfig("replications must be positive".into()));
        }
        Ok(())
    }

    fn estimate(&self, mc: &McConfig, s: f64, h: f64) -> Result<FreeEnergyEstimate> {
        Self::check_reps(mc.replications)?;
        let n = self.n as f64;
        let values = replicate(mc.seed, mc.replications, |_, rng| {
            let draw = self.draw(rng, mc.cascade, mc.branching)?;
            let logs = self.cascade_logs(&draw);
            let total = lse((0..self.configs()).map(|c| self.config_term(&draw, c, s, h) + logs[c]));
            Ok(total / n)
        })?;
        let w: Welford = values.into_iter().collect();
        Ok(FreeEnergyEstimate {
            mean: w.mean(),
            stderr: w.stderr(),
            n_replications: mc.replications,
            n: self.n,
            t: self.t,
            s,
            h,
        })
    }
}

fn cholesky_factor(xi: &MixtureFunction, n: usize, spins: &[f64], c_count: usize) -> Result<Vec<f64>> {
    let nf = n as f64;
    let cov = nalgebra::DMatrix::from_fn(c_count, c_count, |a, b| {
        let dot: f64 = spins[a * n..(a + 1) * n]
            .iter()
            .zip(&spins[b * n..(b + 1) * n])
            .map(|(x, y)| x * y)
            .sum();
        nf * xi.xi(dot / nf) + if a == b { CHOLESKY_JITTER } else { 0.0 }
    });
    let chol = nalgebra::Cholesky::new(cov).ok_or_else(|| Error::Numerical {
        context: "cholesky",
        detail: format!("covariance of {c_count} configurations is not positive definite"),
    })?;
    let l = chol.l();
    let mut out = vec![0.0; c_count * c_count];
    for a in 0..c_count {
        for b in 0..=a {
            out[a * c_count + b] = l[(a, b)];
        }
    }
    Ok(out)
}

struct Draw {
    /// √t H_N(σ).
    energy: Vec<f64>,
    tree: CascadeTree,
    /// Row-major units × N field values.
    unit_z: Vec<f64>,
    unit_log_w: Vec<f64>,
    /// ½(q_k − q_ℓ) for a unit attached at depth ℓ.
    unit_below: Vec<f64>,
}

fn lse(values: impl Iterator<Item = f64> + Clone) -> f64 {
    crate::quadrature::log_sum_exp(values)
}

/// F_N(t, μ).
pub fn estimate_f(model: &ModelInstance, mc: &McConfig) -> Result<FreeEnergyEstimate> {
    model.estimate(mc, 0.0, 0.0)
}

/// 𝖥_N(s, t, μ, h) with the model's (s, h).
pub fn estimate_f_sth(model: &ModelInstance, mc: &McConfig) -> Result<FreeEnergyEstimate> {
    model.estimate(mc, model.s, model.h)
}

/// p_N^ε(u): the estimator restricted to N⁻¹|σ|² ∈ (u − ε, u + ε), without
/// the ξ and μ⁻¹(1) corrections.
pub fn estimate_p_eps(model: &ModelInstance, u: f64, eps: f64, mc: &McConfig) -> Result<FreeEnergyEstimate> {
    ModelInstance::check_reps(mc.replications)?;
    if !(eps > 0.0) {
        return Err(crate::error::domain(
            "eps",
            format!("must be positive, got {eps}"),
        ));
    }
    let n = model.n as f64;
    let band: Vec<usize> = (0..model.configs())
        .filter(|&c| (model.sq[c] / n - u).abs() < eps)
        .collect();
    if band.is_empty() {
        return Err(Error::EmptyBand(format!(
            "no configuration has |σ|²/N within {eps} of {u}"
        )));
    }
    let values = replicate(mc.seed, mc.replications, |_, rng| {
        let draw = model.draw(rng, mc.cascade, mc.branching)?;
        let units = draw.unit_log_w.len();
        let total = lse(band.iter().map(|&c| {
            let cascade = lse((0..units).map(|u| model.cascade_term(&draw, c, u)));
            model.log_prob[c] + draw.energy[c] + cascade
        }));
        Ok(total / n)
    })?;
    let w: Welford = values.into_iter().collect();
    Ok(FreeEnergyEstimate {
        mean: w.mean(),
        stderr: w.stderr(),
        n_replications: mc.replications,
        n: model.n,
        t: model.t,
        s: 0.0,
        h: 0.0,
    })
}

/// Components of the synchronization residual
/// 𝔼⟨ξ(R₁₂)⟩ − Σ_ℓ p_ℓ ξ(p_ℓ⁻¹ 𝔼⟨R₁₂ 1{α¹∧α² = ℓ}⟩).
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct HjResidual {
    pub residual: f64,
    pub stderr: f64,
    /// 𝔼⟨ξ(R₁₂)⟩.
    pub xi_overlap: McEstimate,
    /// 𝔼⟨R₁₂ 1{α¹∧α² = ℓ}⟩ for ℓ = 0..=k.
    pub level_overlaps: Vec<McEstimate>,
    /// p_ℓ = μ({q_ℓ}).
    pub level_weights: Vec<f64>,
}

/// Estimates the synchronization residual from exact Gibbs averages on
/// each disorder draw.
pub fn hj_residual(model: &ModelInstance, mc: &McConfig) -> Result<HjResidual> {
    ModelInstance::check_reps(mc.replications)?;
    let k = model.zetas.len();
    let n = model.n;
    let (s, h) = (model.s, model.h);
    let per_rep = replicate(mc.seed, mc.replications, |_, rng| {
        let draw = model.draw(rng, mc.cascade, mc.branching)?;
        let units = draw.unit_log_w.len();
        let logs = model.cascade_logs(&draw);
        let a: Vec<f64> = (0..model.configs())
            .map(|c| model.config_term(&draw, c, s, h))
            .collect();
        let log_z = lse((0..model.configs()).map(|c| a[c] + logs[c]));
        let marginal: Vec<f64> = (0..model.configs())
            .map(|c| (a[c] + logs[c] - log_z).exp())
            .collect();
        let xi_r = model.gibbs_xi_overlap(&marginal);

        // m_u = Σ_σ G(σ, u) σ, then aggregated up the tree.
        let mut m = vec![0.0; units * n];
        for c in 0..model.configs() {
            if marginal[c] == 0.0 {
                continue;
            }
            let sigma = model.sigma(c);
            for u in 0..units {
                let g = (a[c] + model.cascade_term(&draw, c, u) - log_z).exp();
                for (mi, si) in m[u * n..(u + 1) * n].iter_mut().zip(sigma) {
                    *mi += g * si;
                }
            }
        }
        let tree = &draw.tree;
        let mut by_depth: Vec<Vec<f64>> = (0..=k).map(|l| vec![0.0; tree.masses(l).len() * n]).collect();
        for (u, unit) in tree.units().iter().enumerate() {
            let row = &mut by_depth[unit.depth][unit.node * n..(unit.node + 1) * n];
            for (r, v) in row.iter_mut().zip(&m[u * n..(u + 1) * n]) {
                *r += v;
            }
        }
        for l in (1..=k).rev() {
            let (upper, lower) = by_depth.split_at_mut(l);
            let parent = &mut upper[l - 1];
            for node in 0..tree.masses(l).len() {
                let p = tree.parent(l, node);
                for i in 0..n {
                    parent[p * n + i] += lower[0][node * n + i];
                }
            }
        }
        let at_least: Vec<f64> = by_depth
            .iter()
            .map(|row| row.iter().map(|v| v * v).sum::<f64>() / n as f64)
            .collect();
        let levels: Vec<f64> = (0..=k)
            .map(|l| at_least[l] - if l < k { at_least[l + 1] } else { 0.0 })
            .collect();
        Ok((xi_r, levels))
    })?;

    let xi_overlap: Welford = per_rep.iter().map(|r| r.0).collect();
    let level_stats: Vec<Welford> = (0..=k)
        .map(|l| per_rep.iter().map(|r| r.1[l]).collect())
        .collect();
    let p: Vec<f64> = model.mu.weights().to_vec();
    let xi = &model.xi;
    let mut residual = xi_overlap.mean();
    let mut slopes = Vec::with_capacity(k + 1);
    for l in 0..=k {
        let b = level_stats[l].mean() / p[l];
        residual -= p[l] * xi.xi(b);
        slopes.push(xi.xi_prime(b));
    }
    // Delta method on the linearized per-replication values.
    let linear: Welford = per_rep
        .iter()
        .map(|(x, ys)| x - slopes.iter().zip(ys).map(|(s, y)| s * y).sum::<f64>())
        .collect();
    Ok(HjResidual {
        residual,
        stderr: linear.stderr(),
        xi_overlap: xi_overlap.estimate(),
        level_overlaps: level_stats.iter().map(|w| w.estimate()).collect(),
        level_weights: p,
    })
}

/// Finite differences of the single-draw estimator against the Gibbs
/// formulas for ∂_h, ∂_h² and ∂_s, and the chain
/// |2∂_s − ξ(∂_h)| ≤ C⟨|x − ⟨x⟩|⟩ ≤ C (∂_h²/N)^{1/2}, x = N⁻¹|σ|², C = ξ'(D).
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct HDerivativeReport {
    pub fd_dh: f64,
    pub gibbs_dh: f64,
    pub fd_dh2: f64,
    pub gibbs_dh2: f64,
    pub fd_ds: f64,
    pub gibbs_ds: f64,
    pub hj_gap: f64,
    pub middle_bound: f64,
    pub upper_bound: f64,
    pub chain_holds: bool,
}

impl HDerivativeReport {
    pub fn max_fd_error(&self) -> f64 {
        (self.fd_dh - self.gibbs_dh)
            .abs()
            .max((self.fd_dh2 - self.gibbs_dh2).abs())
            .max((self.fd_ds - self.gibbs_ds).abs())
    }
}

/// Derivative checks on one disorder draw (replication `0` of `mc.seed`).
pub fn h_derivative_checks(model: &ModelInstance, delta_h: f64, mc: &McConfig) -> Result<HDerivativeReport> {
    if !(delta_h > 0.0) {
        return Err(crate::error::domain(
            "delta_h",
            format!("must be positive, got {delta_h}"),
        ));
    }
    let mut rng = crate::stats::substream(mc.seed, 0);
    let draw = model.draw(&mut rng, mc.cascade, mc.branching)?;
    let logs = model.cascade_logs(&draw);
    let n = model.n as f64;
    let (s, h) = (model.s, model.h);
    let f =
        |s: f64, h: f64| lse((0..model.configs()).map(|c| model.config_term(&draw, c, s, h) + logs[c])) / n;
    let f0 = f(s, h);
    let fd_dh = (f(s, h + delta_h) - f(s, h - delta_h)) / (2.0 * delta_h);
    let fd_dh2 = (f(s, h + delta_h) - 2.0 * f0 + f(s, h - delta_h)) / (delta_h * delta_h);
    // One-sided at s = 0, central otherwise.
    let fd_ds = if s >= delta_h {
        (f(s + delta_h, h) - f(s - delta_h, h)) / (2.0 * delta_h)
    } else {
        (-3.0 * f0 + 4.0 * f(s + delta_h, h) - f(s + 2.0 * delta_h, h)) / (2.0 * delta_h)
    };

    let log_z = f0 * n;
    let gibbs: Vec<f64> = (0..model.configs())
        .map(|c| (model.config_term(&draw, c, s, h) + logs[c] - log_z).exp())
        .collect();
    let x: Vec<f64> = model.sq.iter().map(|v| v / n).collect();
    let mean_x: f64 = gibbs.iter().zip(&x).map(|(g, x)| g * x).sum();
    let var_x: f64 = gibbs.iter().zip(&x).map(|(g, x)| g * (x - mean_x).powi(2)).sum();
    let mean_xi: f64 = gibbs.iter().zip(&x).map(|(g, x)| g * model.xi.xi(*x)).sum();
    let abs_dev: f64 = gibbs.iter().zip(&x).map(|(g, x)| g * (x - mean_x).abs()).sum();
    let c = model.xi.xi_prime(model.base.D());
    let gibbs_dh2 = n * var_x;
    let hj_gap = (mean_xi - model.xi.xi(mean_x)).abs();
    let middle_bound = c * abs_dev;
    let upper_bound = c * (gibbs_dh2 / n).sqrt();
    let slack = 1e-12;
    Ok(HDerivativeReport {
        fd_dh,
        gibbs_dh: mean_x,
        fd_dh2,
        gibbs_dh2,
        fd_ds,
        gibbs_ds: 0.5 * mean_xi,
        hj_gap,
        middle_bound,
        upper_bound,
        chain_holds: hj_gap <= middle_bound + slack && middle_bound <= upper_bound + slack,
    })
}
