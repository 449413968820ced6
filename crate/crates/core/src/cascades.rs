//! Finite-level Ruelle probability cascades and hierarchical Gaussian
//! fields indexed by their leaves.
//!
//! The default sampler builds each node's children by Pitman's
//! stick-breaking: the top level is GEM(ζ_1, 0) and the children of a node
//! at depth ℓ follow GEM(ζ_{ℓ+1}, −ζ_ℓ), which is the fragmentation that
//! turns PD(ζ_ℓ, 0) into PD(ζ_{ℓ+1}, 0). Only `M` sticks are drawn per
//! node. The unbroken rest of the stick is kept as a remainder unit hanging
//! off that node, so unit weights always sum to one and the truncated mass
//! still enters every estimator. Below a remainder the field is integrated
//! out analytically.
//!
//! The product-of-Poisson-points construction is available as
//! [`CascadeSampler::PoissonProduct`]. It has no remainder and is noticeably
//! biased for k ≥ 2 at moderate `M`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Exp1, StandardNormal};

use crate::error::{Error, Result};
use crate::measures::DiscreteMeasure;
use crate::parisi_pde::BaseMeasure;
use crate::quadrature::log_sum_exp;
use crate::stats::{replicate_mean, McEstimate};

/// How the per-node point processes are realized.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum CascadeSampler {
    #[default]
    StickBreaking,
    PoissonProduct,
}

/// A weighted atom of the cascade: a leaf at depth k, or the remainder
/// mass of an internal node at depth ℓ < k.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Unit {
    pub depth: usize,
    pub node: usize,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct CascadeTree {
    zetas: Vec<f64>,
    branching: usize,
    /// `parents[ℓ][n]` is the index at depth ℓ − 1 of node n at depth ℓ.
    parents: Vec<Vec<usize>>,
    /// Total weight below each node, by depth. `masses[0] == [1.0]`.
    masses: Vec<Vec<f64>>,
    units: Vec<Unit>,
}

fn validate_zetas(zetas: &[f64]) -> Result<()> {
    let mut prev = 0.0;
    for (i, &z) in zetas.iter().enumerate() {
        if !(z > prev && z < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "cascade parameters must satisfy 0 < ζ_1 < … < ζ_k < 1; ζ_{} = {z}",
                i + 1
            )));
        }
        prev = z;
    }
    Ok(())
}

impl CascadeTree {
    /// Samples a k-level cascade with `branching` children per node.
    pub fn sample(
        zetas: &[f64],
        branching: usize,
        sampler: CascadeSampler,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        validate_zetas(zetas)?;
        if branching == 0 {
            return Err(Error::InvalidConfig("branching must be positive".into()));
        }
        let nodes = (branching as f64).powi(zetas.len() as i32);
        if nodes > 5e7 {
            return Err(Error::TooLarge(format!(
                "{branching}^{} cascade leaves",
                zetas.len()
            )));
        }
        match sampler {
            CascadeSampler::StickBreaking => Self::stick_breaking(zetas, branching, rng),
            CascadeSampler::PoissonProduct => Self::poisson_product(zetas, branching, rng),
        }
    }

    fn stick_breaking(zetas: &[f64], m: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let k = zetas.len();
        let mut parents = vec![Vec::new()];
        let mut masses = vec![vec![1.0]];
        let mut units = Vec::new();
        let mut sticks = Vec::with_capacity(m);
        for l in 0..k {
            let a = zetas[l];
            let theta = if l == 0 { 0.0 } else { -zetas[l - 1] };
            let betas: Vec<Beta<f64>> = (1..=m)
                .map(|i| Beta::new(1.0 - a, theta + i as f64 * a))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Numerical {
                    context: "cascade",
                    detail: e.to_string(),
                })?;
            let mut next_parents = Vec::with_capacity(masses[l].len() * m);
            let mut next_masses = Vec::with_capacity(masses[l].len() * m);
            for (n, &v) in masses[l].iter().enumerate() {
                sticks.clear();
                let mut rest = 1.0;
                for beta in &betas {
                    let w: f64 = beta.sample(rng);
                    sticks.push(rest * w);
                    rest *= 1.0 - w;
                }
                sticks.sort_by(|x, y| y.total_cmp(x));
                for &f in &sticks {
                    next_parents.push(n);
                    next_masses.push(v * f);
                }
                if rest > 0.0 {
                    units.push(Unit {
                        depth: l,
                        node: n,
                        weight: v * rest,
                    });
                }
            }
            parents.push(next_parents);
            masses.push(next_masses);
        }
        units.extend(masses[k].iter().enumerate().map(|(n, &w)| Unit {
            depth: k,
            node: n,
            weight: w,
        }));
        Ok(Self {
            zetas: zetas.to_vec(),
            branching: m,
            parents,
            masses,
            units,
        })
    }

    fn poisson_product(zetas: &[f64], m: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let k = zetas.len();
        let mut parents = vec![Vec::new()];
        let mut log_w = vec![0.0];
        for &z in zetas {
            let mut next_parents = Vec::with_capacity(log_w.len() * m);
            let mut next = Vec::with_capacity(log_w.len() * m);
            for (n, &lw) in log_w.iter().enumerate() {
                let mut gamma = 0.0;
                for _ in 0..m {
                    let e: f64 = Exp1.sample(rng);
                    gamma += e;
                    next_parents.push(n);
                    next.push(lw - gamma.ln() / z);
                }
            }
            parents.push(next_parents);
            log_w = next;
        }
        let norm = log_sum_exp(log_w.iter().copied());
        let leaf: Vec<f64> = log_w.iter().map(|l| (l - norm).exp()).collect();
        let mut masses = vec![Vec::new(); k + 1];
        masses[k] = leaf;
        for l in (0..k).rev() {
            let count = if l == 0 { 1 } else { parents[l].len() };
            let mut up = vec![0.0; count];
            for (n, &w) in masses[l + 1].iter().enumerate() {
                up[parents[l + 1][n]] += w;
            }
            masses[l] = up;
        }
        let units = masses[k]
            .iter()
            .enumerate()
            .map(|(n, &w)| Unit {
                depth: k,
                node: n,
                weight: w,
            })
            .collect();
        Ok(Self {
            zetas: zetas.to_vec(),
            branching: m,
            parents,
            masses,
            units,
        })
    }

    pub fn levels(&self) -> usize {
        self.zetas.len()
    }

    pub fn zetas(&self) -> &[f64] {
        &self.zetas
    }

    pub fn branching(&self) -> usize {
        self.branching
    }

    pub fn units(&self) -> &[Unit] {
        &self.units
    }

    /// Weight below each node at depth ℓ.
    pub fn masses(&self, depth: usize) -> &[f64] {
        &self.masses[depth]
    }

    pub fn parent(&self, depth: usize, node: usize) -> usize {
        self.parents[depth][node]
    }

    /// Leaf weights v_α, without remainders.
    pub fn leaf_weights(&self) -> &[f64] {
        &self.masses[self.levels()]
    }

    pub fn total_weight(&self) -> f64 {
        self.units.iter().map(|u| u.weight).sum()
    }

    /// P(α¹ ∧ α² = ℓ) for two independent draws from this tree, ℓ = 0..=k.
    ///
    /// P(α¹ ∧ α² ≥ ℓ) is the sum of squared subtree weights at depth ℓ.
    pub fn overlap_law(&self) -> Vec<f64> {
        let k = self.levels();
        let at_least: Vec<f64> = (0..=k)
            .map(|l| self.masses[l].iter().map(|v| v * v).sum())
            .chain(std::iter::once(0.0))
            .collect();
        (0..=k).map(|l| at_least[l] - at_least[l + 1]).collect()
    }
}

/// Level values γ_0 ≤ … ≤ γ_k: leaves meeting at depth ℓ have field
/// covariance γ_ℓ.
#[derive(Debug, Clone, PartialEq)]
pub struct HierGaussianSpec {
    levels: Vec<f64>,
}

impl HierGaussianSpec {
    pub fn new(levels: &[f64]) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidConfig("field spec needs at least one level".into()));
        }
        let mut prev = 0.0;
        for (i, &g) in levels.iter().enumerate() {
            if !g.is_finite() || g < prev {
                return Err(Error::InvalidConfig(format!(
                    "field levels must be finite, nonnegative and nondecreasing; γ_{i} = {g}"
                )));
            }
            prev = g;
        }
        Ok(Self {
            levels: levels.to_vec(),
        })
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn top(&self) -> f64 {
        *self.levels.last().expect("nonempty")
    }

    /// Variance of the part of a leaf's field below a unit at `depth`.
    pub fn below(&self, depth: usize) -> f64 {
        self.top() - self.levels[depth]
    }
}

/// Field values at every node, by depth.
#[derive(Debug, Clone)]
pub struct NodeField {
    values: Vec<Vec<f64>>,
}

impl NodeField {
    pub fn at(&self, depth: usize, node: usize) -> f64 {
        self.values[depth][node]
    }

    /// Field value at each unit of `tree`, in unit order.
    pub fn unit_values(&self, tree: &CascadeTree) -> Vec<f64> {
        tree.units.iter().map(|u| self.values[u.depth][u.node]).collect()
    }
}

/// Samples z with 𝔼 z(α¹)z(α²) = γ_{α¹∧α²}: one independent Gaussian per
/// node with variance γ_ℓ − γ_{ℓ−1}, summed along the path from the root.
pub fn sample_field(tree: &CascadeTree, spec: &HierGaussianSpec, rng: &mut ChaCha8Rng) -> Result<NodeField> {
    let k = tree.levels();
    if spec.levels.len() != k + 1 {
        return Err(Error::InvalidConfig(format!(
            "field spec has {} levels, the tree needs {}",
            spec.levels.len(),
            k + 1
        )));
    }
    let mut values = Vec::with_capacity(k + 1);
    let g: f64 = rng.sample(StandardNormal);
    values.push(vec![spec.levels[0].sqrt() * g]);
    for l in 1..=k {
        let sd = (spec.levels[l] - spec.levels[l - 1]).sqrt();
        let prev = &values[l - 1];
        let row: Vec<f64> = tree.parents[l]
            .iter()
            .map(|&p| {
                let g: f64 = rng.sample(StandardNormal);
                prev[p] + sd * g
            })
            .collect();
        values.push(row);
    }
    Ok(NodeField { values })
}

/// log Σ_α v_α e^{y(α)} for one tree and field. Remainder units contribute
/// their weight times e^{y + ½(γ_k − γ_ℓ)}.
pub fn log_partition(tree: &CascadeTree, spec: &HierGaussianSpec, field: &NodeField) -> f64 {
    log_sum_exp(
        tree.units
            .iter()
            .map(|u| u.weight.ln() + field.at(u.depth, u.node) + 0.5 * spec.below(u.depth)),
    )
}

/// Monte Carlo estimate of 𝔼 log Σ_α v_α e^{y(α)} with a fresh tree and
/// field per replication.
pub fn cascade_log_partition(
    zetas: &[f64],
    spec: &HierGaussianSpec,
    branching: usize,
    sampler: CascadeSampler,
    n_samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    validate_zetas(zetas)?;
    if spec.levels.iter().all(|&g| g == 0.0) {
        return Ok(McEstimate {
            mean: 0.0,
            stderr: 0.0,
            n: n_samples,
        });
    }
    replicate_mean(seed, n_samples, |_, rng| {
        let tree = CascadeTree::sample(zetas, branching, sampler, rng)?;
        let field = sample_field(&tree, spec, rng)?;
        Ok(log_partition(&tree, spec, &field))
    })
}

/// Cascade levels and field spec attached to an atomic μ = Σ p_ℓ δ_{q_ℓ}:
/// ζ_ℓ are the cumulative weights below the top atom and γ_ℓ = q_ℓ.
pub fn cascade_for(mu: &DiscreteMeasure) -> Result<(Vec<f64>, HierGaussianSpec)> {
    let levels = mu.levels();
    let zetas = levels[..levels.len() - 1].to_vec();
    Ok((zetas, HierGaussianSpec::new(mu.atoms())?))
}

/// Monte Carlo estimate of
/// 𝔼 log Σ_α v_α ∫ exp(σ z(α) − ½μ⁻¹(1)σ²) dP₁(σ).
pub fn psi_via_cascade(
    mu: &DiscreteMeasure,
    base: &BaseMeasure,
    branching: usize,
    sampler: CascadeSampler,
    n_samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    let (zetas, spec) = cascade_for(mu)?;
    let top = mu.top();
    if top == 0.0 {
        return Ok(McEstimate {
            mean: 0.0,
            stderr: 0.0,
            n: n_samples,
        });
    }
    let spins: Vec<(f64, f64)> = base.points().iter().map(|&(s, p)| (s, p.ln())).collect();
    replicate_mean(seed, n_samples, |_, rng| {
        let tree = CascadeTree::sample(&zetas, branching, sampler, rng)?;
        let field = sample_field(&tree, &spec, rng)?;
        Ok(log_sum_exp(tree.units().iter().map(|u| {
            let z = field.at(u.depth, u.node);
            let below = spec.below(u.depth);
            let inner = log_sum_exp(
                spins
                    .iter()
                    .map(|&(s, lp)| lp + s * z + 0.5 * s * s * (below - top)),
            );
            u.weight.ln() + inner
        })))
    })
}

/// Averages the per-tree overlap law over `n_trees` fresh trees.
pub fn overlap_law_mc(
    zetas: &[f64],
    branching: usize,
    sampler: CascadeSampler,
    n_trees: usize,
    seed: u64,
) -> Result<Vec<McEstimate>> {
    validate_zetas(zetas)?;
    let laws = crate::stats::replicate(seed, n_trees, |_, rng| {
        Ok(CascadeTree::sample(zetas, branching, sampler, rng)?.overlap_law())
    })?;
    Ok((0..=zetas.len())
        .map(|l| {
            laws.iter()
                .map(|law| law[l])
                .collect::<crate::stats::Welford>()
                .estimate()
        })
        .collect())
}
