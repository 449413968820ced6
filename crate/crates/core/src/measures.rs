//! Atomic probability measures on ℝ₊ and the operations built on their
//! quantile functions.
//!
//! Most operations couple two measures through a common uniform variable,
//! X_ρ = ρ^{-1}(U). Both quantile functions are step functions of U, so
//! the coupling is an exact finite list of level intervals on which both
//! quantiles are constant (see [`coupling`]).

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::mixture::MixtureFunction;

/// Atom locations closer than this are merged.
pub const ATOM_TOL: f64 = 1e-12;
/// Tolerance on Σ w = 1 for user-supplied weights.
pub const WEIGHT_TOL: f64 = 1e-12;
/// Cumulative levels closer than this are treated as one breakpoint.
const LEVEL_TOL: f64 = 1e-13;

/// A finitely supported probability measure on ℝ₊.
///
/// Atoms are strictly increasing and weights strictly positive. The
/// cumulative levels ζ_1 < … < ζ_{k+1} = 1 are stored alongside.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    atoms: Vec<f64>,
    weights: Vec<f64>,
    levels: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MeasureRepr {
    atoms: Vec<(f64, f64)>,
}

impl Serialize for DiscreteMeasure {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MeasureRepr {
            atoms: self.iter().collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for DiscreteMeasure {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = MeasureRepr::deserialize(d)?;
        DiscreteMeasure::new(&repr.atoms).map_err(serde::de::Error::custom)
    }
}

/// One interval of the quantile coupling of two measures: on the level
/// interval `(lo, hi]` the first quantile equals `a` and the second `b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingPiece {
    pub lo: f64,
    pub hi: f64,
    pub a: f64,
    pub b: f64,
}

impl CouplingPiece {
    pub fn mass(&self) -> f64 {
        self.hi - self.lo
    }
}

impl DiscreteMeasure {
    /// Builds a measure from `(location, weight)` pairs in any order.
    ///
    /// Locations must be finite and nonnegative, weights positive with sum 1
    /// within [`WEIGHT_TOL`]. Locations within [`ATOM_TOL`] are merged.
    pub fn new(pairs: &[(f64, f64)]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::InvalidMeasure("no atoms".into()));
        }
        let mut total = 0.0;
        for (i, &(q, w)) in pairs.iter().enumerate() {
            if !q.is_finite() || q < 0.0 {
                return Err(Error::InvalidMeasure(format!(
                    "atom {i}: location must be finite and >= 0, got {q}"
                )));
            }
            if !w.is_finite() || w <= 0.0 {
                return Err(Error::InvalidMeasure(format!(
                    "atom {i}: weight must be positive, got {w}"
                )));
            }
            total += w;
        }
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::InvalidMeasure(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        let mut sorted = pairs.to_vec();
        sorted.sort_by(|x, y| x.0.total_cmp(&y.0));
        Ok(Self::from_sorted_unchecked(sorted))
    }

    /// The point mass δ_q.
    pub fn dirac(q: f64) -> Result<Self> {
        Self::new(&[(q, 1.0)])
    }

    /// Builds a measure from a nondecreasing quantile step function given as
    /// `(level mass, value)` pieces. Masses are renormalized to sum to one.
    pub fn from_quantile_pieces(pieces: &[(f64, f64)]) -> Result<Self> {
        let mut sorted: Vec<(f64, f64)> = pieces
            .iter()
            .filter(|(m, _)| *m > 0.0)
            .map(|&(m, v)| (v, m))
            .collect();
        if sorted.is_empty() {
            return Err(Error::InvalidMeasure("no positive mass".into()));
        }
        if let Some(&(v, _)) = sorted.iter().find(|(v, _)| !v.is_finite() || *v < -ATOM_TOL) {
            return Err(Error::InvalidMeasure(format!(
                "quantile value {v} is not a nonnegative real"
            )));
        }
        for p in sorted.iter_mut() {
            p.0 = p.0.max(0.0);
        }
        sorted.sort_by(|x, y| x.0.total_cmp(&y.0));
        let total: f64 = sorted.iter().map(|p| p.1).sum();
        for p in sorted.iter_mut() {
            p.1 /= total;
        }
        Ok(Self::from_sorted_unchecked(sorted))
    }

    fn from_sorted_unchecked(sorted: Vec<(f64, f64)>) -> Self {
        let mut atoms: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut weights: Vec<f64> = Vec::with_capacity(sorted.len());
        for (q, w) in sorted {
            match atoms.last() {
                Some(&last) if q - last <= ATOM_TOL => {
                    *weights.last_mut().unwrap() += w;
                }
                _ => {
                    atoms.push(q);
                    weights.push(w);
                }
            }
        }
        let total: f64 = weights.iter().sum();
        let mut levels = Vec::with_capacity(weights.len());
        let mut acc = 0.0;
        for w in weights.iter_mut() {
            *w /= total;
            acc += *w;
            levels.push(acc);
        }
        *levels.last_mut().unwrap() = 1.0;
        Self {
            atoms,
            weights,
            levels,
        }
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Atom locations q_0 < … < q_k.
    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Cumulative levels ζ_1 < … < ζ_{k+1} = 1, one per atom.
    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.atoms.iter().copied().zip(self.weights.iter().copied())
    }

    /// The largest atom, μ^{-1}(1).
    pub fn top(&self) -> f64 {
        *self.atoms.last().unwrap()
    }

    pub fn mean(&self) -> f64 {
        self.iter().map(|(q, w)| q * w).sum()
    }

    pub fn is_dirac(&self) -> bool {
        self.atoms.len() == 1
    }

    /// Generalized inverse μ^{-1}(r) = inf{s ≥ 0 : μ([0, s]) ≥ r}.
    pub fn quantile(&self, r: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&r) {
            return Err(domain("r", format!("quantile level must lie in [0, 1], got {r}")));
        }
        if r == 0.0 {
            return Ok(0.0);
        }
        let idx = self.levels.partition_point(|&c| c < r);
        Ok(self.atoms[idx.min(self.atoms.len() - 1)])
    }

    /// μ([0, s]).
    pub fn cdf(&self, s: f64) -> f64 {
        let idx = self.atoms.partition_point(|&q| q <= s);
        if idx == 0 {
            0.0
        } else {
            self.levels[idx - 1]
        }
    }

    /// True when ν(s) ≤ μ(s) for every s, i.e. `self` stochastically dominates `other`.
    pub fn dominates(&self, other: &DiscreteMeasure) -> bool {
        coupling(self, other).iter().all(|p| p.a >= p.b - ATOM_TOL)
    }

    /// Breakpoints `(s, μ([0, s]))` of the right-continuous CDF.
    pub fn cdf_breakpoints(&self) -> Vec<(f64, f64)> {
        self.atoms
            .iter()
            .copied()
            .zip(self.levels.iter().copied())
            .collect()
    }

    /// Writes the CDF breakpoints as CSV with header `s,cdf`.
    pub fn write_cdf_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "s,cdf")?;
        for (s, c) in self.cdf_breakpoints() {
            writeln!(out, "{s},{c}")?;
        }
        Ok(())
    }
}

/// The quantile coupling of two measures as a list of level intervals.
pub fn coupling(a: &DiscreteMeasure, b: &DiscreteMeasure) -> Vec<CouplingPiece> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    let mut prev = 0.0;
    while i < a.len() && j < b.len() {
        let (ca, cb) = (a.levels[i], b.levels[j]);
        let next = ca.min(cb);
        if next > prev {
            out.push(CouplingPiece {
                lo: prev,
                hi: next,
                a: a.atoms[i],
                b: b.atoms[j],
            });
            prev = next;
        }
        if ca - next <= LEVEL_TOL {
            i += 1;
        }
        if cb - next <= LEVEL_TOL {
            j += 1;
        }
    }
    out
}

fn from_coupling(
    a: &DiscreteMeasure,
    b: &DiscreteMeasure,
    f: impl Fn(f64, f64) -> f64,
) -> Result<DiscreteMeasure> {
    let pieces: Vec<(f64, f64)> = coupling(a, b).iter().map(|p| (p.mass(), f(p.a, p.b))).collect();
    DiscreteMeasure::from_quantile_pieces(&pieces)
}

/// The measure ζ_μ with quantile ζ_μ^{-1}(x) = ξ'(ζ^{-1}(x)) + μ^{-1}(x).
pub fn zeta_mu(
    xi: &MixtureFunction,
    zeta: &DiscreteMeasure,
    mu: &DiscreteMeasure,
) -> Result<DiscreteMeasure> {
    from_coupling(zeta, mu, |z, m| xi.xi_prime(z) + m)
}

/// 𝔼 ξ*((X_ν − X_μ)/t) under the quantile coupling.
pub fn transport_cost(
    xi: &MixtureFunction,
    nu: &DiscreteMeasure,
    mu: &DiscreteMeasure,
    t: f64,
) -> Result<f64> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(domain("t", format!("must be positive, got {t}")));
    }
    let mut total = 0.0;
    for p in coupling(nu, mu) {
        total += p.mass() * xi.xi_star((p.a - p.b) / t)?;
    }
    Ok(total)
}

/// ∫|μ(s) − ν(s)| ds, which equals 𝔼|X_μ − X_ν| under the quantile coupling.
pub fn cdf_l1_distance(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> f64 {
    coupling(mu, nu)
        .iter()
        .map(|p| p.mass() * (p.a - p.b).abs())
        .sum()
}

/// The measure of min(X_ν, cap): all mass above `cap` moves to `cap`.
pub fn truncate_support(nu: &DiscreteMeasure, cap: f64) -> Result<DiscreteMeasure> {
    if !(cap >= 0.0) || !cap.is_finite() {
        return Err(domain("cap", format!("must be finite and >= 0, got {cap}")));
    }
    let pieces: Vec<(f64, f64)> = nu.iter().map(|(q, w)| (w, q.min(cap))).collect();
    DiscreteMeasure::from_quantile_pieces(&pieces)
}

/// The measure of max(X_ν, X_μ), whose CDF is min(ν(s), μ(s)).
pub fn dominate_truncate(nu: &DiscreteMeasure, mu: &DiscreteMeasure) -> Result<DiscreteMeasure> {
    from_coupling(nu, mu, f64::max)
}

/// Quantile interpolation: the law of (1 − w) X_a + w X_b.
pub fn quantile_interpolate(a: &DiscreteMeasure, b: &DiscreteMeasure, w: f64) -> Result<DiscreteMeasure> {
    if !(0.0..=1.0).contains(&w) {
        return Err(domain("w", format!("must lie in [0, 1], got {w}")));
    }
    from_coupling(a, b, |x, y| (1.0 - w) * x + w * y)
}

/// ∫_0^u ζ(s) dg(s) for the CDF ζ of an atomic measure and a continuous g.
pub fn cdf_stieltjes(zeta: &DiscreteMeasure, g: impl Fn(f64) -> f64, u: f64) -> f64 {
    let mut total = 0.0;
    let q = zeta.atoms();
    let levels = zeta.levels();
    for j in 0..q.len() {
        let lo = q[j];
        if lo >= u {
            break;
        }
        let hi = if j + 1 < q.len() { q[j + 1].min(u) } else { u };
        total += levels[j] * (g(hi) - g(lo));
    }
    total
}
