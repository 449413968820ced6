//! Replication bookkeeping: per-replication random streams and running
//! mean/variance.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::Result;

/// Random stream for replication `index` under a master seed.
pub fn substream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Welford's running mean and variance.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    /// Chan's parallel merge.
    pub fn merge(&mut self, other: &Welford) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        self.mean += d * other.n as f64 / n as f64;
        self.m2 += other.m2 + d * d * (self.n as f64) * (other.n as f64) / n as f64;
        self.n = n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; zero with fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }

    pub fn estimate(&self) -> McEstimate {
        McEstimate {
            mean: self.mean(),
            stderr: self.stderr(),
            n: self.n as usize,
        }
    }
}

impl FromIterator<f64> for Welford {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut w = Welford::new();
        for x in iter {
            w.push(x);
        }
        w
    }
}

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl McEstimate {
    /// |a − b| measured in combined standard errors.
    pub fn z_score(&self, other: &McEstimate) -> f64 {
        let se = self.stderr.hypot(other.stderr);
        if se == 0.0 {
            if self.mean == other.mean {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.mean - other.mean).abs() / se
        }
    }

    /// Whether `value` lies within `k` standard errors of the mean.
    pub fn covers(&self, value: f64, k: f64) -> bool {
        (self.mean - value).abs() <= k * self.stderr
    }
}

/// Runs `n` replications, each on its own substream. Replications run in
/// parallel but the results come back in index order, so the outcome only
/// depends on the seed.
pub fn replicate<T, F>(seed: u64, n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, &mut ChaCha8Rng) -> Result<T> + Sync,
{
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, i as u64);
            f(i, &mut rng)
        })
        .collect()
}

/// [`replicate`] for scalar outputs, summarized as mean ± stderr.
pub fn replicate_mean<F>(seed: u64, n: usize, f: F) -> Result<McEstimate>
where
    F: Fn(usize, &mut ChaCha8Rng) -> Result<f64> + Sync,
{
    let values = replicate(seed, n, f)?;
    Ok(values.into_iter().collect::<Welford>().estimate())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    #[test]
    fn welford_matches_two_pass() {
        let xs = [1.0, 4.0, -2.0, 7.5, 3.25];
        let w: Welford = xs.iter().copied().collect();
        let mean = xs.iter().sum::<f64>() / 5.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0;
        assert_abs_diff_eq!(w.mean(), mean, epsilon = 1e-14);
        assert_abs_diff_eq!(w.variance(), var, epsilon = 1e-12);
        let mut a: Welford = xs[..2].iter().copied().collect();
        let b: Welford = xs[2..].iter().copied().collect();
        a.merge(&b);
        assert_abs_diff_eq!(a.mean(), mean, epsilon = 1e-14);
        assert_abs_diff_eq!(a.variance(), var, epsilon = 1e-12);
    }

    #[test]
    fn substreams_are_distinct_and_reproducible() {
        let a: u64 = substream(7, 0).random();
        let b: u64 = substream(7, 1).random();
        let c: u64 = substream(7, 0).random();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn replicate_is_ordered() {
        let v = replicate(3, 50, |i, _| Ok(i)).unwrap();
        assert_eq!(v, (0..50).collect::<Vec<_>>());
        let a = replicate_mean(5, 40, |_, rng| Ok(rng.random::<f64>())).unwrap();
        let b = replicate_mean(5, 40, |_, rng| Ok(rng.random::<f64>())).unwrap();
        assert_eq!(a, b);
    }
}
