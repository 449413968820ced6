//! Gauss-Hermite rules for Gaussian expectations and a natural cubic
//! spline on a uniform grid.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{Error, Result};

/// Gauss-Hermite rule normalized for 𝔼 f(G), G ~ N(0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    /// Builds the `n`-point rule by Newton iteration on the orthonormal
    /// Hermite recurrence, then rescales to the standard normal density.
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidConfig(
                "Gauss-Hermite order must be positive".into(),
            ));
        }
        const PIM4: f64 = 0.751_125_544_464_942_5; // π^{-1/4}
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        let nf = n as f64;
        let mut z = 0.0_f64;
        for i in 0..n.div_ceil(2) {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.855_75 * (2.0 * nf + 1.0).powf(-0.166_67),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * x[0],
                3 => 1.91 * z - 0.91 * x[1],
                _ => 2.0 * z - x[i - 2],
            };
            let mut pp = 0.0;
            let mut converged = false;
            for _ in 0..200 {
                let (mut p1, mut p2) = (PIM4, 0.0_f64);
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::Numerical {
                    context: "gauss_hermite",
                    detail: format!("node {i} of the {n}-point rule did not converge"),
                });
            }
            x[i] = z;
            x[n - 1 - i] = -z;
            w[i] = 2.0 / (pp * pp);
            w[n - 1 - i] = w[i];
        }
        let sqrt_pi = std::f64::consts::PI.sqrt();
        // Ascending order, physicists' x ↦ √2 x.
        let mut pairs: Vec<(f64, f64)> = x
            .iter()
            .zip(&w)
            .map(|(&xi, &wi)| (std::f64::consts::SQRT_2 * xi, wi / sqrt_pi))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1).collect(),
        })
    }

    /// Shared rule of order `n`, built once per process.
    pub fn cached(n: usize) -> Result<Arc<Self>> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<GaussHermite>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(Default::default);
        if let Some(gh) = cache.lock().unwrap().get(&n) {
            return Ok(gh.clone());
        }
        let gh = Arc::new(Self::new(n)?);
        cache.lock().unwrap().insert(n, gh.clone());
        Ok(gh)
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// 𝔼 f(G).
    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&y, &w)| w * f(y))
            .sum()
    }
}

/// Natural cubic spline through samples on a uniform grid, extended
/// linearly beyond both ends.
#[derive(Debug, Clone)]
pub struct UniformSpline {
    x0: f64,
    step: f64,
    values: Vec<f64>,
    second: Vec<f64>,
    slope_left: f64,
    slope_right: f64,
}

impl UniformSpline {
    pub fn new(x0: f64, step: f64, values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        if n < 3 {
            return Err(Error::InvalidConfig("spline needs at least three samples".into()));
        }
        if !(step > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "spline step must be positive, got {step}"
            )));
        }
        // Thomas algorithm for m_{i-1} + 4 m_i + m_{i+1} = 6 Δ²f_i / h², m_0 = m_{n-1} = 0.
        let mut second = vec![0.0; n];
        let inner = n - 2;
        let mut c = vec![0.0; inner];
        let mut d = vec![0.0; inner];
        let scale = 6.0 / (step * step);
        for k in 0..inner {
            let i = k + 1;
            let rhs = scale * (values[i + 1] - 2.0 * values[i] + values[i - 1]);
            if k == 0 {
                c[k] = 1.0 / 4.0;
                d[k] = rhs / 4.0;
            } else {
                let denom = 4.0 - c[k - 1];
                c[k] = 1.0 / denom;
                d[k] = (rhs - d[k - 1]) / denom;
            }
        }
        for k in (0..inner).rev() {
            let next = if k + 1 < inner { second[k + 2] } else { 0.0 };
            second[k + 1] = d[k] - c[k] * next;
        }
        let slope_left = (values[1] - values[0]) / step - step * (2.0 * second[0] + second[1]) / 6.0;
        let slope_right =
            (values[n - 1] - values[n - 2]) / step + step * (second[n - 2] + 2.0 * second[n - 1]) / 6.0;
        Ok(Self {
            x0,
            step,
            values,
            second,
            slope_left,
            slope_right,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn x_max(&self) -> f64 {
        self.x0 + self.step * (self.values.len() - 1) as f64
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.values.len();
        let u = (x - self.x0) / self.step;
        if u <= 0.0 {
            return self.values[0] + self.slope_left * (x - self.x0);
        }
        if u >= (n - 1) as f64 {
            return self.values[n - 1] + self.slope_right * (x - self.x_max());
        }
        let m = (u.floor() as usize).min(n - 2);
        self.segment(m, u - m as f64)
    }

    #[inline]
    fn segment(&self, m: usize, t: f64) -> f64 {
        let s = 1.0 - t;
        let h2 = self.step * self.step / 6.0;
        s * self.values[m]
            + t * self.values[m + 1]
            + h2 * ((s * s * s - s) * self.second[m] + (t * t * t - t) * self.second[m + 1])
    }

    /// Writes S(x_i + delta) for every grid point x_i into `out`.
    ///
    /// The shift is common to all points, so every interior evaluation uses
    /// the same four cubic weights.
    pub fn eval_shifted(&self, delta: f64, out: &mut [f64]) {
        let n = self.values.len();
        debug_assert_eq!(out.len(), n);
        let shift = delta / self.step;
        let whole = shift.floor();
        let t = shift - whole;
        let whole = whole as isize;
        let s = 1.0 - t;
        let h2 = self.step * self.step / 6.0;
        let (wa, wb) = (s, t);
        let (wc, wd) = (h2 * (s * s * s - s), h2 * (t * t * t - t));
        for (i, o) in out.iter_mut().enumerate() {
            let m = i as isize + whole;
            *o = if m < 0 {
                let x = self.x0 + self.step * (i as f64) + delta;
                self.values[0] + self.slope_left * (x - self.x0)
            } else if m as usize >= n - 1 {
                let x = self.x0 + self.step * (i as f64) + delta;
                self.values[n - 1] + self.slope_right * (x - self.x_max())
            } else {
                let m = m as usize;
                wa * self.values[m] + wb * self.values[m + 1] + wc * self.second[m] + wd * self.second[m + 1]
            };
        }
    }
}

/// Numerically stable log Σ exp(a_i).
pub fn log_sum_exp(values: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.into_iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
