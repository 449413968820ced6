//! Derivative-free minimizers: Nelder-Mead and golden-section search.

/// Settings for [`nelder_mead`].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SimplexConfig {
    /// Stop when the spread of simplex values falls below this.
    pub f_tol: f64,
    /// Stop when the simplex diameter falls below this.
    pub x_tol: f64,
    pub max_evals: usize,
    /// Edge length of the initial simplex.
    pub initial_step: f64,
}

impl Default for SimplexConfig {
    fn default() -> Self {
        Self {
            f_tol: 1e-9,
            x_tol: 1e-7,
            max_evals: 2000,
            initial_step: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Minimizes `f` from `x0` with the adaptive Nelder-Mead simplex method.
/// Non-finite values are treated as +∞.
pub fn nelder_mead(mut f: impl FnMut(&[f64]) -> f64, x0: &[f64], cfg: &SimplexConfig) -> Minimum {
    let n = x0.len();
    let mut evals = 0;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    if n == 0 {
        let value = eval(x0, &mut evals);
        return Minimum {
            x: Vec::new(),
            value,
            evals,
            converged: true,
        };
    }
    // Gao-Han coefficients, which behave better than the classical ones in
    // higher dimensions.
    let nf = n as f64;
    let (alpha, beta, gamma, delta) = (1.0, 1.0 + 2.0 / nf, 0.75 - 0.5 / nf, 1.0 - 1.0 / nf);

    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += cfg.initial_step;
        simplex.push(x);
    }
    let mut values: Vec<f64> = simplex.iter().map(|x| eval(x, &mut evals)).collect();
    let mut converged = false;

    while evals < cfg.max_evals {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread = values[n] - values[0];
        let diameter = simplex[1..]
            .iter()
            .map(|x| {
                x.iter()
                    .zip(&simplex[0])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if spread <= cfg.f_tol && diameter <= cfg.x_tol {
            converged = true;
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|x| x[j]).sum::<f64>() / nf)
            .collect();
        let along = |c: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n])
                .map(|(m, w)| m + c * (m - w))
                .collect()
        };

        let xr = along(alpha);
        let fr = eval(&xr, &mut evals);
        if fr < values[0] {
            let xe = along(alpha * beta);
            let fe = eval(&xe, &mut evals);
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < values[n] {
            let xc = along(alpha * gamma);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        } else {
            let xc = along(-gamma);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        };
        if fc < values[n].min(fr) {
            simplex[n] = xc;
            values[n] = fc;
            continue;
        }
        for i in 1..=n {
            let x: Vec<f64> = simplex[0]
                .iter()
                .zip(&simplex[i])
                .map(|(b, x)| b + delta * (x - b))
                .collect();
            values[i] = eval(&x, &mut evals);
            simplex[i] = x;
        }
    }
    let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
    Minimum {
        x: simplex[best].clone(),
        value: values[best],
        evals,
        converged,
    }
}

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Golden-section minimization of a unimodal `f` on `[a, b]`, stopping when
/// the bracket is shorter than `tol`. Returns `(argmin, min)`.
pub fn golden_section(mut f: impl FnMut(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    // Endpoints count too, so monotone functions land on the boundary.
    let mut best = if fc < fd { (c, fc) } else { (d, fd) };
    for x in [a, b] {
        let v = f(x);
        if v < best.1 {
            best = (x, v);
        }
    }
    best
}

/// Grows `[a, b]` geometrically until `f` is larger at both ends than at an
/// interior point, or the half-width exceeds `limit`.
pub fn expand_bracket(mut f: impl FnMut(f64) -> f64, center: f64, half: f64, limit: f64) -> (f64, f64) {
    let mut h = half;
    loop {
        let (a, b) = (center - h, center + h);
        let fm = f(center);
        let (fa, fb) = (f(a), f(b));
        if (fa >= fm && fb >= fm) || h >= limit {
            return (a, b);
        }
        h *= 2.0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rosenbrock() {
        let cfg = SimplexConfig {
            max_evals: 5000,
            f_tol: 1e-14,
            x_tol: 1e-9,
            ..SimplexConfig::default()
        };
        let m = nelder_mead(
            |x| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2),
            &[-1.2, 1.0],
            &cfg,
        );
        assert!(m.converged);
        assert_abs_diff_eq!(m.x[0], 1.0, epsilon = 1e-4);
        assert_abs_diff_eq!(m.x[1], 1.0, epsilon = 1e-4);
    }

    #[test]
    fn quadratic_in_five_dimensions() {
        let m = nelder_mead(
            |x| {
                x.iter()
                    .enumerate()
                    .map(|(i, v)| (i + 1) as f64 * (v - 0.5).powi(2))
                    .sum()
            },
            &[0.0; 5],
            &SimplexConfig::default(),
        );
        assert!(m.value < 1e-8, "{m:?}");
    }

    #[test]
    fn infinite_values_are_avoided() {
        let m = nelder_mead(
            |x| {
                if x[0] < 0.0 {
                    f64::NAN
                } else {
                    (x[0] - 0.2).powi(2)
                }
            },
            &[0.5],
            &SimplexConfig::default(),
        );
        assert_abs_diff_eq!(m.x[0], 0.2, epsilon = 1e-4);
    }

    #[test]
    fn golden_section_on_cosh() {
        let (x, v) = golden_section(|x| (x - 0.3).cosh(), -2.0, 3.0, 1e-10);
        assert_abs_diff_eq!(x, 0.3, epsilon = 1e-7);
        assert_abs_diff_eq!(v, 1.0, epsilon = 1e-12);
        let (x, _) = golden_section(|x| x, 0.0, 1.0, 1e-10);
        assert_eq!(x, 0.0);
    }

    #[test]
    fn bracket_expands_until_minimum_is_inside() {
        let (a, b) = expand_bracket(|x| (x - 7.0).powi(2), 0.0, 1.0, 100.0);
        assert!(a < 7.0 && 7.0 < b);
        let (a, b) = expand_bracket(|x| x, 0.0, 1.0, 10.0);
        assert!(b - a >= 20.0);
    }
}
