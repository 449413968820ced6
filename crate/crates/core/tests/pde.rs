use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spinglass_core::measures::{cdf_l1_distance, quantile_interpolate};
use spinglass_core::parisi_pde::*;
use spinglass_core::DiscreteMeasure;

const LOG_COSH_HALF_G: f64 = 0.112_912_002_787_494_48;

/// 𝔼 f(G) by the trapezoid rule on [−14, 14].
fn gaussian_trapezoid(f: impl Fn(f64) -> f64) -> f64 {
    let n = 56_000;
    let h = 28.0 / n as f64;
    let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    (0..=n)
        .map(|i| {
            let g = -14.0 + h * i as f64;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            w * f(g) * (-0.5 * g * g).exp() * norm
        })
        .sum::<f64>()
        * h
}

fn soft() -> BaseMeasure {
    BaseMeasure::uniform(&[-1.0, 0.0, 1.0]).unwrap()
}

fn m(pairs: &[(f64, f64)]) -> DiscreteMeasure {
    DiscreteMeasure::new(pairs).unwrap()
}

#[test]
fn golden_value_matches_trapezoid() {
    let oracle = gaussian_trapezoid(|g| (0.5 * g).cosh().ln());
    assert_abs_diff_eq!(oracle, LOG_COSH_HALF_G, epsilon = 1e-13);
}

#[test]
fn dirac_q_is_single_heat_step() {
    let cfg = PdeConfig::default();
    let ising = BaseMeasure::ising();
    let nu = m(&[(0.25, 1.0)]);
    let v = parisi_value(&nu, 0.0, &ising, &cfg).unwrap();
    assert_abs_diff_eq!(v.value, LOG_COSH_HALF_G, epsilon = 1e-8);
    let v = parisi_value(&nu, 0.3, &ising, &cfg).unwrap();
    assert_abs_diff_eq!(v.value, LOG_COSH_HALF_G + 0.3, epsilon = 1e-8);
    let p = psi(&nu, &ising, &cfg).unwrap();
    assert_abs_diff_eq!(p.value, LOG_COSH_HALF_G - 0.125, epsilon = 1e-8);
    assert_abs_diff_eq!(
        parisi_value_recursive(&nu, 0.0, &ising, 40).unwrap(),
        LOG_COSH_HALF_G,
        epsilon = 1e-10
    );
}

#[test]
fn two_atom_case_matches_recursive() {
    let cfg = PdeConfig::default();
    let nu = m(&[(0.2, 0.5), (0.6, 0.5)]);
    let ising = BaseMeasure::ising();
    let grid = parisi_value(&nu, -0.3, &ising, &cfg).unwrap();
    let rec = parisi_value_recursive(&nu, -0.3, &ising, 40).unwrap();
    assert_abs_diff_eq!(grid.value, rec, epsilon = 1e-5);
    assert!((grid.value - rec).abs() <= grid.err_estimate.max(1e-12) * 10.0);
}

#[test]
fn extension_of_dirac_zero() {
    let cfg = PdeConfig::default();
    let ising = BaseMeasure::ising();
    let nu = m(&[(0.0, 1.0)]);
    // 𝔼 cosh(√a G) = exp(a/2), so 𝒫^a(δ_0, −a/2) vanishes.
    let v = parisi_value_extended(&nu, -0.15, 0.3, &ising, &cfg).unwrap();
    assert_abs_diff_eq!(v.value, 0.0, epsilon = 1e-12);
    let rec = parisi_value_recursive_extended(&nu, -0.15, 0.3, &ising, 40).unwrap();
    assert_abs_diff_eq!(rec, 0.0, epsilon = 1e-12);
}

#[test]
fn extension_shift_invariance() {
    let cfg = PdeConfig::default();
    let base = soft();
    let nu = m(&[(0.1, 0.4), (0.7, 0.6)]);
    let h = 0.2;
    let reference = parisi_value_extended(&nu, h - 0.35, 0.7, &base, &cfg).unwrap();
    for a in [0.95, 1.2] {
        let v = parisi_value_extended(&nu, h - 0.5 * a, a, &base, &cfg).unwrap();
        assert!((v.value - reference.value).abs() <= 2.0 * (v.err_estimate + reference.err_estimate));
    }
}

#[test]
fn random_cases_match_recursive() {
    let cfg = PdeConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let bases = [
        BaseMeasure::ising(),
        soft(),
        BaseMeasure::new(&[(-0.5, 0.3), (1.2, 0.7)]).unwrap(),
    ];
    for case in 0..6 {
        let k = 1 + case % 3;
        let mut atoms: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.2)).collect();
        atoms.sort_by(f64::total_cmp);
        let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
        let total: f64 = w.iter().sum();
        let pairs: Vec<(f64, f64)> = atoms.iter().zip(&w).map(|(&q, &w)| (q, w / total)).collect();
        let nu = m(&pairs);
        let lambda = rng.random_range(-0.8..0.8);
        let base = &bases[case % 3];
        let grid = parisi_value(&nu, lambda, base, &cfg).unwrap();
        let rec = parisi_value_recursive(&nu, lambda, base, 30).unwrap();
        assert!(
            (grid.value - rec).abs() <= 1e-5,
            "case {case}: {} vs {rec}",
            grid.value
        );
    }
}

#[test]
fn lambda_derivative_bounded_by_support() {
    let cfg = PdeConfig::default();
    let base = BaseMeasure::new(&[(-1.5, 0.2), (0.5, 0.5), (1.0, 0.3)]).unwrap();
    let nu = m(&[(0.2, 0.3), (0.9, 0.7)]);
    let eps = 1e-4;
    for lambda in [-1.0, -0.2, 0.0, 0.4, 1.0] {
        let up = parisi_value_only(&nu, lambda + eps, &base, &cfg).unwrap();
        let dn = parisi_value_only(&nu, lambda - eps, &base, &cfg).unwrap();
        let slope = (up - dn) / (2.0 * eps);
        assert!(
            slope >= base.d() - 1e-6 && slope <= base.D() + 1e-6,
            "slope {slope}"
        );
    }
}

fn measure_strategy() -> impl Strategy<Value = DiscreteMeasure> {
    prop::collection::vec((0.0..1.0_f64, 0.1..1.0_f64), 1..=3).prop_map(|raw| {
        let total: f64 = raw.iter().map(|p| p.1).sum();
        let pairs: Vec<(f64, f64)> = raw.iter().map(|&(q, w)| (q, w / total)).collect();
        DiscreteMeasure::new(&pairs).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn psi_is_lipschitz_in_the_measure(a in measure_strategy(), b in measure_strategy()) {
        let cfg = PdeConfig::default();
        for base in [BaseMeasure::ising(), soft()] {
            let pa = psi(&a, &base, &cfg).unwrap();
            let pb = psi(&b, &base, &cfg).unwrap();
            let bound = 0.5 * base.D() * cdf_l1_distance(&a, &b);
            prop_assert!((pa.value - pb.value).abs() <= bound + pa.err_estimate + pb.err_estimate + 1e-9);
        }
    }

    #[test]
    fn convex_along_mixtures(a in measure_strategy(), b in measure_strategy(), l1 in -1.0..1.0_f64, l2 in -1.0..1.0_f64) {
        let cfg = PdeConfig::default();
        let base = soft();
        let pairs: Vec<(f64, f64)> = a.iter().chain(b.iter()).map(|(q, w)| (q, 0.5 * w)).collect();
        let mid = DiscreteMeasure::new(&pairs).unwrap();
        let fa = psi_capital(&a, l1, &base, &cfg).unwrap();
        let fb = psi_capital(&b, l2, &base, &cfg).unwrap();
        let fm = psi_capital(&mid, 0.5 * (l1 + l2), &base, &cfg).unwrap();
        let slack = fa.err_estimate + fb.err_estimate + fm.err_estimate + 1e-9;
        prop_assert!(fm.value <= 0.5 * (fa.value + fb.value) + slack);
    }

    #[test]
    fn ising_psi_concave_along_quantile_path(q in 0.05..2.0_f64) {
        // The quantile path from δ_0 to δ_q is not a convexity direction.
        let cfg = PdeConfig::default();
        let ising = BaseMeasure::ising();
        let a = DiscreteMeasure::dirac(0.0).unwrap();
        let b = DiscreteMeasure::dirac(q).unwrap();
        let mid = quantile_interpolate(&a, &b, 0.5).unwrap();
        let fa = psi(&a, &ising, &cfg).unwrap().value;
        let fb = psi(&b, &ising, &cfg).unwrap().value;
        let fm = psi(&mid, &ising, &cfg).unwrap().value;
        prop_assert!(fm >= 0.5 * (fa + fb) - 1e-9);
    }

    #[test]
    fn monotone_in_the_cdf(a in measure_strategy(), shift in 0.0..0.8_f64, lambda in -0.5..0.5_f64) {
        // Moving every atom up gives a measure whose CDF lies below.
        let cfg = PdeConfig::default();
        let base = soft();
        let up = DiscreteMeasure::new(&a.iter().map(|(q, w)| (q + shift, w)).collect::<Vec<_>>()).unwrap();
        let lo = psi_capital(&up, lambda, &base, &cfg).unwrap();
        let hi = psi_capital(&a, lambda, &base, &cfg).unwrap();
        prop_assert!(lo.value <= hi.value + lo.err_estimate + hi.err_estimate + 1e-9);
    }
}
