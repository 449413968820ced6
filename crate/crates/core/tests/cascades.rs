use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use spinglass_core::cascades::*;
use spinglass_core::measures::cdf_stieltjes;
use spinglass_core::parisi_pde::{psi, BaseMeasure, PdeConfig};
use spinglass_core::stats::{substream, Welford};
use spinglass_core::{DiscreteMeasure, MixtureFunction};

#[test]
fn k1_overlap_law_matches_zeta() {
    let law = overlap_law_mc(&[0.5], 1000, CascadeSampler::StickBreaking, 400, 3).unwrap();
    assert!(law[0].covers(0.5, 3.0), "{law:?}");
    assert!(law[1].covers(0.5, 3.0), "{law:?}");
}

#[test]
fn k2_overlap_law_matches_level_gaps() {
    let law = overlap_law_mc(&[0.3, 0.7], 60, CascadeSampler::StickBreaking, 300, 5).unwrap();
    for (est, want) in law.iter().zip([0.3, 0.4, 0.3]) {
        assert!(est.covers(want, 3.0), "{est:?} vs {want}");
    }
}

#[test]
fn field_covariance_is_ultrametric() {
    let mut rng = substream(9, 0);
    let tree = CascadeTree::sample(&[0.4, 0.8], 3, CascadeSampler::StickBreaking, &mut rng).unwrap();
    let spec = HierGaussianSpec::new(&[0.2, 0.5, 1.0]).unwrap();
    // Leaves 0 and 1 share a parent; leaves 0 and 3 only share the root.
    let pairs = [(0, 0, 1.0), (0, 1, 0.5), (0, 3, 0.2)];
    let mut acc: Vec<Welford> = vec![Welford::new(); pairs.len()];
    let k = tree.levels();
    for _ in 0..10_000 {
        let f = sample_field(&tree, &spec, &mut rng).unwrap();
        for (w, &(a, b, _)) in acc.iter_mut().zip(&pairs) {
            w.push(f.at(k, a) * f.at(k, b));
        }
    }
    for (w, &(_, _, want)) in acc.iter().zip(&pairs) {
        assert!(w.estimate().covers(want, 3.0), "{:?} vs {want}", w.estimate());
    }
}

#[test]
fn constant_and_zero_root_specs() {
    let mut rng = substream(4, 0);
    let tree = CascadeTree::sample(&[0.5], 5, CascadeSampler::StickBreaking, &mut rng).unwrap();
    let spec = HierGaussianSpec::new(&[0.7, 0.7]).unwrap();
    let f = sample_field(&tree, &spec, &mut rng).unwrap();
    let values = f.unit_values(&tree);
    assert!(values.iter().all(|&v| v == values[0]));

    let spec = HierGaussianSpec::new(&[0.0, 1.0]).unwrap();
    let f = sample_field(&tree, &spec, &mut rng).unwrap();
    assert_eq!(f.at(0, 0), 0.0);
    assert!(HierGaussianSpec::new(&[0.5, 0.2]).is_err());
}

#[test]
fn zero_spec_partition_is_exactly_zero() {
    let spec = HierGaussianSpec::new(&[0.0, 0.0, 0.0]).unwrap();
    let est = cascade_log_partition(&[0.2, 0.6], &spec, 50, CascadeSampler::StickBreaking, 10, 1).unwrap();
    assert_eq!((est.mean, est.stderr), (0.0, 0.0));
}

#[test]
fn k1_log_partition_is_half_zeta() {
    let spec = HierGaussianSpec::new(&[0.0, 1.0]).unwrap();
    let est = cascade_log_partition(&[0.5], &spec, 1000, CascadeSampler::StickBreaking, 3000, 12).unwrap();
    assert!(est.covers(0.25, 3.0), "{est:?}");
}

#[test]
fn theta_spec_log_partition() {
    let xi = MixtureFunction::sk(1.0).unwrap();
    let zeta = DiscreteMeasure::new(&[(0.3, 0.5), (0.8, 0.5)]).unwrap();
    let theta = |s: f64| xi.theta(s).unwrap();
    let gammas: Vec<f64> = zeta.atoms().iter().map(|&q| theta(q)).collect();
    let spec = HierGaussianSpec::new(&gammas).unwrap();
    let want = 0.5 * cdf_stieltjes(&zeta, theta, 0.8);
    assert_abs_diff_eq!(want, 0.1375, epsilon = 1e-12);
    let (zetas, _) = cascade_for(&zeta).unwrap();
    let est = cascade_log_partition(&zetas, &spec, 1000, CascadeSampler::StickBreaking, 3000, 13).unwrap();
    assert!(est.covers(want, 3.0), "{est:?} vs {want}");
}

#[test]
fn psi_of_a_dirac_matches_pde() {
    let mu = DiscreteMeasure::dirac(0.4).unwrap();
    for base in [
        BaseMeasure::ising(),
        BaseMeasure::uniform(&[-1.0, 0.0, 1.0]).unwrap(),
    ] {
        let mc = psi_via_cascade(&mu, &base, 1, CascadeSampler::StickBreaking, 4000, 2).unwrap();
        let exact = psi(&mu, &base, &PdeConfig::default()).unwrap().value;
        assert!(mc.covers(exact, 3.0), "{mc:?} vs {exact}");
    }
}

#[test]
fn samplers_share_weight_invariants() {
    let mut rng = substream(8, 0);
    for sampler in [CascadeSampler::StickBreaking, CascadeSampler::PoissonProduct] {
        let tree = CascadeTree::sample(&[0.25, 0.5, 0.75], 8, sampler, &mut rng).unwrap();
        assert_abs_diff_eq!(tree.total_weight(), 1.0, epsilon = 1e-12);
        assert_eq!(tree.leaf_weights().len(), 512);
    }
    assert!(CascadeTree::sample(&[0.7, 0.3], 8, CascadeSampler::StickBreaking, &mut rng).is_err());
    assert!(CascadeTree::sample(&[0.5], 0, CascadeSampler::StickBreaking, &mut rng).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn weights_nonnegative_normalized_and_sorted(
        a in 0.05..0.5_f64,
        gap in 0.05..0.45_f64,
        m in 1usize..40,
        seed in 0u64..1000,
    ) {
        let zetas = [a, a + gap];
        let mut rng = substream(seed, 0);
        let tree = CascadeTree::sample(&zetas, m, CascadeSampler::StickBreaking, &mut rng).unwrap();
        prop_assert!((tree.total_weight() - 1.0).abs() < 1e-12);
        // Deep sticks can underflow to zero for small ζ.
        prop_assert!(tree.units().iter().all(|u| u.weight >= 0.0));
        for depth in 1..=2 {
            let masses = tree.masses(depth);
            for n in 1..masses.len() {
                if tree.parent(depth, n) == tree.parent(depth, n - 1) {
                    prop_assert!(masses[n] <= masses[n - 1]);
                }
            }
        }
        let law = tree.overlap_law();
        prop_assert!((law.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
