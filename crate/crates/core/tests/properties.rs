mod common;

use pacvb_core::bounds::{assemble_bound, empirical_bound, kl_to_prior, RateFunction};
use pacvb_core::data::{holdout_split, split_folds};
use pacvb_core::measure::{Family, GaussianMeasure, IsotropicPrior};
use pacvb_core::risk::{auc_normalization_ratio, RiskKind};
use pacvb_core::smc::{ess, systematic_resample};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn family() -> impl Strategy<Value = Family> {
    prop_oneof![Just(Family::Shared), Just(Family::Diagonal), Just(Family::Full)]
}

fn kind() -> impl Strategy<Value = RiskKind> {
    prop_oneof![Just(RiskKind::ZeroOne), Just(RiskKind::Hinge), Just(RiskKind::Auc)]
}

proptest! {
    #[test]
    fn bound_report_is_its_own_assembly(
        seed in any::<u64>(),
        n in 3usize..15,
        d in 1usize..4,
        family in family(),
        kind in kind(),
        log_lambda in -1.0f64..1.5,
        epsilon in 0.001f64..0.999,
        variance in 0.2f64..5.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ds = common::random_dataset(&mut rng, n, d);
        let q = common::random_measure(&mut rng, family, d);
        let prior = IsotropicPrior::new(variance, d).unwrap();
        let rate = RateFunction::for_risk(kind, &prior, &ds);
        let lambda = 10f64.powf(log_lambda).min(0.99 * rate.validity_limit(n));
        let r = empirical_bound(kind, &q, &ds, &prior, lambda, epsilon).unwrap();
        let mut risk = kind.expected(&q, &ds).unwrap();
        if kind == RiskKind::Auc {
            risk *= auc_normalization_ratio(&ds);
        }
        prop_assert_eq!(r.expected_empirical_risk, risk);
        prop_assert_eq!(r.kl, kl_to_prior(&q, &prior).unwrap());
        prop_assert_eq!(r.rate_value, rate.rate_f(lambda, n).unwrap());
        prop_assert_eq!(r.bound, assemble_bound(r.expected_empirical_risk, r.kl, r.rate_value, lambda, epsilon));
        prop_assert!(r.bound >= r.expected_empirical_risk);
    }

    #[test]
    fn bound_decreases_in_epsilon(
        seed in any::<u64>(),
        e1 in 0.001f64..0.5,
        gap in 0.01f64..0.49,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ds = common::random_dataset(&mut rng, 10, 2);
        let q = common::random_measure(&mut rng, Family::Diagonal, 2);
        let prior = IsotropicPrior::new(1.0, 2).unwrap();
        let a = empirical_bound(RiskKind::ZeroOne, &q, &ds, &prior, 3.0, e1).unwrap();
        let b = empirical_bound(RiskKind::ZeroOne, &q, &ds, &prior, 3.0, e1 + gap).unwrap();
        prop_assert!(b.bound < a.bound);
    }

    #[test]
    fn kl_is_nonnegative_and_vanishes_at_prior(
        seed in any::<u64>(),
        d in 1usize..5,
        family in family(),
        variance in 0.1f64..10.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prior = IsotropicPrior::new(variance, d).unwrap();
        let q = common::random_measure(&mut rng, family, d);
        prop_assert!(kl_to_prior(&q, &prior).unwrap() >= 0.0);
        prop_assert!(kl_to_prior(&prior.as_measure(family), &prior).unwrap().abs() < 1e-12);
    }

    #[test]
    fn parameter_layouts_round_trip(seed in any::<u64>(), d in 1usize..5, family in family()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = common::random_measure(&mut rng, family, d);
        let back = GaussianMeasure::from_unconstrained(family, d, &q.to_unconstrained()).unwrap();
        let nat = GaussianMeasure::from_natural(family, d, &q.to_natural()).unwrap();
        for (a, b) in q.to_natural().iter().zip(back.to_natural()) {
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
        prop_assert_eq!(nat.to_natural(), q.to_natural());
    }

    #[test]
    fn probability_risks_lie_in_the_unit_interval(seed in any::<u64>(), family in family(), n in 2usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ds = common::random_dataset(&mut rng, n, 2);
        let q = common::random_measure(&mut rng, family, 2);
        for kind in [RiskKind::ZeroOne, RiskKind::Auc] {
            let r = kind.expected(&q, &ds).unwrap();
            prop_assert!((0.0..=1.0).contains(&r));
        }
        prop_assert!(RiskKind::Hinge.expected(&q, &ds).unwrap() >= 0.0);
    }

    #[test]
    fn ess_lies_between_one_and_n(w in prop::collection::vec(0.0f64..10.0, 1..50)) {
        prop_assume!(w.iter().any(|&v| v > 0.0));
        let e = ess(&w).unwrap();
        prop_assert!(e >= 1.0 - 1e-12 && e <= w.len() as f64 + 1e-9);
    }

    #[test]
    fn systematic_counts_stay_within_one_of_expectation(
        w in prop::collection::vec(0.01f64..1.0, 2..30),
        n in 1usize..60,
        u in 0.0f64..1.0,
    ) {
        let total: f64 = w.iter().sum();
        let w: Vec<f64> = w.iter().map(|v| v / total).collect();
        let idx = systematic_resample(&w, n, u);
        prop_assert_eq!(idx.len(), n);
        let mut counts = vec![0usize; w.len()];
        for i in idx {
            counts[i] += 1;
        }
        for (c, wj) in counts.iter().zip(&w) {
            prop_assert!((*c as f64 - n as f64 * wj).abs() < 1.0 + 1e-9);
        }
    }

    #[test]
    fn splits_partition_the_rows(n in 5usize..200, k in 2usize..5, frac in 0.1f64..0.9, seed in any::<u64>()) {
        let h = holdout_split(n, frac, seed).unwrap();
        let mut all: Vec<usize> = h.train.iter().chain(&h.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        let folds = split_folds(n, k, seed).unwrap();
        let mut tests: Vec<usize> = folds.iter().flat_map(|f| f.test.iter().copied()).collect();
        tests.sort_unstable();
        prop_assert_eq!(tests, (0..n).collect::<Vec<_>>());
        for f in &folds {
            prop_assert_eq!(f.train.len() + f.test.len(), n);
        }
    }
}
