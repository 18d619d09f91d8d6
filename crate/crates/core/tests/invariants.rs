mod common;

use detcal_core::metrics::{summarize, BinningConfig};
use detcal_core::EvaluationSet;
use proptest::prelude::*;
use rand::seq::SliceRandom;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_ignore_record_order(seed in any::<u64>(), n in 1usize..300, k in 2usize..6, bins in 1usize..16) {
        let mut rng = common::rng(seed);
        let (set, _) = common::random_set(&mut rng, n, k);
        let mut records = set.records().to_vec();
        records.shuffle(&mut rng);
        let shuffled = EvaluationSet::new(k, records).unwrap();
        let cfg = BinningConfig::new(bins).unwrap();
        prop_assert_eq!(summarize(&set, &cfg).unwrap(), summarize(&shuffled, &cfg).unwrap());
    }

    #[test]
    fn metrics_stay_in_range(seed in any::<u64>(), n in 1usize..300, k in 2usize..6) {
        let mut rng = common::rng(seed);
        let (set, _) = common::random_set(&mut rng, n, k);
        let s = summarize(&set, &BinningConfig::default()).unwrap();
        prop_assert!(s.nll >= 0.0);
        prop_assert!((0.0..=2.0).contains(&s.brier));
        prop_assert!((0.0..=1.0).contains(&s.tce()));
        prop_assert!((0.0..=2f64.sqrt()).contains(&s.mce()));
        if let Some(d) = &s.detection {
            prop_assert!((0.0..=1.0).contains(&d.dtce));
            prop_assert!((0.0..=2f64.sqrt()).contains(&d.dmce));
        }
    }

    #[test]
    fn confident_correct_predictions_score_zero(seed in any::<u64>(), n in 1usize..200, k in 2usize..6) {
        let mut rng = common::rng(seed);
        let (set, _) = common::random_set(&mut rng, n, k);
        let perfect: Vec<_> = set
            .records()
            .iter()
            .filter(|r| r.probs().get(r.label().get()) == 1.0)
            .cloned()
            .collect();
        prop_assume!(!perfect.is_empty());
        let set = EvaluationSet::new(k, perfect).unwrap();
        let s = summarize(&set, &BinningConfig::default()).unwrap();
        prop_assert_eq!(s.tce(), 0.0);
        prop_assert_eq!(s.mce(), 0.0);
        prop_assert_eq!(s.brier, 0.0);
        prop_assert_eq!(s.nll, 0.0);
    }
}
