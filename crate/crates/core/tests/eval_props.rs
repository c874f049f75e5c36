mod common;

use proptest::prelude::*;
use tka_detect::eval::{average_precision, match_detections, mean_ap, pr_curve, ScoredOutcome};

proptest! {
    #[test]
    fn matching_equals_oracle(seed in any::<u64>(), thr in 0.1..0.9f64) {
        let (dets, truths) = common::random_frames(seed);
        let got = match_detections(&dets, &truths, thr).unwrap();
        prop_assert_eq!(got.detections, common::match_oracle(&dets, &truths, thr));
    }

    #[test]
    fn ap_equals_envelope_oracle(seed in any::<u64>()) {
        let (o, gt) = common::random_outcomes(seed);
        prop_assert_eq!(average_precision(&o, gt), common::ap_oracle(&o, gt));
    }

    #[test]
    fn pr_recall_is_monotone(seed in any::<u64>()) {
        let (o, gt) = common::random_outcomes(seed);
        let c = pr_curve(&o, gt);
        prop_assert_eq!(c.len(), o.len() + 1);
        prop_assert!(c.windows(2).all(|w| w[1].recall >= w[0].recall));
        prop_assert!(c.iter().all(|p| (0.0..=1.0).contains(&p.precision)));
    }
}

#[test]
fn tp_fp_tp_with_two_gts() {
    let o: Vec<ScoredOutcome> = [true, false, true]
        .iter()
        .enumerate()
        .map(|(i, &tp)| ScoredOutcome {
            score: 1.0 - i as f64 * 0.1,
            frame: 0,
            index: i,
            true_positive: tp,
        })
        .collect();
    assert!((average_precision(&o, 2).unwrap() - 0.8333).abs() < 1e-4);
    assert_eq!(average_precision(&o, 0), None);
}

#[test]
fn map_skips_classes_without_ground_truth() {
    let (m, lo, hi) = mean_ap(&[Some(0.5), None, Some(1.0)]).unwrap();
    assert_eq!((m, lo, hi), (0.75, 0.5, 1.0));
    assert!(mean_ap(&[None]).is_err());
}
