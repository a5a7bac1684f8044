mod common;

use common::micro_dataset;
use proptest::prelude::*;
use yotor::detect::CocoResult;
use yotor::eval::{evaluate, evaluate_matrix, Annotation, EvalConfig, GroundTruth, Metric};

#[test]
fn matches_brute_force_on_200_micro_datasets() {
    let mut cells = 0;
    for seed in 0..200 {
        let (err, n) = common::evaluator_max_error(seed);
        assert!(err < 1e-9, "seed {seed}: {err}");
        cells += n;
    }
    assert!(cells > 10_000, "{cells}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn report_orderings(seed in 0u64..10_000) {
        let (ds, dets) = micro_dataset(seed);
        let gt = GroundTruth::from_dataset(&ds).unwrap();
        let r = evaluate(&gt, &dets, &EvalConfig::default()).unwrap();
        for row in &r.stats {
            if let Some(v) = row.value {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
        let ar = |m| r.get(Metric::AR, None, "all", m).unwrap_or(0.0);
        prop_assert!(ar(1) <= ar(10) + 1e-12 && ar(10) <= ar(100) + 1e-12);
        if let (Some(a50), Some(a)) = (r.get(Metric::AP, Some(0.5), "all", 100), r.ap()) {
            prop_assert!(a50 >= a - 1e-12);
        }
    }

    // Only the unrestricted area range: inside a size bucket, a box that stops
    // matching an out-of-range GT at a higher threshold becomes ignored itself,
    // which can turn a later false positive into an ignored match.
    #[test]
    fn raising_the_threshold_never_raises_ap(seed in 0u64..10_000) {
        let (ds, dets) = micro_dataset(seed);
        let gt = GroundTruth::from_dataset(&ds).unwrap();
        let cfg = EvalConfig::default();
        let mx = evaluate_matrix(&gt, &dets, &cfg).unwrap();
        {
            let a = cfg.area_index("all").unwrap();
            for m in 0..cfg.max_dets.len() {
                let aps: Vec<Option<f64>> = (0..cfg.iou_thresholds.len()).map(|t| mx.average_precision(Some(t), None, a, m)).collect();
                for w in aps.windows(2) {
                    if let (Some(x), Some(y)) = (w[0], w[1]) {
                        prop_assert!(y <= x + 1e-12, "{aps:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn a_new_correct_detection_never_lowers_ap(seed in 0u64..10_000, score in 0.0..1.0f64) {
        let (mut ds, dets) = micro_dataset(seed);
        // a fresh object far from everything else, found exactly
        let img = ds.images[0].id;
        let cat = ds.categories[0].id;
        let bbox = [1000.0, 1000.0, 40.0, 40.0];
        ds.annotations.push(Annotation { id: 9999, image_id: img, category_id: cat, bbox, area: None, iscrowd: 0 });
        let gt = GroundTruth::from_dataset(&ds).unwrap();
        let cfg = EvalConfig { max_dets: vec![1000], ..EvalConfig::default() };
        let before = evaluate_matrix(&gt, &dets, &cfg).unwrap();
        let mut more = dets.clone();
        more.push(CocoResult { image_id: img, category_id: cat, bbox, score });
        let after = evaluate_matrix(&gt, &more, &cfg).unwrap();
        for t in 0..cfg.iou_thresholds.len() {
            for k in 0..gt.category_ids.len() {
                for a in 0..cfg.area_ranges.len() {
                    let b = before.average_precision(Some(t), Some(k), a, 0);
                    let c = after.average_precision(Some(t), Some(k), a, 0);
                    prop_assert!(c.unwrap_or(-1.0) >= b.unwrap_or(-1.0) - 1e-12, "{b:?} -> {c:?}");
                }
            }
        }
    }
}

