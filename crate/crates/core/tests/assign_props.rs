mod common;

use proptest::prelude::*;
use yotor::neck::AnchorSet;
use yotor::train::{assign_targets, TargetBox};

fn arb_target(size: f64) -> impl Strategy<Value = TargetBox> {
    (0.0..size, 0.0..size, 1.0..size / 2.0, 1.0..size / 2.0, 0..3usize, 0..2usize).prop_map(move |(x, y, w, h, class, image)| {
        let (x2, y2) = ((x + w).min(size), (y + h).min(size));
        TargetBox { image, class, bbox: [x, y, x2, y2] }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn assignment_matches_all_pairs_check(targets in prop::collection::vec(arb_target(256.0), 0..8), anchor_t in 1.5..6.0f64) {
        let anchors = AnchorSet::p6();
        let grids: Vec<(usize, usize)> = anchors.strides.iter().map(|&s| (256 / s, 256 / s)).collect();
        let got = assign_targets(&targets, &anchors, &grids, anchor_t);
        let want = common::brute_assignment(&targets, &anchors, &grids, anchor_t);
        prop_assert_eq!(got.levels.len(), want.len());
        for (l, (g, w)) in got.levels.iter().zip(&want).enumerate() {
            let mut g: Vec<_> = g.iter().map(|a| (a.target, a.anchor, a.gi, a.gj)).collect();
            let mut w = w.clone();
            g.sort_unstable();
            w.sort_unstable();
            prop_assert_eq!(g, w, "level {}", l);
        }
        // offsets point back at the center, and each target keeps its class and image
        for (l, level) in got.levels.iter().enumerate() {
            let s = anchors.strides[l] as f64;
            for a in level {
                let t = &targets[a.target];
                let cx = (t.bbox[0] + t.bbox[2]) / (2.0 * s);
                prop_assert!((a.tbox[0] + a.gi as f64 - cx).abs() < 1e-9);
                prop_assert!(a.tbox[0] > -1.0 && a.tbox[0] < 2.0 && a.tbox[1] > -1.0 && a.tbox[1] < 2.0);
                prop_assert_eq!((a.class, a.image), (t.class, t.image));
            }
        }
    }
}
