mod common;

use common::brute_nms;
use proptest::prelude::*;
use yotor::detect::{decode_level, iou, letterbox, nms, Detection, Image, PAD_FILL};
use yotor::Tensor;

fn arb_det() -> impl Strategy<Value = Detection> {
    (0.0..100.0f64, 0.0..100.0f64, 1.0..40.0f64, 1.0..40.0f64, 0..20u32, 0..3usize).prop_map(|(x, y, w, h, s, class)| Detection {
        bbox: [x, y, x + w, y + h],
        // coarse scores so ties actually happen
        score: s as f64 / 20.0,
        class,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn nms_matches_brute_force(dets in prop::collection::vec(arb_det(), 0..60), t in 0.1..0.9f64, max_det in 1..50usize) {
        let got = nms(&dets, t, 0.1, max_det);
        prop_assert_eq!(&got, &brute_nms(&dets, t, 0.1, max_det));
        prop_assert!(got.windows(2).all(|w| w[0].score >= w[1].score));
        for (i, a) in got.iter().enumerate() {
            for b in &got[i + 1..] {
                prop_assert!(a.class != b.class || iou(&a.bbox, &b.bbox) < t);
            }
        }
    }
}

proptest! {
    #[test]
    fn letterbox_round_trip(w in 1..400usize, h in 1..400usize, target in 16..1400usize,
                            b in (0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64)) {
        let img = Image::filled(w, h, 0.1);
        let (_, info) = letterbox(&img, target, PAD_FILL).unwrap();
        let bx = [b.0 * w as f64, b.1 * h as f64, b.2 * w as f64, b.3 * h as f64];
        let back = info.unmap_box(info.map_box(bx));
        for k in 0..4 {
            prop_assert!((back[k] - bx[k]).abs() < 1e-4);
        }
    }

    #[test]
    fn decode_is_monotone_in_tw(lo in -8.0..8.0f64, step in 1e-3..4.0f64, other in prop::collection::vec(-30.0..30.0f64, 7)) {
        let mk = |tw: f64| {
            let mut v = other.clone();
            v[2] = tw;
            decode_level(&Tensor::<f64>::new(&[1, 7, 1, 1], v).unwrap(), &[[12.0, 9.0]], 16, 2, 0).unwrap()[0][0].clone()
        };
        let (a, b) = (mk(lo), mk(lo + step));
        prop_assert!(b.size[0] > a.size[0]);
        let (_, s) = a.best();
        prop_assert!(s > 0.0 && s < 1.0);
    }
}

#[test]
fn decode_matches_scalar_reference() {
    for seed in 0..50 {
        let e = common::decode_max_error(seed);
        assert!(e < 1e-6, "seed {seed}: {e}");
    }
}
