mod common;

use yotor::swin::window::{cyclic_shift, window_partition, window_reverse};
use yotor::tensor::init::Initializer;

#[test]
fn shifted_window_attention_matches_brute_force() {
    for seed in 0..50 {
        let d = common::shifted_window_case(seed);
        assert!(d < 1e-5, "seed {seed}: {d}");
    }
}

#[test]
fn partition_and_shift_invert() {
    let mut init = Initializer::new(4);
    for (h, w, m, s) in [(6, 9, 3, 1), (7, 7, 7, 3), (4, 8, 2, 1)] {
        let x = init.normal::<f64>(&[2, h.max(m) / m * m, w / m * m, 3], 0.0, 1.0);
        let (hp, wp) = (x.dim(1), x.dim(2));
        let back = window_reverse(&window_partition(&x, m).unwrap(), m, 2, hp, wp).unwrap();
        assert_eq!(back.data(), x.data());
        let rolled = cyclic_shift(&cyclic_shift(&x, s as isize).unwrap(), -(s as isize)).unwrap();
        assert_eq!(rolled.data(), x.data());
    }
}
