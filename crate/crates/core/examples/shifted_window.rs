//! Shifted-window attention on a small token grid: which tokens a query can
//! see with and without the half-window shift.
//!
//! ```text
//! cargo run --example shifted_window
//! ```

use yotor::swin::window::attention_mask;
use yotor::swin::WindowAttention;
use yotor::tensor::init::Initializer;

fn main() -> yotor::Result<()> {
    let (h, w, m) = (8, 8, 4);
    for shift in [0, m / 2] {
        // the mask is additive: 0 where attention is allowed
        let mask = attention_mask::<f64>(h, w, h, w, m, shift)?;
        let n = m * m;
        let nw = mask.dim(0);
        let visible: Vec<usize> = (0..nw)
            .map(|k| (0..n * n).filter(|&i| mask.data()[k * n * n + i] == 0.0).count())
            .collect();
        println!("shift {shift}: {nw} windows, allowed pairs per window {visible:?}");
    }

    let mut init = Initializer::new(0);
    let attn = WindowAttention::<f32>::new(&mut init, 8, 2, m);
    let x = init.normal::<f32>(&[1, 10, 7, 8], 0.0, 1.0);
    let y = attn.forward_grid(&x, m / 2)?;
    println!("grid {:?} -> {:?} (padded to whole windows internally)", x.shape(), y.shape());
    Ok(())
}
