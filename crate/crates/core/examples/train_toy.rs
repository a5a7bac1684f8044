//! Overfits the toy TP5 model on eight synthetic images and checks what it finds.
//!
//! Usage: cargo run --release --example train_toy [steps]

use std::time::Instant;

use yotor::train::{run_toy, ToyRunConfig};

fn main() -> yotor::Result<()> {
    let steps: usize = std::env::args().nth(1).map_or(500, |s| s.parse().expect("steps"));
    let cfg = ToyRunConfig { steps, ..ToyRunConfig::default() };

    let t0 = Instant::now();
    let out = run_toy(&cfg, |r| {
        if r.step % 25 == 0 {
            println!(
                "step {:>4}  loss {:>9.4}  box {:.4} obj {:.4} cls {:.4}  lr {:.5}",
                r.step, r.loss.total, r.loss.box_loss, r.loss.obj, r.loss.cls, r.settings.lr_decay
            );
        }
    })?;
    println!(
        "{steps} steps in {:.1}s; loss {:.4} -> {:.4} ({:.1}%)",
        t0.elapsed().as_secs_f64(),
        out.initial_loss,
        out.final_loss,
        100.0 * out.loss_ratio()
    );
    println!("recovered {}/{} boxes at IoU >= 0.5, score >= 0.5", out.recovered, out.boxes);
    Ok(())
}
