//! Parameter and FLOPs accounting for the four named variants.
//!
//! ```text
//! cargo run --example summary -- 1280
//! ```

use yotor::model::{ModelConfig, ModelSummary, VariantSpec};

fn main() -> yotor::Result<()> {
    let res = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1280);
    for v in VariantSpec::NAMED {
        let cfg = ModelConfig::for_variant(v, 80)?;
        let s = ModelSummary::of(&cfg, res)?;
        let bb = s.subtotal("backbone");
        println!(
            "{v}: {:.2}M params ({:.2}M backbone), {:.1} GFLOPs at {res}",
            s.params as f64 / 1e6,
            bb.params as f64 / 1e6,
            s.flops() as f64 / 1e9
        );
    }
    println!();
    print!("{}", ModelSummary::of(&ModelConfig::for_variant(VariantSpec::TP5, 80)?, res)?.to_table());
    Ok(())
}
