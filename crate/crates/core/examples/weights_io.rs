//! Saves a model's weights and config, reloads both, and checks the outputs match.
//!
//! ```text
//! cargo run --example weights_io -- [dir]
//! ```

use std::path::PathBuf;

use yotor::model::{ModelConfig, VariantSpec, YotoR};
use yotor::nn::Module;
use yotor::tensor::init::Initializer;
use yotor::tensor::io;

fn main() -> yotor::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| std::env::temp_dir().display().to_string()));
    let cfg = ModelConfig::toy(VariantSpec::TP4, 3)?;
    let model = YotoR::<f32>::build(&cfg, 7)?;

    let (wpath, cpath) = (dir.join("toy.ywt"), dir.join("toy.toml"));
    io::save(&wpath, &model.named_params())?;
    cfg.save(&cpath)?;

    let wf = io::load(&wpath)?;
    println!("{} arrays, {} values; first entries:", wf.entries.len(), wf.total_elements());
    print!("{}", io::manifest_text(&wf.entries[..4.min(wf.entries.len())]));

    // a different seed, then overwritten by the file
    let mut again = YotoR::<f32>::build(&ModelConfig::load(&cpath)?, 8)?;
    again.load_weights(&wf)?;
    let x = Initializer::new(0).uniform::<f32>(&[1, 3, 128, 128], 1.0);
    let (a, b) = (model.forward(&x)?, again.forward(&x)?);
    let same = a.iter().zip(&b).all(|(p, q)| p.data() == q.data());
    println!("reloaded model reproduces outputs: {same}");
    Ok(())
}
