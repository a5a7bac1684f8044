//! Times three widths of the toy model and writes the speed/accuracy scatter.
//! The accuracy column here is a placeholder; real values come from `eval`.
//!
//! ```text
//! cargo run --release --example bench -- [resolution] [out-dir]
//! ```

use std::path::PathBuf;

use yotor::bench::{bench, scatter_csv, scatter_svg, spearman, timing_csv, BenchConfig, ScatterPoint};
use yotor::model::{ModelConfig, ModelSummary, VariantSpec, YotoR};

fn main() -> yotor::Result<()> {
    let mut args = std::env::args().skip(1);
    let res: usize = args.next().map_or(256, |s| s.parse().expect("resolution"));
    let dir = PathBuf::from(args.next().unwrap_or_else(|| ".".into()));

    let base = ModelConfig::toy(VariantSpec::TP5, 80)?;
    let (mut results, mut macs, mut points) = (Vec::new(), Vec::new(), Vec::new());
    for (k, ap) in [(1, 0.30), (2, 0.35), (4, 0.38)] {
        let cfg = base.widened(k);
        let model = YotoR::<f32>::build(&cfg, 0)?;
        let r = bench(&model, &BenchConfig::new(res))?;
        let m = ModelSummary::of(&cfg, res)?.macs as f64;
        println!("{:<10} {:>8.2} ms  {:>7.2} fps  {:>7.2} GMACs  stages {:?}", r.name, r.mean_ms, r.fps, m / 1e9, r.timed_stages);
        points.push(ScatterPoint { name: r.name.clone(), ms: r.mean_ms, ap });
        macs.push(m);
        results.push(r);
    }
    let ms: Vec<f64> = results.iter().map(|r| r.mean_ms).collect();
    println!("spearman(ms, MACs) = {:?}", spearman(&ms, &macs));

    let write = |name: &str, body: String| std::fs::write(dir.join(name), body).expect("write");
    write("timing.csv", timing_csv(&results)?);
    write("scatter.csv", scatter_csv(&points)?);
    write("scatter.svg", scatter_svg(&points));
    println!("wrote timing.csv, scatter.csv, scatter.svg to {}", dir.display());
    Ok(())
}
