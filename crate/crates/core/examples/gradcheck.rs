//! Finite-difference check of every differentiable op and model component.
//!
//! Usage: cargo run --release --example gradcheck [seeds] [name-filter]

fn main() -> yotor::Result<()> {
    let mut args = std::env::args().skip(1);
    let seeds = args.next().map_or(20, |s| s.parse().expect("seeds"));
    let filter = args.next();
    let t0 = std::time::Instant::now();
    let results = yotor::gradsuite::run(seeds, filter.as_deref())?;
    for r in &results {
        println!("{:<18} {:>6} coords  max rel {:.2e}  {}", r.name, r.checked, r.max_rel_error, if r.passed { "ok" } else { "FAIL" });
    }
    println!("{} cases, {} failed, {:.1}s", results.len(), results.iter().filter(|r| !r.passed).count(), t0.elapsed().as_secs_f64());
    Ok(())
}
