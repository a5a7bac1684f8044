//! Overfits the toy detector, then runs the full inference path on one of its
//! training images: letterbox, forward, decode, NMS, and boxes mapped back.
//!
//! ```text
//! cargo run --release --example detect -- [out.png]
//! ```

use yotor::detect::{DetectConfig, Detector};
use yotor::train::{run_toy, ToyRunConfig};

fn main() -> yotor::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "detect.png".into());
    let toy = run_toy(&ToyRunConfig::default(), |_| {})?;
    println!("trained: {}/{} training boxes recovered", toy.recovered, toy.boxes);

    let sample = &toy.data[0];
    for b in &sample.boxes {
        println!("truth class {} box {:.1?}", b.class, b.bbox);
    }
    let image = &sample.image;
    let detector = Detector::new(&toy.model, DetectConfig::demo(toy.model.config.resolution));
    let dets = detector.detect(image)?;
    let mut canvas = image.clone();
    for d in &dets {
        println!("class {} score {:.2} box {:.1?}", d.class, d.score, d.bbox);
        canvas.draw_box(d.bbox, if d.class == 0 { [1.0, 0.2, 0.2] } else { [0.2, 0.4, 1.0] });
    }
    canvas.save(std::path::Path::new(&out))?;
    println!("{} detections, drawn to {out}", dets.len());
    Ok(())
}
