//! Inference timing and the speed/accuracy scatter.
//!
//! Timing covers the network forward pass only: batch 1, no decode, no NMS,
//! after a number of untimed warmup passes. Each timed run is recorded.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hooks::{self, StageCounts};
use crate::model::YotoR;
use crate::tensor::init::Initializer;
use crate::tensor::{no_grad, Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub resolution: usize,
    pub warmup: usize,
    pub runs: usize,
}

impl BenchConfig {
    pub fn new(resolution: usize) -> Self {
        Self { resolution, warmup: 10, runs: 3 }
    }
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self::new(1280)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimingResult {
    pub name: String,
    pub resolution: usize,
    pub runs_ms: Vec<f64>,
    pub mean_ms: f64,
    pub fps: f64,
    /// Pipeline stages entered inside the timed region.
    pub timed_stages: StageCounts,
}

impl TimingResult {
    pub fn from_runs(name: &str, resolution: usize, runs_ms: Vec<f64>) -> Self {
        let mean_ms = runs_ms.iter().sum::<f64>() / runs_ms.len().max(1) as f64;
        Self {
            name: name.to_string(),
            resolution,
            runs_ms,
            mean_ms,
            fps: 1000.0 / mean_ms,
            timed_stages: StageCounts::default(),
        }
    }
}

/// Times `cfg.runs` forward passes of `model` on one `resolution²` image.
pub fn bench<T: Element>(model: &YotoR<T>, cfg: &BenchConfig) -> Result<TimingResult> {
    if cfg.runs == 0 || cfg.resolution == 0 {
        return Err(Error::Config("bench needs at least one run and a non-zero resolution".into()));
    }
    let image: Tensor<T> = Initializer::new(0).uniform(&[1, 3, cfg.resolution, cfg.resolution], 1.0);
    no_grad(|| {
        for _ in 0..cfg.warmup {
            model.forward(&image)?;
        }
        let mut runs = Vec::with_capacity(cfg.runs);
        let before = hooks::counts();
        for _ in 0..cfg.runs {
            let t0 = Instant::now();
            let out = model.forward(&image)?;
            runs.push(t0.elapsed().as_secs_f64() * 1000.0);
            drop(out);
        }
        let stages = hooks::counts().since(&before);
        let mut r = TimingResult::from_runs(&model.config.name, cfg.resolution, runs);
        r.timed_stages = stages;
        Ok(r)
    })
}

/// `name,resolution,ms_run1,…,ms_runN,ms_mean,fps`, N taken from the first result.
pub fn timing_csv(results: &[TimingResult]) -> Result<String> {
    let n = results.first().map_or(3, |r| r.runs_ms.len());
    if results.iter().any(|r| r.runs_ms.len() != n) {
        return Err(Error::Config("timing results have different run counts".into()));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["name".to_string(), "resolution".to_string()];
    header.extend((1..=n).map(|i| format!("ms_run{i}")));
    header.extend(["ms_mean".to_string(), "fps".to_string()]);
    w.write_record(&header)?;
    for r in results {
        let mut row = vec![r.name.clone(), r.resolution.to_string()];
        row.extend(r.runs_ms.iter().map(|m| format!("{m:.3}")));
        row.extend([format!("{:.3}", r.mean_ms), format!("{:.2}", r.fps)]);
        w.write_record(&row)?;
    }
    finish(w)
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Config(e.to_string()))
}

/// One model on the speed/accuracy plot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub name: String,
    pub ms: f64,
    pub ap: f64,
}

pub fn scatter_csv(points: &[ScatterPoint]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(["name", "ms", "ap"])?;
    for p in points {
        w.serialize(p)?;
    }
    finish(w)
}

pub fn parse_scatter_csv(text: &str) -> Result<Vec<ScatterPoint>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["name", "ms", "ap"] {
        return Err(Error::Config(format!("scatter csv header {header:?}, expected name,ms,ap")));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Round `span` up to a 1/2/5·10^k tick step giving about five ticks.
fn tick_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|&s| s >= raw).unwrap_or(10.0 * mag)
}

fn axis_range(values: impl Iterator<Item = f64>, fallback: (f64, f64)) -> (f64, f64, f64) {
    let (mut lo, mut hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (lo, hi) = fallback;
    }
    if hi - lo < 1e-9 {
        let pad = if hi.abs() > 0.0 { hi.abs() * 0.1 } else { 1.0 };
        (lo, hi) = (lo - pad, hi + pad);
    }
    let step = tick_step(hi - lo);
    ((lo / step).floor() * step, (hi / step).ceil() * step, step)
}

/// Static SVG: inference time (ms) on x, AP on y, one labeled point per model.
pub fn scatter_svg(points: &[ScatterPoint]) -> String {
    let (w, h) = (640.0, 420.0);
    let (left, right, top, bottom) = (70.0, 30.0, 30.0, 60.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let finite: Vec<&ScatterPoint> = points.iter().filter(|p| p.ms.is_finite() && p.ap.is_finite()).collect();
    let (x0, x1, xs) = axis_range(finite.iter().map(|p| p.ms), (0.0, 100.0));
    let (y0, y1, ys) = axis_range(finite.iter().map(|p| p.ap), (0.0, 1.0));
    let px = |v: f64| left + (v - x0) / (x1 - x0) * pw;
    let py = |v: f64| top + ph - (v - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    let ticks = |lo: f64, hi: f64, step: f64| {
        let n = ((hi - lo) / step).round() as usize;
        (0..=n).map(move |i| lo + i as f64 * step)
    };
    for v in ticks(x0, x1, xs) {
        let x = px(v);
        let _ = writeln!(s, r##"<line x1="{x:.1}" y1="{top}" x2="{x:.1}" y2="{:.1}" stroke="#ddd"/>"##, top + ph);
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, top + ph + 18.0, fmt_tick(v, xs));
    }
    for v in ticks(y0, y1, ys) {
        let y = py(v);
        let _ = writeln!(s, r##"<line x1="{left}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/>"##, left + pw);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, left - 6.0, y + 4.0, fmt_tick(v, ys));
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">Time (ms)</text>"#, left + pw / 2.0, h - 15.0);
    let _ = writeln!(s, r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">AP</text>"#, top + ph / 2.0, top + ph / 2.0);
    for p in &finite {
        let (x, y) = (px(p.ms), py(p.ap));
        let _ = writeln!(s, r##"<circle cx="{x:.1}" cy="{y:.1}" r="4" fill="#1f77b4"/>"##);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, x + 6.0, y - 6.0, xml_escape(&p.name));
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_tick(v: f64, step: f64) -> String {
    let decimals = if step >= 1.0 { 0 } else { (-step.log10().floor()) as usize };
    format!("{v:.decimals$}")
}

/// Spearman rank correlation with average ranks for ties. `None` for fewer than
/// two points or a constant input.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, VariantSpec};

    #[test]
    fn fps_from_mean() {
        let r = TimingResult::from_runs("m", 1280, vec![48.0, 49.0, 48.8]);
        assert!((r.mean_ms - 48.6).abs() < 1e-12);
        assert!((r.fps - 20.576).abs() < 1e-3);
        assert!((r.fps * r.mean_ms - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn toy_bench_times_forward_only() {
        let m = YotoR::<f32>::build(&ModelConfig::toy(VariantSpec::TP4, 1).unwrap(), 0).unwrap();
        let r = bench(&m, &BenchConfig { resolution: 64, warmup: 2, runs: 3 }).unwrap();
        assert_eq!(r.runs_ms.len(), 3);
        assert_eq!(r.timed_stages, StageCounts { forward: 3, decode: 0, nms: 0 });
        let csv = timing_csv(&[r]).unwrap();
        assert!(csv.starts_with("name,resolution,ms_run1,ms_run2,ms_run3,ms_mean,fps\n"));
        assert_eq!(csv.lines().count(), 2);
    }

    #[test]
    fn scatter_round_trip_and_svg() {
        let pts = vec![
            ScatterPoint { name: "TP5, 1280".into(), ms: 48.6, ap: 0.529 },
            ScatterPoint { name: "a\"b".into(), ms: 1.0 / 3.0, ap: 0.1 + 0.2 },
        ];
        assert_eq!(parse_scatter_csv(&scatter_csv(&pts).unwrap()).unwrap(), pts);
        assert!(parse_scatter_csv(&scatter_csv(&[]).unwrap()).unwrap().is_empty());
        let svg = scatter_svg(&pts);
        assert_eq!(svg.matches("<circle").count(), 2);
        assert!(svg.contains("a&quot;b"));
        let empty = scatter_svg(&[]);
        assert!(empty.starts_with("<svg") && empty.trim_end().ends_with("</svg>"));
        assert_eq!(empty.matches("<circle").count(), 0);
    }

    #[test]
    fn spearman_basics() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 35.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 1.0], &[1.0, 2.0]), None);
        assert_eq!(ranks(&[5.0, 1.0, 5.0]), vec![2.5, 1.0, 2.5]);
    }
}
