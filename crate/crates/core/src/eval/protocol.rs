use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::dataset::{GroundTruth, GtBox};
use crate::detect::CocoResult;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AreaRange {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub iou_thresholds: Vec<f64>,
    pub recall_thresholds: Vec<f64>,
    pub area_ranges: Vec<AreaRange>,
    pub max_dets: Vec<usize>,
}

/// `num` evenly spaced values from `start` to `stop`, computed the way numpy does.
fn linspace(start: f64, stop: f64, num: usize) -> Vec<f64> {
    let step = (stop - start) / (num - 1) as f64;
    let mut v: Vec<f64> = (0..num).map(|i| i as f64 * step + start).collect();
    v[num - 1] = stop;
    v
}

impl Default for EvalConfig {
    fn default() -> Self {
        let range = |name: &str, lo: f64, hi: f64| AreaRange { name: name.into(), lo, hi };
        Self {
            iou_thresholds: linspace(0.5, 0.95, 10),
            recall_thresholds: linspace(0.0, 1.0, 101),
            area_ranges: vec![
                range("all", 0.0, 1e10),
                range("small", 0.0, 32.0 * 32.0),
                range("medium", 32.0 * 32.0, 96.0 * 96.0),
                range("large", 96.0 * 96.0, 1e10),
            ],
            max_dets: vec![1, 10, 100],
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        let increasing = |v: &[f64]| !v.is_empty() && v.windows(2).all(|w| w[0] < w[1]);
        if !increasing(&self.iou_thresholds) || !increasing(&self.recall_thresholds) {
            return Err(Error::Config("IoU and recall thresholds must be non-empty and strictly increasing".into()));
        }
        if self.area_ranges.is_empty() || self.max_dets.is_empty() || !self.max_dets.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config("need area ranges and strictly increasing maxDets".into()));
        }
        Ok(())
    }

    pub fn iou_index(&self, t: f64) -> Option<usize> {
        self.iou_thresholds.iter().position(|&x| (x - t).abs() < 1e-9)
    }

    pub fn area_index(&self, name: &str) -> Option<usize> {
        self.area_ranges.iter().position(|a| a.name == name)
    }

    pub fn max_det_index(&self, m: usize) -> Option<usize> {
        self.max_dets.iter().position(|&x| x == m)
    }
}

/// Box IoU on `[x, y, w, h]`; against a crowd region the union is the detection's own area.
pub fn coco_iou(d: &[f64; 4], g: &[f64; 4], crowd: bool) -> f64 {
    let w = (d[0] + d[2]).min(g[0] + g[2]) - d[0].max(g[0]);
    if w <= 0.0 {
        return 0.0;
    }
    let h = (d[1] + d[3]).min(g[1] + g[3]) - d[1].max(g[1]);
    if h <= 0.0 {
        return 0.0;
    }
    let i = w * h;
    let da = d[2] * d[3];
    let u = if crowd { da } else { da + g[2] * g[3] - i };
    i / u
}

/// Matching outcome of one image, category and area range.
struct ImageEval {
    /// Descending, truncated to the largest maxDets.
    scores: Vec<f64>,
    /// `[T][D]`.
    matched: Vec<Vec<bool>>,
    ignored: Vec<Vec<bool>>,
    gt_ignored: Vec<bool>,
}

fn evaluate_image(gts: &[GtBox], dts: &[&CocoResult], area: &AreaRange, cfg: &EvalConfig) -> Option<ImageEval> {
    if gts.is_empty() && dts.is_empty() {
        return None;
    }
    let out_of = |a: f64| a < area.lo || a > area.hi;
    let mut gt_order: Vec<usize> = (0..gts.len()).collect();
    let raw_ignore: Vec<bool> = gts.iter().map(|g| g.iscrowd || out_of(g.area)).collect();
    gt_order.sort_by_key(|&g| raw_ignore[g]);
    let gts: Vec<&GtBox> = gt_order.iter().map(|&g| &gts[g]).collect();
    let gt_ignored: Vec<bool> = gt_order.iter().map(|&g| raw_ignore[g]).collect();

    let mut dt_order: Vec<usize> = (0..dts.len()).collect();
    dt_order.sort_by(|&a, &b| dts[b].score.total_cmp(&dts[a].score));
    dt_order.truncate(*cfg.max_dets.last().expect("validated"));
    let dts: Vec<&CocoResult> = dt_order.iter().map(|&d| dts[d]).collect();

    let ious: Vec<Vec<f64>> = dts.iter().map(|d| gts.iter().map(|g| coco_iou(&d.bbox, &g.bbox, g.iscrowd)).collect()).collect();
    let (nt, nd, ng) = (cfg.iou_thresholds.len(), dts.len(), gts.len());
    let mut matched = vec![vec![false; nd]; nt];
    let mut ignored = vec![vec![false; nd]; nt];
    for (ti, &t) in cfg.iou_thresholds.iter().enumerate() {
        let mut gt_taken = vec![false; ng];
        for d in 0..nd {
            let mut best = t.min(1.0 - 1e-10);
            let mut m: Option<usize> = None;
            for g in 0..ng {
                if gt_taken[g] && !gts[g].iscrowd {
                    continue;
                }
                // ignored GTs sort last; stop once a real match is held
                if let Some(mi) = m {
                    if !gt_ignored[mi] && gt_ignored[g] {
                        break;
                    }
                }
                if ious[d][g] < best {
                    continue;
                }
                best = ious[d][g];
                m = Some(g);
            }
            if let Some(g) = m {
                ignored[ti][d] = gt_ignored[g];
                matched[ti][d] = true;
                gt_taken[g] = true;
            }
        }
        for d in 0..nd {
            if !matched[ti][d] && out_of(dts[d].bbox[2] * dts[d].bbox[3]) {
                ignored[ti][d] = true;
            }
        }
    }
    Some(ImageEval { scores: dts.iter().map(|d| d.score).collect(), matched, ignored, gt_ignored })
}

/// Interpolated precision `[T, R, K, A, M]` and recall `[T, K, A, M]`; −1 marks
/// slices without any non-ignored ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalMatrix {
    pub config: EvalConfig,
    pub category_ids: Vec<u64>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
}

impl EvalMatrix {
    fn dims(&self) -> (usize, usize, usize, usize, usize) {
        let c = &self.config;
        (c.iou_thresholds.len(), c.recall_thresholds.len(), self.category_ids.len(), c.area_ranges.len(), c.max_dets.len())
    }

    pub fn precision_at(&self, t: usize, r: usize, k: usize, a: usize, m: usize) -> f64 {
        let (_, nr, nk, na, nm) = self.dims();
        self.precision[(((t * nr + r) * nk + k) * na + a) * nm + m]
    }

    pub fn recall_at(&self, t: usize, k: usize, a: usize, m: usize) -> f64 {
        let (_, _, nk, na, nm) = self.dims();
        self.recall[((t * nk + k) * na + a) * nm + m]
    }

    /// Mean AP over the defined cells of a slice; `None` when every cell is −1.
    pub fn average_precision(&self, iou: Option<usize>, category: Option<usize>, a: usize, m: usize) -> Option<f64> {
        let (nt, nr, nk, _, _) = self.dims();
        let mut vals = Vec::new();
        for t in iou.map_or(0..nt, |t| t..t + 1) {
            for r in 0..nr {
                for k in category.map_or(0..nk, |k| k..k + 1) {
                    vals.push(self.precision_at(t, r, k, a, m));
                }
            }
        }
        mean_defined(&vals)
    }

    pub fn average_recall(&self, iou: Option<usize>, a: usize, m: usize) -> Option<f64> {
        let (nt, _, nk, _, _) = self.dims();
        let mut vals = Vec::new();
        for t in iou.map_or(0..nt, |t| t..t + 1) {
            for k in 0..nk {
                vals.push(self.recall_at(t, k, a, m));
            }
        }
        mean_defined(&vals)
    }
}

fn mean_defined(v: &[f64]) -> Option<f64> {
    let d: Vec<f64> = v.iter().copied().filter(|&x| x > -1.0).collect();
    (!d.is_empty()).then(|| d.iter().sum::<f64>() / d.len() as f64)
}

/// Per-image greedy matching, then accumulation over images into the precision/recall matrix.
pub fn evaluate_matrix(gt: &GroundTruth, dets: &[CocoResult], cfg: &EvalConfig) -> Result<EvalMatrix> {
    cfg.validate()?;
    gt.check_results(dets)?;
    let mut by_key: HashMap<(u64, u64), Vec<&CocoResult>> = HashMap::new();
    for d in dets {
        by_key.entry((d.image_id, d.category_id)).or_default().push(d);
    }
    let (nt, nr, nk, na, nm) =
        (cfg.iou_thresholds.len(), cfg.recall_thresholds.len(), gt.category_ids.len(), cfg.area_ranges.len(), cfg.max_dets.len());
    let mut precision = vec![-1.0; nt * nr * nk * na * nm];
    let mut recall = vec![-1.0; nt * nk * na * nm];
    let empty_gt = Vec::new();
    let empty_dt = Vec::new();
    for (k, &cat) in gt.category_ids.iter().enumerate() {
        for (a, area) in cfg.area_ranges.iter().enumerate() {
            let evals: Vec<ImageEval> = gt
                .image_ids
                .iter()
                .filter_map(|&img| {
                    let g = gt.boxes.get(&(img, cat)).unwrap_or(&empty_gt);
                    let d = by_key.get(&(img, cat)).unwrap_or(&empty_dt);
                    evaluate_image(g, d, area, cfg)
                })
                .collect();
            if evals.is_empty() {
                continue;
            }
            let npig = evals.iter().flat_map(|e| &e.gt_ignored).filter(|&&i| !i).count();
            if npig == 0 {
                continue;
            }
            for (m, &max_det) in cfg.max_dets.iter().enumerate() {
                // (score, image slot, detection slot) in concatenation order
                let mut pool: Vec<(f64, usize, usize)> = Vec::new();
                for (e, ev) in evals.iter().enumerate() {
                    for (d, &s) in ev.scores.iter().take(max_det).enumerate() {
                        pool.push((s, e, d));
                    }
                }
                pool.sort_by(|x, y| y.0.total_cmp(&x.0));
                for t in 0..nt {
                    let (mut tp, mut fp) = (0.0f64, 0.0f64);
                    let mut rc = Vec::with_capacity(pool.len());
                    let mut pr = Vec::with_capacity(pool.len());
                    for &(_, e, d) in &pool {
                        let (hit, ign) = (evals[e].matched[t][d], evals[e].ignored[t][d]);
                        if !ign {
                            if hit {
                                tp += 1.0;
                            } else {
                                fp += 1.0;
                            }
                        }
                        rc.push(tp / npig as f64);
                        pr.push(if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 });
                    }
                    recall[((t * nk + k) * na + a) * nm + m] = rc.last().copied().unwrap_or(0.0);
                    for i in (1..pr.len()).rev() {
                        if pr[i] > pr[i - 1] {
                            pr[i - 1] = pr[i];
                        }
                    }
                    for (r, &thr) in cfg.recall_thresholds.iter().enumerate() {
                        let i = rc.partition_point(|&x| x < thr);
                        precision[(((t * nr + r) * nk + k) * na + a) * nm + m] = pr.get(i).copied().unwrap_or(0.0);
                    }
                }
            }
        }
    }
    Ok(EvalMatrix { config: cfg.clone(), category_ids: gt.category_ids.clone(), precision, recall })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grids() {
        let c = EvalConfig::default();
        assert_eq!(c.iou_thresholds.len(), 10);
        assert_eq!(c.iou_index(0.75), Some(5));
        assert_eq!(c.recall_thresholds.len(), 101);
        assert_eq!(c.recall_thresholds[100], 1.0);
        c.validate().unwrap();
        let bad = EvalConfig { iou_thresholds: vec![0.5, 0.5], ..c };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn crowd_iou_uses_detection_area() {
        let g = [0.0, 0.0, 10.0, 10.0];
        let d = [0.0, 0.0, 5.0, 5.0];
        assert_eq!(coco_iou(&d, &g, true), 1.0);
        assert_eq!(coco_iou(&d, &g, false), 0.25);
        assert_eq!(coco_iou(&d, &[6.0, 0.0, 1.0, 1.0], false), 0.0);
    }
}
