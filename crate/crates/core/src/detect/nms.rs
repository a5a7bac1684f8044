use std::collections::HashMap;

use super::Detection;
use crate::hooks::{record, Stage};

/// Intersection over union of `[x1, y1, x2, y2]` boxes; 0 when the union is empty.
pub fn iou(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let area = |r: &[f64; 4]| (r[2] - r[0]).max(0.0) * (r[3] - r[1]).max(0.0);
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Greedy class-wise suppression.
///
/// Boxes with `score > score_thresh` are visited by descending score (lower
/// input index first on ties); a box is dropped when it overlaps an already
/// kept box of its class with IoU ≥ `iou_thresh`. At most `max_det` are kept.
pub fn nms(dets: &[Detection], iou_thresh: f64, score_thresh: f64, max_det: usize) -> Vec<Detection> {
    record(Stage::Nms);
    let mut order: Vec<usize> = (0..dets.len()).filter(|&i| dets[i].score > score_thresh).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    let mut kept: HashMap<usize, Vec<usize>> = HashMap::new();
    let mut out = Vec::new();
    for i in order {
        if out.len() == max_det {
            break;
        }
        let same = kept.entry(dets[i].class).or_default();
        if same.iter().all(|&k| iou(&dets[k].bbox, &dets[i].bbox) < iou_thresh) {
            same.push(i);
            out.push(dets[i].clone());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(bbox: [f64; 4], score: f64, class: usize) -> Detection {
        Detection { bbox, score, class }
    }

    #[test]
    fn iou_examples() {
        let a = [0.0, 0.0, 2.0, 2.0];
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &[5.0, 5.0, 6.0, 6.0]), 0.0);
        assert!((iou(&a, &[1.0, 1.0, 3.0, 3.0]) - 1.0 / 7.0).abs() < 1e-15);
        assert_eq!(iou(&[1.0, 1.0, 1.0, 1.0], &[1.0, 1.0, 1.0, 1.0]), 0.0);
    }

    #[test]
    fn nms_examples() {
        let a = det([0.0, 0.0, 10.0, 10.0], 0.8, 0);
        assert_eq!(nms(std::slice::from_ref(&a), 0.5, 0.0, 100), vec![a.clone()]);
        let b = det(a.bbox, 0.9, 0);
        assert_eq!(nms(&[a.clone(), b.clone()], 0.5, 0.0, 100), vec![b.clone()]);
        let other = det(a.bbox, 0.8, 1);
        assert_eq!(nms(&[a.clone(), b.clone(), other.clone()], 0.5, 0.0, 100), vec![b.clone(), other]);
        assert!(nms(&[a, b], 0.5, 0.95, 100).is_empty());
    }

    #[test]
    fn ties_keep_lower_index() {
        let a = det([0.0, 0.0, 10.0, 10.0], 0.5, 0);
        let b = det([1.0, 0.0, 11.0, 10.0], 0.5, 0);
        assert_eq!(nms(&[a.clone(), b.clone()], 0.5, 0.0, 10), vec![a.clone()]);
        assert_eq!(nms(&[b.clone(), a], 0.5, 0.0, 10), vec![b]);
    }
}
