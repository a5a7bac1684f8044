//! COCO box evaluation: AP/AR over IoU thresholds, object sizes and detection caps.

mod dataset;
mod protocol;

pub use dataset::{load_coco, load_coco_files, xywh_to_xyxy, Annotation, Category, CocoDataset, GroundTruth, GtBox, ImageInfo};
pub use protocol::{coco_iou, evaluate_matrix, AreaRange, EvalConfig, EvalMatrix};

use serde::{Deserialize, Serialize};

use crate::detect::CocoResult;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    AP,
    AR,
}

/// One row of the summary table. `value` is `None` when the slice has no ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatRow {
    pub metric: Metric,
    /// `None` averages over all thresholds.
    pub iou: Option<f64>,
    pub area: String,
    pub max_dets: usize,
    pub value: Option<f64>,
}

impl StatRow {
    pub fn iou_label(&self) -> String {
        match self.iou {
            None => "IoU=.5:.95".into(),
            Some(t) => format!("IoU={}", format!("{t}").trim_start_matches('0')),
        }
    }

    pub fn area_label(&self) -> &str {
        match self.area.as_str() {
            "small" => "s",
            "medium" => "m",
            "large" => "l",
            a => a,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub category_id: u64,
    pub name: String,
    pub ap: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// The twelve standard rows: AP (.5:.95, .5, .75, s, m, l) then AR (1, 10, 100, s, m, l).
    pub stats: Vec<StatRow>,
    /// AP over IoU .5:.95, all areas, the largest detection cap.
    pub per_class: Vec<ClassAp>,
}

const ROWS: [(Metric, Option<f64>, &str, usize); 12] = [
    (Metric::AP, None, "all", 100),
    (Metric::AP, Some(0.5), "all", 100),
    (Metric::AP, Some(0.75), "all", 100),
    (Metric::AP, None, "small", 100),
    (Metric::AP, None, "medium", 100),
    (Metric::AP, None, "large", 100),
    (Metric::AR, None, "all", 1),
    (Metric::AR, None, "all", 10),
    (Metric::AR, None, "all", 100),
    (Metric::AR, None, "small", 100),
    (Metric::AR, None, "medium", 100),
    (Metric::AR, None, "large", 100),
];

impl EvalReport {
    pub fn from_matrix(mx: &EvalMatrix, gt: &GroundTruth) -> Self {
        let cfg = &mx.config;
        let stats = ROWS
            .iter()
            .map(|&(metric, iou, area, max_dets)| {
                let value = (|| {
                    let a = cfg.area_index(area)?;
                    let m = cfg.max_det_index(max_dets)?;
                    let t = match iou {
                        Some(v) => Some(cfg.iou_index(v)?),
                        None => None,
                    };
                    match metric {
                        Metric::AP => mx.average_precision(t, None, a, m),
                        Metric::AR => mx.average_recall(t, a, m),
                    }
                })();
                StatRow { metric, iou, area: area.into(), max_dets, value }
            })
            .collect();
        let (a, m) = (cfg.area_index("all").unwrap_or(0), cfg.max_dets.len() - 1);
        let per_class = mx
            .category_ids
            .iter()
            .enumerate()
            .map(|(k, &id)| ClassAp {
                category_id: id,
                name: gt.category_names.get(&id).cloned().unwrap_or_default(),
                ap: mx.average_precision(None, Some(k), a, m),
            })
            .collect();
        Self { stats, per_class }
    }

    /// Looks up a summary row, e.g. `get(Metric::AP, Some(0.5), "all", 100)`.
    pub fn get(&self, metric: Metric, iou: Option<f64>, area: &str, max_dets: usize) -> Option<f64> {
        self.stats
            .iter()
            .find(|r| r.metric == metric && r.iou == iou && r.area == area && r.max_dets == max_dets)
            .and_then(|r| r.value)
    }

    /// The headline AP@[.5:.95].
    pub fn ap(&self) -> Option<f64> {
        self.get(Metric::AP, None, "all", 100)
    }

    /// Rows laid out as `AP | IoU=.5:.95 | area=all | maxDets=100 | value`.
    pub fn to_table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
        let mut s = String::new();
        for r in &self.stats {
            s.push_str(&format!(
                "{:<2} | {:<10} | {:<8} | maxDets={:>3} | {}\n",
                format!("{:?}", r.metric),
                r.iou_label(),
                format!("area={}", r.area_label()),
                r.max_dets,
                fmt(r.value)
            ));
        }
        if !self.per_class.is_empty() {
            s.push_str("\ncategory_id | name | AP\n");
            for c in &self.per_class {
                s.push_str(&format!("{} | {} | {}\n", c.category_id, c.name, fmt(c.ap)));
            }
        }
        s
    }

    /// `metric,iou,area,max_dets,value`; undefined slices have an empty value.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["metric", "iou", "area", "max_dets", "value"])?;
        for r in &self.stats {
            w.write_record([
                format!("{:?}", r.metric),
                r.iou.map_or(".5:.95".into(), |t| t.to_string()),
                r.area.clone(),
                r.max_dets.to_string(),
                r.value.map_or(String::new(), |v| v.to_string()),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("utf-8"))
    }
}

/// Full evaluation with the standard settings.
pub fn evaluate(gt: &GroundTruth, dets: &[CocoResult], cfg: &EvalConfig) -> Result<EvalReport> {
    Ok(EvalReport::from_matrix(&evaluate_matrix(gt, dets, cfg)?, gt))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_image(boxes: &[[f64; 4]]) -> GroundTruth {
        let ds = CocoDataset {
            images: vec![ImageInfo { id: 1, width: 200, height: 200, file_name: String::new() }],
            annotations: boxes
                .iter()
                .enumerate()
                .map(|(i, &bbox)| Annotation { id: i as u64 + 1, image_id: 1, category_id: 1, bbox, area: None, iscrowd: 0 })
                .collect(),
            categories: vec![Category { id: 1, name: "thing".into() }],
        };
        GroundTruth::from_dataset(&ds).unwrap()
    }

    fn res(bbox: [f64; 4], score: f64) -> CocoResult {
        CocoResult { image_id: 1, category_id: 1, bbox, score }
    }

    #[test]
    fn perfect_detector_is_all_ones() {
        let boxes = [[10.0, 10.0, 20.0, 20.0], [50.0, 50.0, 60.0, 40.0], [0.0, 0.0, 150.0, 120.0]];
        let ds = CocoDataset {
            images: (1..=3).map(|id| ImageInfo { id, width: 200, height: 200, file_name: String::new() }).collect(),
            annotations: boxes
                .iter()
                .zip(1..)
                .map(|(&bbox, id)| Annotation { id, image_id: id, category_id: 1, bbox, area: None, iscrowd: 0 })
                .collect(),
            categories: vec![Category { id: 1, name: "thing".into() }],
        };
        let gt = GroundTruth::from_dataset(&ds).unwrap();
        let dets: Vec<_> = boxes.iter().zip(1..).map(|(&bbox, image_id)| CocoResult { image_id, category_id: 1, bbox, score: 1.0 }).collect();
        let r = evaluate(&gt, &dets, &EvalConfig::default()).unwrap();
        for row in &r.stats {
            assert_eq!(row.value, Some(1.0), "{row:?}");
        }
        assert_eq!(r.per_class[0].ap, Some(1.0));
    }

    #[test]
    fn wrong_then_right_gives_half() {
        let gt = one_image(&[[10.0, 10.0, 20.0, 20.0]]);
        let dets = [res([100.0, 100.0, 20.0, 20.0], 0.9), res([10.0, 10.0, 20.0, 20.0], 0.8)];
        let r = evaluate(&gt, &dets, &EvalConfig::default()).unwrap();
        assert_eq!(r.get(Metric::AP, Some(0.5), "all", 100), Some(0.5));
        assert_eq!(r.ap(), Some(0.5));
        assert_eq!(r.get(Metric::AR, None, "all", 100), Some(1.0));
        // only the wrong box survives a cap of one
        assert_eq!(r.get(Metric::AR, None, "all", 1), Some(0.0));
        assert_eq!(r.get(Metric::AP, None, "large", 100), None);
    }

    #[test]
    fn no_detections_score_zero() {
        let r = evaluate(&one_image(&[[10.0, 10.0, 20.0, 20.0]]), &[], &EvalConfig::default()).unwrap();
        assert_eq!(r.ap(), Some(0.0));
        assert_eq!(r.get(Metric::AR, None, "all", 100), Some(0.0));
        let table = r.to_table();
        assert!(table.contains("AP | IoU=.5:.95 | area=all | maxDets=100 | 0.000"), "{table}");
        assert!(table.contains("AP | IoU=.75"), "{table}");
        assert!(table.contains("area=l   | maxDets=100 | -"), "{table}");
        assert_eq!(r.to_csv().unwrap().lines().count(), 13);
    }

    #[test]
    fn crowd_absorbs_detections() {
        let mut ds = CocoDataset {
            images: vec![ImageInfo { id: 1, width: 100, height: 100, file_name: String::new() }],
            annotations: vec![
                Annotation { id: 1, image_id: 1, category_id: 1, bbox: [0.0, 0.0, 10.0, 10.0], area: None, iscrowd: 0 },
                Annotation { id: 2, image_id: 1, category_id: 1, bbox: [40.0, 40.0, 50.0, 50.0], area: None, iscrowd: 1 },
            ],
            categories: vec![Category { id: 1, name: String::new() }],
        };
        let gt = GroundTruth::from_dataset(&ds).unwrap();
        // two boxes inside the crowd region outrank the true positive but count as neither TP nor FP
        let dets = [res([45.0, 45.0, 10.0, 10.0], 0.9), res([60.0, 60.0, 10.0, 10.0], 0.8), res([0.0, 0.0, 10.0, 10.0], 0.5)];
        let r = evaluate(&gt, &dets, &EvalConfig::default()).unwrap();
        assert_eq!(r.ap(), Some(1.0));
        ds.annotations[1].iscrowd = 0;
        let gt = GroundTruth::from_dataset(&ds).unwrap();
        assert!(evaluate(&gt, &dets, &EvalConfig::default()).unwrap().ap().unwrap() < 1.0);
    }
}
