use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detect::CocoResult;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageInfo {
    pub id: u64,
    #[serde(default)]
    pub width: u32,
    #[serde(default)]
    pub height: u32,
    #[serde(default)]
    pub file_name: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    /// `[x, y, width, height]`.
    pub bbox: [f64; 4],
    /// Defaults to `width·height` when absent.
    #[serde(default)]
    pub area: Option<f64>,
    #[serde(default)]
    pub iscrowd: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub id: u64,
    #[serde(default)]
    pub name: String,
}

/// The `images` / `annotations` / `categories` document.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CocoDataset {
    pub images: Vec<ImageInfo>,
    pub annotations: Vec<Annotation>,
    pub categories: Vec<Category>,
}

/// Corner form of a COCO `[x, y, w, h]` box.
pub fn xywh_to_xyxy(b: [f64; 4]) -> [f64; 4] {
    [b[0], b[1], b[0] + b[2], b[1] + b[3]]
}

#[derive(Clone, Debug, PartialEq)]
pub struct GtBox {
    pub id: u64,
    pub bbox: [f64; 4],
    pub area: f64,
    pub iscrowd: bool,
}

/// Validated ground truth indexed by `(image_id, category_id)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    /// Sorted ascending.
    pub image_ids: Vec<u64>,
    /// Sorted ascending.
    pub category_ids: Vec<u64>,
    pub category_names: BTreeMap<u64, String>,
    pub boxes: HashMap<(u64, u64), Vec<GtBox>>,
}

impl GroundTruth {
    pub fn from_dataset(ds: &CocoDataset) -> Result<Self> {
        let mut image_ids: Vec<u64> = ds.images.iter().map(|i| i.id).collect();
        image_ids.sort_unstable();
        if image_ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Dataset("duplicate image id".into()));
        }
        let category_names: BTreeMap<u64, String> = ds.categories.iter().map(|c| (c.id, c.name.clone())).collect();
        if category_names.len() != ds.categories.len() {
            return Err(Error::Dataset("duplicate category id".into()));
        }
        let mut boxes: HashMap<(u64, u64), Vec<GtBox>> = HashMap::new();
        for a in &ds.annotations {
            if image_ids.binary_search(&a.image_id).is_err() {
                return Err(Error::Dataset(format!("annotation {} references unknown image_id {}", a.id, a.image_id)));
            }
            if !category_names.contains_key(&a.category_id) {
                return Err(Error::Dataset(format!("annotation {} references unknown category_id {}", a.id, a.category_id)));
            }
            let area = a.area.unwrap_or(a.bbox[2] * a.bbox[3]);
            if !(area > 0.0) || a.bbox[2] < 0.0 || a.bbox[3] < 0.0 {
                return Err(Error::Dataset(format!("annotation {} has non-positive area or extent", a.id)));
            }
            boxes.entry((a.image_id, a.category_id)).or_default().push(GtBox { id: a.id, bbox: a.bbox, area, iscrowd: a.iscrowd != 0 });
        }
        Ok(Self { image_ids, category_ids: category_names.keys().copied().collect(), category_names, boxes })
    }

    /// Rejects results on images or categories absent from the ground truth.
    pub fn check_results(&self, dets: &[CocoResult]) -> Result<()> {
        for (i, d) in dets.iter().enumerate() {
            if self.image_ids.binary_search(&d.image_id).is_err() {
                return Err(Error::Dataset(format!("result {i} references unknown image_id {}", d.image_id)));
            }
            if !self.category_names.contains_key(&d.category_id) {
                return Err(Error::Dataset(format!("result {i} references unknown category_id {}", d.category_id)));
            }
            if !d.score.is_finite() || d.bbox.iter().any(|v| !v.is_finite()) {
                return Err(Error::Dataset(format!("result {i} has a non-finite value")));
            }
        }
        Ok(())
    }
}

fn parse<T: serde::de::DeserializeOwned>(what: &str, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Dataset(format!("{what}: {e}")))
}

/// Parses and cross-checks a ground-truth document and a results array.
pub fn load_coco(gt_json: &str, results_json: &str) -> Result<(GroundTruth, Vec<CocoResult>)> {
    let ds: CocoDataset = parse("ground truth", gt_json)?;
    let gt = GroundTruth::from_dataset(&ds)?;
    let dets: Vec<CocoResult> = parse("results", results_json)?;
    gt.check_results(&dets)?;
    Ok((gt, dets))
}

pub fn load_coco_files(gt: &Path, results: &Path) -> Result<(GroundTruth, Vec<CocoResult>)> {
    let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| Error::io(p, e));
    load_coco(&read(gt)?, &read(results)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const GT: &str = r#"{"images":[{"id":1,"width":10,"height":10,"file_name":"a.png"}],
        "annotations":[{"id":1,"image_id":1,"category_id":3,"bbox":[1,2,3,4],"area":12,"iscrowd":0}],
        "categories":[{"id":3,"name":"box"}]}"#;

    #[test]
    fn minimal_fixture_loads() {
        let (gt, dets) = load_coco(GT, r#"[{"image_id":1,"category_id":3,"bbox":[1,2,3,4],"score":0.9}]"#).unwrap();
        assert_eq!(gt.image_ids, vec![1]);
        assert_eq!(gt.boxes[&(1, 3)][0].area, 12.0);
        assert_eq!(dets.len(), 1);
        assert_eq!(xywh_to_xyxy([1.0, 2.0, 3.0, 4.0]), [1.0, 2.0, 4.0, 6.0]);
    }

    #[test]
    fn load_errors_are_descriptive() {
        let e = load_coco(GT, r#"[{"image_id":9,"category_id":3,"bbox":[1,2,3,4],"score":0.9}]"#).unwrap_err();
        assert!(e.to_string().contains("unknown image_id 9"), "{e}");
        let e = load_coco(GT, r#"[{"image_id":1,"category_id":4,"bbox":[1,2,3,4],"score":0.9}]"#).unwrap_err();
        assert!(e.to_string().contains("unknown category_id 4"), "{e}");
        let e = load_coco(r#"{"images":[],"categories":[]}"#, "[]").unwrap_err();
        assert!(e.to_string().contains("annotations"), "{e}");
        let e = load_coco(GT, r#"[{"image_id":1,"bbox":[1,2,3,4],"score":0.9}]"#).unwrap_err();
        assert!(e.to_string().contains("category_id"), "{e}");
    }
}
