//! Raw image → detections: letterbox, forward, decode, threshold, NMS, unmap.

mod decode;
mod image;
mod nms;

pub use self::image::{letterbox, Image, LetterboxInfo, PAD_FILL};
pub use decode::{decode_level, sigmoid, Candidate};
pub use nms::{iou, nms};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::YotoR;
use crate::neck::AnchorSet;
use crate::tensor::{no_grad, Element, Tensor};

/// A box in original-image pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    /// `[x1, y1, x2, y2]`.
    pub bbox: [f64; 4],
    pub score: f64,
    pub class: usize,
}

/// One COCO results record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CocoResult {
    pub image_id: u64,
    pub category_id: u64,
    /// `[x, y, width, height]`.
    pub bbox: [f64; 4],
    pub score: f64,
}

impl Detection {
    /// `category_ids[class]` gives the COCO category.
    pub fn to_coco(&self, image_id: u64, category_ids: &[u64]) -> Result<CocoResult> {
        let category_id = *category_ids
            .get(self.class)
            .ok_or_else(|| Error::Config(format!("class {} has no category id ({} known)", self.class, category_ids.len())))?;
        let [x1, y1, x2, y2] = self.bbox;
        Ok(CocoResult { image_id, category_id, bbox: [x1, y1, x2 - x1, y2 - y1], score: self.score })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectConfig {
    pub resolution: usize,
    pub score_thresh: f64,
    pub iou_thresh: f64,
    pub max_det: usize,
    pub fill: f32,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self::demo(1280)
    }
}

impl DetectConfig {
    /// Score threshold 0.25 for viewing results.
    pub fn demo(resolution: usize) -> Self {
        Self { resolution, score_thresh: 0.25, iou_thresh: 0.65, max_det: 300, fill: PAD_FILL }
    }

    /// Score threshold 0.001 and 100 boxes for metric computation.
    pub fn eval(resolution: usize) -> Self {
        Self { score_thresh: 0.001, max_det: 100, ..Self::demo(resolution) }
    }
}

/// Decodes every level of a head output and returns per-image candidates.
pub fn decode_outputs<T: Element>(raw: &[Tensor<T>], anchors: &AnchorSet, nc: usize) -> Result<Vec<Vec<Candidate>>> {
    if raw.len() != anchors.levels() {
        return Err(Error::dim("decode", format!("{} outputs for {} anchor levels", raw.len(), anchors.levels())));
    }
    let mut per_image: Vec<Vec<Candidate>> = Vec::new();
    for (l, t) in raw.iter().enumerate() {
        let level = decode_level(t, &anchors.anchors[l], anchors.strides[l], nc, l)?;
        if per_image.is_empty() {
            per_image = level;
        } else {
            for (acc, c) in per_image.iter_mut().zip(level) {
                acc.extend(c);
            }
        }
    }
    Ok(per_image)
}

/// Candidates of one image → final detections in original-image pixels.
pub fn postprocess(cands: &[Candidate], info: &LetterboxInfo, cfg: &DetectConfig) -> Vec<Detection> {
    let dets: Vec<Detection> = cands
        .iter()
        .filter_map(|c| {
            let (class, score) = c.best();
            (score > cfg.score_thresh).then(|| Detection { bbox: c.bbox(), score, class })
        })
        .collect();
    nms(&dets, cfg.iou_thresh, cfg.score_thresh, cfg.max_det)
        .into_iter()
        .filter_map(|d| {
            let b = info.clip_box(info.unmap_box(d.bbox));
            (b[2] > b[0] && b[3] > b[1]).then_some(Detection { bbox: b, ..d })
        })
        .collect()
}

/// A model plus its inference settings.
pub struct Detector<'a, T: Element> {
    pub model: &'a YotoR<T>,
    pub config: DetectConfig,
}

impl<'a, T: Element> Detector<'a, T> {
    pub fn new(model: &'a YotoR<T>, config: DetectConfig) -> Self {
        Self { model, config }
    }

    pub fn preprocess(&self, image: &Image) -> Result<(Tensor<T>, LetterboxInfo)> {
        let (boxed, info) = letterbox(image, self.config.resolution, self.config.fill)?;
        Ok((boxed.to_tensor(), info))
    }

    /// Raw head outputs for a preprocessed `[1, 3, R, R]` input.
    pub fn forward(&self, input: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        no_grad(|| self.model.forward(input))
    }

    pub fn detect(&self, image: &Image) -> Result<Vec<Detection>> {
        let (x, info) = self.preprocess(image)?;
        let raw = self.forward(&x)?;
        let head = &self.model.config.head;
        let cands = decode_outputs(&raw, &head.anchors, head.nc)?;
        Ok(postprocess(&cands[0], &info, &self.config))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hooks;
    use crate::model::{ModelConfig, VariantSpec};

    #[test]
    fn coco_record_uses_xywh() {
        let d = Detection { bbox: [1.0, 2.0, 4.0, 8.0], score: 0.5, class: 1 };
        let r = d.to_coco(7, &[1, 3]).unwrap();
        assert_eq!((r.image_id, r.category_id, r.bbox), (7, 3, [1.0, 2.0, 3.0, 6.0]));
        assert!(d.to_coco(7, &[1]).is_err());
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"image_id\":7") && json.contains("\"category_id\":3"));
    }

    #[test]
    fn toy_pipeline_runs_every_stage() {
        let cfg = ModelConfig::toy(VariantSpec::TP5, 2).unwrap();
        let model = YotoR::<f32>::build(&cfg, 3).unwrap();
        let det = Detector::new(&model, DetectConfig { score_thresh: 0.0, ..DetectConfig::eval(128) });
        let before = hooks::counts();
        let out = det.detect(&Image::filled(100, 60, 0.4)).unwrap();
        let used = hooks::counts().since(&before);
        assert_eq!((used.forward, used.decode, used.nms), (1, 4, 1));
        assert!(!out.is_empty() && out.len() <= 100);
        for d in &out {
            assert!(d.bbox[2] > d.bbox[0] && d.bbox[3] > d.bbox[1]);
            assert!(d.bbox[2] <= 100.0 && d.bbox[3] <= 60.0);
            assert!(d.score > 0.0 && d.score < 1.0 && d.class < 2);
        }
        assert!(out.windows(2).all(|w| w[0].score >= w[1].score));
    }
}
