//! The synthetic overfit run: a toy TP5 model, a handful of rectangle images,
//! full-batch SGD, then a check that detection recovers every box.

use serde::Serialize;

use super::{make_batch, synthetic_dataset, train_with, Sample, StepRecord, TrainConfig, TrainHistory};
use crate::detect::{iou, DetectConfig, Detector};
use crate::error::Result;
use crate::model::{ModelConfig, VariantSpec, YotoR};

#[derive(Clone, Debug, Serialize)]
pub struct ToyRunConfig {
    pub images: usize,
    pub nc: usize,
    pub steps: usize,
    pub seed: u64,
    pub train: TrainConfig,
}

impl Default for ToyRunConfig {
    fn default() -> Self {
        Self { images: 8, nc: 2, steps: 500, seed: 0, train: Self::toy_train_config() }
    }
}

impl ToyRunConfig {
    /// Table defaults with the learning rate scaled for the toy model, the
    /// randomly initialized backbone frozen, and global gradient clipping.
    pub fn toy_train_config() -> TrainConfig {
        TrainConfig { lr0: 0.05, clip_grad_norm: Some(3.0), freeze_backbone: true, ..TrainConfig::default() }
    }
}

#[derive(Clone, Debug)]
pub struct ToyOutcome {
    pub model: YotoR<f32>,
    pub data: Vec<Sample>,
    pub history: TrainHistory,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub recovered: usize,
    pub boxes: usize,
}

impl ToyOutcome {
    pub fn loss_ratio(&self) -> f64 {
        self.final_loss / self.initial_loss
    }
}

/// Ground-truth boxes matched by a same-class detection with IoU ≥ `min_iou` and
/// score ≥ `min_score`, and the total number of boxes.
pub fn recovered_boxes(model: &YotoR<f32>, data: &[Sample], min_iou: f64, min_score: f64) -> Result<(usize, usize)> {
    let det = Detector::new(model, DetectConfig::demo(model.config.resolution));
    let (mut found, mut total) = (0, 0);
    for s in data {
        let dets = det.detect(&s.image)?;
        for b in &s.boxes {
            total += 1;
            let best = dets
                .iter()
                .filter(|d| d.class == b.class && d.score >= min_score)
                .map(|d| iou(&d.bbox, &b.bbox))
                .fold(0.0, f64::max);
            if best >= min_iou {
                found += 1;
            }
        }
    }
    Ok((found, total))
}

/// Builds, calibrates and trains the toy model, then counts recovered boxes at
/// IoU ≥ 0.5 and score ≥ 0.5.
pub fn run_toy(cfg: &ToyRunConfig, on_step: impl FnMut(&StepRecord)) -> Result<ToyOutcome> {
    let mc = ModelConfig::toy(VariantSpec::TP5, cfg.nc)?;
    let mut model = YotoR::<f32>::build(&mc, cfg.seed)?;
    let data = synthetic_dataset(cfg.images, mc.resolution, cfg.nc, cfg.seed);
    let (images, _) = make_batch::<f32>(&data.iter().collect::<Vec<_>>())?;
    model.calibrate(&images)?;
    let history = train_with(&mut model, &data, &cfg.train, cfg.steps, on_step)?;
    let nb = super::batches_per_epoch(data.len(), cfg.train.batch_size.min(data.len()));
    let initial_loss = history.initial_loss().unwrap_or(f64::NAN);
    let final_loss = history.final_loss(nb).unwrap_or(f64::NAN);
    let (recovered, boxes) = recovered_boxes(&model, &data, 0.5, 0.5)?;
    Ok(ToyOutcome { model, data, history, initial_loss, final_loss, recovered, boxes })
}
