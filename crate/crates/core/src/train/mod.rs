//! Target assignment, detection loss and a small SGD loop for overfitting toy sets.

mod assign;
mod config;
mod data;
mod loss;
mod optim;
mod toy;

pub use assign::{anchor_ratio, assign_targets, Assigned, Assignment, TargetBox};
pub use config::{AugmentConfig, BoxLoss, ObjTarget, TrainConfig};
pub use data::{load_dataset, save_dataset, synthetic_dataset, to_coco, Sample};
pub use loss::{bce_with_logits, box_iou, compute_loss, compute_loss_with, DetachedTerms, LossComponents, LossOutput};
pub use optim::{ParamGroup, Schedule, Sgd, StepSettings};
pub use toy::{recovered_boxes, run_toy, ToyOutcome, ToyRunConfig};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::YotoR;
use crate::tensor::{Element, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: LossComponents,
    pub settings: StepSettings,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainHistory {
    pub steps: Vec<StepRecord>,
}

impl TrainHistory {
    pub fn losses(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.loss.total).collect()
    }

    pub fn initial_loss(&self) -> Option<f64> {
        self.steps.first().map(|s| s.loss.total)
    }

    /// Mean total loss over the last pass through the data.
    pub fn final_loss(&self, batches_per_epoch: usize) -> Option<f64> {
        let k = batches_per_epoch.clamp(1, self.steps.len().max(1));
        let tail = &self.steps[self.steps.len().saturating_sub(k)..];
        (!tail.is_empty()).then(|| tail.iter().map(|s| s.loss.total).sum::<f64>() / tail.len() as f64)
    }
}

/// Stacks samples into `[B, 3, H, W]` and tags each box with its batch index.
pub fn make_batch<T: Element>(samples: &[&Sample]) -> Result<(Tensor<T>, Vec<TargetBox>)> {
    let images: Vec<Tensor<T>> = samples.iter().map(|s| s.image.to_tensor()).collect();
    let x = Tensor::concat(&images, 0)?;
    let targets = samples
        .iter()
        .enumerate()
        .flat_map(|(i, s)| s.boxes.iter().map(move |b| TargetBox { image: i, ..b.clone() }))
        .collect();
    Ok((x, targets))
}

/// Contiguous batches in dataset order: `⌈n / batch_size⌉` per epoch.
pub fn batches_per_epoch(n: usize, batch_size: usize) -> usize {
    n.div_ceil(batch_size.min(n).max(1))
}

/// Runs `steps` SGD steps over `data` in fixed order, calling `on_step` after each.
pub fn train_with<T: Element>(
    model: &mut YotoR<T>,
    data: &[Sample],
    cfg: &TrainConfig,
    steps: usize,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<TrainHistory> {
    let head = model.config.head.clone();
    cfg.validate(head.anchors.levels())?;
    if data.is_empty() {
        return Err(Error::Dataset("empty training set".into()));
    }
    let res = model.config.resolution;
    let data: Vec<Sample> = data
        .iter()
        .map(|s| if s.image.width == res && s.image.height == res { Ok(s.clone()) } else { s.letterboxed(res) })
        .collect::<Result<_>>()?;
    model.freeze_backbone(cfg.freeze_backbone);
    let bs = cfg.batch_size.min(data.len());
    let nb = batches_per_epoch(data.len(), bs);
    let mut batches = Vec::with_capacity(nb);
    for k in 0..nb {
        let members: Vec<&Sample> = data[k * bs..((k + 1) * bs).min(data.len())].iter().collect();
        batches.push(make_batch::<T>(&members)?);
    }
    let mut assignments: Vec<Option<Assignment>> = vec![None; nb];
    let schedule = Schedule::new(cfg, nb, steps);
    let mut sgd = Sgd::new(cfg.weight_decay).with_clip(cfg.clip_grad_norm);
    let mut history = TrainHistory::default();
    for step in 0..steps {
        let settings = schedule.at(step);
        let k = step % nb;
        let (x, targets) = &batches[k];
        let outputs = model.forward(x)?;
        let assignment = assignments[k].get_or_insert_with(|| {
            let grids: Vec<(usize, usize)> = outputs.iter().map(|o| (o.dim(2), o.dim(3))).collect();
            assign_targets(targets, &head.anchors, &grids, cfg.anchor_t)
        });
        let loss = compute_loss(&outputs, assignment, &head.anchors, head.nc, cfg)?;
        if !loss.components.total.is_finite() {
            return Err(Error::Divergence { step, msg: format!("{:?}", loss.components) });
        }
        let grads = loss.total.backward()?;
        sgd.step(model, &grads, &settings)?;
        let record = StepRecord { step, loss: loss.components, settings };
        on_step(&record);
        history.steps.push(record);
    }
    Ok(history)
}

pub fn train<T: Element>(model: &mut YotoR<T>, data: &[Sample], cfg: &TrainConfig, steps: usize) -> Result<TrainHistory> {
    train_with(model, data, cfg, steps, |_| {})
}
