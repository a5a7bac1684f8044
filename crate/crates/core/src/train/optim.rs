use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::Result;
use crate::nn::Module;
use crate::tensor::{Element, Gradients, Tensor};

/// Optimizer parameter groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamGroup {
    /// Convolution and linear weights: weight decay applies.
    Decay,
    /// Norm scales and shifts, implicit vectors, attention bias tables.
    NoDecay,
    /// Layer biases: no decay, own warmup start.
    Bias,
}

impl ParamGroup {
    pub fn of(name: &str, t: &Tensor<impl Element>) -> Self {
        let leaf = name.rsplit('.').next().unwrap_or(name);
        if leaf == "bias" {
            ParamGroup::Bias
        } else if leaf == "weight" && t.rank() >= 2 {
            ParamGroup::Decay
        } else {
            ParamGroup::NoDecay
        }
    }
}

/// Learning rates and momentum at one step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StepSettings {
    pub lr_decay: f64,
    pub lr_no_decay: f64,
    pub lr_bias: f64,
    pub momentum: f64,
}

impl StepSettings {
    pub fn lr(&self, g: ParamGroup) -> f64 {
        match g {
            ParamGroup::Decay => self.lr_decay,
            ParamGroup::NoDecay => self.lr_no_decay,
            ParamGroup::Bias => self.lr_bias,
        }
    }
}

/// Linear warmup then per-epoch cosine decay from `lr0` to `lr0·lrf`.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub lr0: f64,
    pub lrf: f64,
    pub momentum: f64,
    pub warmup_momentum: f64,
    pub warmup_bias_lr: f64,
    pub steps_per_epoch: usize,
    pub epochs: usize,
    pub warmup_steps: usize,
}

impl Schedule {
    pub fn new(cfg: &TrainConfig, steps_per_epoch: usize, total_steps: usize) -> Self {
        let steps_per_epoch = steps_per_epoch.max(1);
        Self {
            lr0: cfg.lr0,
            lrf: cfg.lrf,
            momentum: cfg.momentum,
            warmup_momentum: cfg.warmup_momentum,
            warmup_bias_lr: cfg.warmup_bias_lr,
            steps_per_epoch,
            epochs: total_steps.div_ceil(steps_per_epoch).max(1),
            warmup_steps: (cfg.warmup_epochs * steps_per_epoch as f64).round() as usize,
        }
    }

    /// Cosine factor, 1 at epoch 0 falling to `lrf` at the last epoch.
    pub fn factor(&self, epoch: usize) -> f64 {
        let e = epoch as f64 / self.epochs as f64;
        (1.0 - (e * std::f64::consts::PI).cos()) / 2.0 * (self.lrf - 1.0) + 1.0
    }

    pub fn at(&self, step: usize) -> StepSettings {
        let lr = self.lr0 * self.factor(step / self.steps_per_epoch);
        if step < self.warmup_steps {
            let f = step as f64 / self.warmup_steps as f64;
            let lerp = |a: f64, b: f64| a + (b - a) * f;
            StepSettings { lr_decay: lerp(0.0, lr), lr_no_decay: lerp(0.0, lr), lr_bias: lerp(self.warmup_bias_lr, lr), momentum: lerp(self.warmup_momentum, self.momentum) }
        } else {
            StepSettings { lr_decay: lr, lr_no_decay: lr, lr_bias: lr, momentum: self.momentum }
        }
    }
}

/// Stochastic gradient descent with heavy-ball momentum:
/// `g ← ∇ + λ·θ` (decay group only), `v ← μ·v + g`, `θ ← θ − lr·v`.
#[derive(Clone, Debug, Default)]
pub struct Sgd {
    pub weight_decay: f64,
    pub clip: Option<f64>,
    velocity: HashMap<String, Vec<f64>>,
}

impl Sgd {
    pub fn new(weight_decay: f64) -> Self {
        Self { weight_decay, clip: None, velocity: HashMap::new() }
    }

    /// Clips the global gradient norm (weight decay is added after clipping).
    pub fn with_clip(mut self, max_norm: Option<f64>) -> Self {
        self.clip = max_norm;
        self
    }

    /// Updates every tracked parameter of `model` that has a gradient.
    pub fn step<T: Element, M: Module<T>>(&mut self, model: &mut M, grads: &Gradients<T>, s: &StepSettings) -> Result<()> {
        let mut sq = 0.0;
        if self.clip.is_some() {
            model.visit("", &mut |_, p| {
                if let Some(g) = grads.get(p).filter(|_| p.is_tracked()) {
                    sq += g.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>();
                }
            });
        }
        let norm = sq.sqrt();
        let gscale = match self.clip {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        let mut err = None;
        let velocity = &mut self.velocity;
        let wd = self.weight_decay;
        model.visit_mut("", &mut |name, p| {
            if err.is_some() || !p.is_tracked() {
                return;
            }
            let Some(g) = grads.get(p) else { return };
            let group = ParamGroup::of(name, p);
            let decay = if group == ParamGroup::Decay { wd } else { 0.0 };
            let lr = s.lr(group);
            let first = !velocity.contains_key(name);
            let v = velocity.entry(name.to_string()).or_insert_with(|| vec![0.0; g.len()]);
            let mut next = Vec::with_capacity(g.len());
            for ((vi, &gi), &pi) in v.iter_mut().zip(g).zip(p.data()) {
                let pi = pi.as_f64();
                let d = gscale * gi.as_f64() + decay * pi;
                *vi = if first { d } else { s.momentum * *vi + d };
                next.push(T::of_f64(pi - lr * *vi));
            }
            match Tensor::new(p.shape(), next) {
                Ok(t) => *p = t.requires_grad(),
                Err(e) => err = Some(e),
            }
        });
        err.map_or(Ok(()), Err)
    }
}
