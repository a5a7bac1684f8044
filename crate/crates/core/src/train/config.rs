use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoxLoss {
    #[default]
    Ciou,
    Iou,
}

/// What positives' objectness is regressed towards.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjTarget {
    /// The detached IoU of the decoded box with its target, clamped at 0.
    #[default]
    Iou,
    /// A constant 1.
    Hard,
}

/// Augmentation settings. Stored for completeness; the toy trainer applies none of them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub hsv_h: f64,
    pub hsv_s: f64,
    pub hsv_v: f64,
    pub degrees: f64,
    pub translate: f64,
    pub scale: f64,
    pub shear: f64,
    pub perspective: f64,
    pub flipud: f64,
    pub fliplr: f64,
    pub mosaic: f64,
    pub mosaic_quantity: f64,
    pub mixup: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            hsv_h: 0.015,
            hsv_s: 0.7,
            hsv_v: 0.4,
            degrees: 0.0,
            translate: 0.5,
            scale: 0.5,
            shear: 0.0,
            perspective: 0.0,
            flipud: 0.0,
            fliplr: 0.5,
            mosaic: 1.0,
            mosaic_quantity: 4.0,
            mixup: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr0: f64,
    /// Final learning rate as a fraction of `lr0`.
    pub lrf: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub warmup_epochs: f64,
    pub warmup_momentum: f64,
    pub warmup_bias_lr: f64,
    pub box_gain: f64,
    pub cls_gain: f64,
    pub cls_pos_weight: f64,
    pub obj_gain: f64,
    pub obj_pos_weight: f64,
    /// Kept for reference; no stage of the loss reads it.
    pub iou_t: f64,
    pub anchor_t: f64,
    pub fl_gamma: f64,
    pub box_loss: BoxLoss,
    pub obj_target: ObjTarget,
    /// Objectness weight per pyramid level, finest first.
    pub level_balance: Vec<f64>,
    pub batch_size: usize,
    /// Rescale the whole gradient to at most this L2 norm before each step.
    pub clip_grad_norm: Option<f64>,
    pub freeze_backbone: bool,
    pub seed: u64,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 0.01,
            lrf: 0.2,
            momentum: 0.937,
            weight_decay: 0.0005,
            warmup_epochs: 3.0,
            warmup_momentum: 0.8,
            warmup_bias_lr: 0.1,
            box_gain: 0.05,
            cls_gain: 0.5,
            cls_pos_weight: 1.0,
            obj_gain: 1.0,
            obj_pos_weight: 1.0,
            iou_t: 0.2,
            anchor_t: 4.0,
            fl_gamma: 0.0,
            box_loss: BoxLoss::Ciou,
            obj_target: ObjTarget::Iou,
            level_balance: vec![4.0, 1.0, 0.4, 0.1],
            batch_size: 8,
            clip_grad_norm: None,
            freeze_backbone: false,
            seed: 0,
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, levels: usize) -> Result<()> {
        let gains = [self.box_gain, self.cls_gain, self.obj_gain, self.cls_pos_weight, self.obj_pos_weight];
        if gains.iter().any(|g| !(*g >= 0.0)) {
            return Err(Error::Config("loss gains and positive weights must be >= 0".into()));
        }
        if self.clip_grad_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Config("clip_grad_norm must be > 0".into()));
        }
        if self.fl_gamma != 0.0 {
            return Err(Error::Config(format!("focal gamma {} not supported; only plain BCE (0.0)", self.fl_gamma)));
        }
        if self.level_balance.len() != levels {
            return Err(Error::Config(format!("{} level balance weights for {levels} levels", self.level_balance.len())));
        }
        if self.anchor_t <= 1.0 || self.batch_size == 0 || self.lr0 < 0.0 || self.warmup_epochs < 0.0 {
            return Err(Error::Config("need anchor_t > 1, batch_size > 0, lr0 >= 0, warmup_epochs >= 0".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_defaults_round_trip() {
        let c = TrainConfig::default();
        assert_eq!((c.lr0, c.lrf, c.momentum, c.weight_decay), (0.01, 0.2, 0.937, 0.0005));
        assert_eq!((c.warmup_epochs, c.warmup_momentum, c.warmup_bias_lr), (3.0, 0.8, 0.1));
        assert_eq!((c.box_gain, c.cls_gain, c.obj_gain, c.iou_t, c.anchor_t, c.fl_gamma), (0.05, 0.5, 1.0, 0.2, 4.0, 0.0));
        let text = toml::to_string(&c).unwrap();
        assert_eq!(toml::from_str::<TrainConfig>(&text).unwrap(), c);
        assert_eq!(toml::from_str::<TrainConfig>("lr0 = 0.02").unwrap().momentum, 0.937);
        c.validate(4).unwrap();
        assert!(TrainConfig { box_gain: -1.0, ..c.clone() }.validate(4).is_err());
        assert!(c.validate(3).is_err());
    }
}
