//! Variant names, model configuration, assembly and cost accounting.

mod adapter;
mod build;
mod summary;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neck::{AnchorSet, HeadConfig, NeckConfig};
use crate::swin::SwinConfig;

pub use adapter::Adapter;
pub use build::{ExtraBlock, YotoR};
pub use summary::{ModelSummary, SummaryRow};

/// `{backbone}{head}{blocks}`, e.g. `TP5`: Swin-T backbone, P6 head, five blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantSpec {
    pub backbone: char,
    pub head: char,
    pub blocks: u8,
}

impl VariantSpec {
    pub const TP4: VariantSpec = VariantSpec { backbone: 'T', head: 'P', blocks: 4 };
    pub const TP5: VariantSpec = VariantSpec { backbone: 'T', head: 'P', blocks: 5 };
    pub const BP4: VariantSpec = VariantSpec { backbone: 'B', head: 'P', blocks: 4 };
    pub const BB4: VariantSpec = VariantSpec { backbone: 'B', head: 'B', blocks: 4 };

    /// The four variants with shipped configurations.
    pub const NAMED: [VariantSpec; 4] = [Self::TP4, Self::TP5, Self::BP4, Self::BB4];
}

impl FromStr for VariantSpec {
    type Err = Error;

    /// Accepts `TP5` or `YotoR TP5`. The head letter is a YoloR head (`P`, `W`, `E`, `D`)
    /// or `B`, the head redesigned around Swin-B embeddings.
    fn from_str(s: &str) -> Result<Self> {
        let name = s.trim();
        let name = name.strip_prefix("YotoR").map(str::trim_start).unwrap_or(name);
        let chars: Vec<char> = name.chars().collect();
        let err = |field: &'static str| Error::Variant { name: s.to_string(), field };
        if chars.len() != 3 {
            return Err(err("length"));
        }
        if !"TSBL".contains(chars[0]) {
            return Err(err("backbone"));
        }
        if !"PWEDB".contains(chars[1]) {
            return Err(err("head"));
        }
        let blocks = match chars[2] {
            '4' => 4,
            '5' => 5,
            _ => return Err(err("blocks")),
        };
        Ok(Self { backbone: chars[0], head: chars[1], blocks })
    }
}

impl fmt::Display for VariantSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}{}", self.backbone, self.head, self.blocks)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    #[default]
    Layer,
    Identity,
}

/// One backbone stage feeding the neck.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TapConfig {
    /// Zero-based backbone stage.
    pub stage: usize,
    /// Output channels of the 1×1 convolution; `None` means no convolution.
    #[serde(default)]
    pub channels: Option<usize>,
    #[serde(default)]
    pub norm: NormKind,
}

/// Source of the stride-64 level, fed by the deepest adapted tap.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ExtraConfig {
    /// Strided 3×3 conv followed by a backbone CSP block (the final CSPDarknet stage).
    B6 { channels: usize, depth: usize },
    /// Conv/max-pool downsampling block.
    DownC { channels: usize },
}

impl ExtraConfig {
    pub fn channels(&self) -> usize {
        match *self {
            ExtraConfig::B6 { channels, .. } | ExtraConfig::DownC { channels } => channels,
        }
    }
}

/// Complete architecture description; serialized as `model.cfg` (TOML).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub name: String,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    pub backbone: SwinConfig,
    pub taps: Vec<TapConfig>,
    pub extra: ExtraConfig,
    pub neck: NeckConfig,
    pub head: HeadConfig,
}

fn default_resolution() -> usize {
    1280
}

impl ModelConfig {
    /// Shipped full-scale configuration of a variant.
    pub fn for_variant(v: VariantSpec, nc: usize) -> Result<Self> {
        let backbone = SwinConfig::for_letter(v.backbone).ok_or(Error::Variant { name: v.to_string(), field: "backbone" })?;
        let dims = backbone.stage_dims();
        let name = v.to_string();
        match v.head {
            'P' => {
                let taps = [(1, 256), (2, 384), (3, 512)]
                    .iter()
                    .map(|&(stage, c)| TapConfig { stage, channels: Some(c), norm: NormKind::Layer })
                    .collect();
                let extra = if v.blocks == 5 {
                    ExtraConfig::B6 { channels: 640, depth: 3 }
                } else {
                    ExtraConfig::DownC { channels: 640 }
                };
                Ok(Self { name, resolution: 1280, backbone, taps, extra, neck: NeckConfig::p6(), head: HeadConfig::p6(nc) })
            }
            'B' if v.blocks == 4 => {
                let taps = (1..4).map(|stage| TapConfig { stage, channels: None, norm: NormKind::Layer }).collect();
                let top = dims[3];
                let neck = NeckConfig { channels: vec![dims[0], dims[1], dims[2], dims[2]], ..NeckConfig::p6() };
                let head = HeadConfig { channels: vec![dims[1], dims[2], top, top], ..HeadConfig::p6(nc) };
                Ok(Self { name, resolution: 1280, backbone, taps, extra: ExtraConfig::DownC { channels: top }, neck, head })
            }
            _ => Err(Error::Build {
                edge: format!("{name}: head"),
                msg: "no channel plan is shipped for this head; supply an explicit model config".into(),
            }),
        }
    }

    /// Same topology as [`ModelConfig::for_variant`] at toy widths (backbone C=8, or 12
    /// for `B`; window 2; depth 2 per stage) with `na = 2` anchors sized for 128-pixel images.
    pub fn toy(v: VariantSpec, nc: usize) -> Result<Self> {
        let full = Self::for_variant(v, nc)?;
        let embed = if v.backbone == 'B' { 12 } else { 8 };
        let backbone = SwinConfig { embed_dim: embed, depths: vec![2; 4], heads: vec![1, 2, 4, 8], window: 2, ..full.backbone.clone() };
        let dims = backbone.stage_dims();
        let anchors = AnchorSet::toy();
        let (implicit, placement) = (full.head.implicit, full.head.placement);
        let act = full.head.act;
        let cfg = if full.taps.iter().all(|t| t.channels.is_some()) {
            let taps = [(1, 8), (2, 12), (3, 16)]
                .iter()
                .map(|&(stage, c)| TapConfig { stage, channels: Some(c), norm: NormKind::Layer })
                .collect();
            let extra = match full.extra {
                ExtraConfig::B6 { .. } => ExtraConfig::B6 { channels: 20, depth: 1 },
                ExtraConfig::DownC { .. } => ExtraConfig::DownC { channels: 20 },
            };
            Self {
                name: format!("{v}-toy"),
                resolution: 128,
                backbone,
                taps,
                extra,
                neck: NeckConfig { channels: vec![8, 12, 16, 20], csp_depth: 1, ..NeckConfig::p6() },
                head: HeadConfig { channels: vec![16, 24, 32, 40], nc, anchors, implicit, placement, act },
            }
        } else {
            let top = dims[3];
            Self {
                name: format!("{v}-toy"),
                resolution: 128,
                backbone,
                taps: full.taps.clone(),
                extra: ExtraConfig::DownC { channels: top },
                neck: NeckConfig { channels: vec![dims[0], dims[1], dims[2], dims[2]], csp_depth: 1, ..NeckConfig::p6() },
                head: HeadConfig { channels: vec![dims[1], dims[2], top, top], nc, anchors, implicit, placement, act },
            }
        };
        Ok(cfg)
    }

    /// Every channel width multiplied by `k`: backbone embedding (and so every
    /// stage), adapters, stride-64 block, neck and head. Head counts are kept.
    pub fn widened(&self, k: usize) -> Self {
        let mut c = self.clone();
        c.name = format!("{}-x{k}", self.name);
        c.backbone.embed_dim *= k;
        for t in &mut c.taps {
            t.channels = t.channels.map(|v| v * k);
        }
        c.extra = match c.extra {
            ExtraConfig::B6 { channels, depth } => ExtraConfig::B6 { channels: channels * k, depth },
            ExtraConfig::DownC { channels } => ExtraConfig::DownC { channels: channels * k },
        };
        c.neck.channels.iter_mut().for_each(|v| *v *= k);
        c.head.channels.iter_mut().for_each(|v| *v *= k);
        c
    }

    /// A named variant (`TP5`), optionally suffixed `-toy`.
    pub fn named(name: &str, nc: usize) -> Result<Self> {
        match name.strip_suffix("-toy") {
            Some(base) => Self::toy(base.parse()?, nc),
            None => Self::for_variant(name.parse()?, nc),
        }
    }

    /// Number of neck levels (taps plus the stride-64 level).
    pub fn levels(&self) -> usize {
        self.taps.len() + 1
    }

    /// Channels entering the neck at each level.
    pub fn level_channels(&self) -> Vec<usize> {
        let mut c: Vec<usize> = self
            .taps
            .iter()
            .map(|t| t.channels.unwrap_or_else(|| self.backbone.stage_dim(t.stage)))
            .collect();
        c.push(self.extra.channels());
        c
    }

    pub fn level_strides(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.taps.iter().map(|t| self.backbone.stage_stride(t.stage)).collect();
        if let Some(&last) = s.last() {
            s.push(last * 2);
        }
        s
    }

    /// Checks every inter-module contract; errors name the offending edge.
    pub fn validate(&self) -> Result<()> {
        let edge = |e: &str, m: String| Err(Error::Build { edge: e.to_string(), msg: m });
        self.backbone.validate().or_else(|e| edge("backbone", e.to_string()))?;
        if self.taps.is_empty() {
            return edge("backbone->adapter", "no taps".into());
        }
        for (i, t) in self.taps.iter().enumerate() {
            if t.stage >= self.backbone.num_stages() {
                return edge(&format!("backbone->adapter.{i}"), format!("stage {} of {}", t.stage, self.backbone.num_stages()));
            }
            if i > 0 && t.stage != self.taps[i - 1].stage + 1 {
                return edge(&format!("backbone->adapter.{i}"), "taps must be consecutive stages".into());
            }
            if t.channels == Some(0) {
                return edge(&format!("adapter.{i}"), "zero output channels".into());
            }
        }
        let levels = self.levels();
        if self.neck.channels.len() != levels {
            return edge("adapter->neck", format!("{levels} levels, neck plans {}", self.neck.channels.len()));
        }
        if self.head.channels.len() != levels {
            return edge("neck->head", format!("{levels} levels, head plans {}", self.head.channels.len()));
        }
        self.head.anchors.validate().or_else(|e| edge("head.anchors", e.to_string()))?;
        if self.head.anchors.strides != self.level_strides() {
            return edge("head.anchors", format!("strides {:?} but levels have {:?}", self.head.anchors.strides, self.level_strides()));
        }
        let top = *self.level_strides().last().expect("non-empty");
        if self.resolution == 0 || !self.resolution.is_multiple_of(top) {
            return edge("input", format!("resolution {} must be a positive multiple of {top}", self.resolution));
        }
        if self.neck.channels.contains(&0) || self.head.channels.contains(&0) || self.extra.channels() == 0 {
            return edge("neck", "zero channels".into());
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?).map_err(|e| Error::io(path, e))
    }
}

impl AnchorSet {
    /// Two anchors per level sized for 128-pixel toy images.
    pub fn toy() -> Self {
        Self {
            anchors: vec![
                vec![[12., 12.], [16., 24.]],
                vec![[24., 16.], [32., 32.]],
                vec![[48., 40.], [40., 56.]],
                vec![[72., 64.], [96., 96.]],
            ],
            strides: vec![8, 16, 32, 64],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_names() {
        assert_eq!("TP5".parse::<VariantSpec>().unwrap(), VariantSpec::TP5);
        assert_eq!("YotoR BP4".parse::<VariantSpec>().unwrap(), VariantSpec::BP4);
        match "XQ9".parse::<VariantSpec>() {
            Err(Error::Variant { field, .. }) => assert_eq!(field, "backbone"),
            other => panic!("{other:?}"),
        }
        assert!(matches!("TQ4".parse::<VariantSpec>(), Err(Error::Variant { field: "head", .. })));
        assert!(matches!("TP6".parse::<VariantSpec>(), Err(Error::Variant { field: "blocks", .. })));
        assert_eq!(VariantSpec::BB4.to_string(), "BB4");
    }

    #[test]
    fn shipped_configs_validate_and_round_trip() {
        for v in VariantSpec::NAMED {
            for cfg in [ModelConfig::for_variant(v, 80).unwrap(), ModelConfig::toy(v, 1).unwrap()] {
                cfg.validate().unwrap();
                let text = cfg.to_toml_string().unwrap();
                assert_eq!(ModelConfig::from_toml_str(&text).unwrap(), cfg);
                assert_eq!(cfg.level_strides(), vec![8, 16, 32, 64]);
            }
        }
        assert!(ModelConfig::for_variant("TW4".parse().unwrap(), 80).is_err());
    }

    #[test]
    fn validation_names_the_edge() {
        let mut cfg = ModelConfig::toy(VariantSpec::TP5, 1).unwrap();
        cfg.neck.channels.pop();
        match cfg.validate() {
            Err(Error::Build { edge, .. }) => assert_eq!(edge, "adapter->neck"),
            other => panic!("{other:?}"),
        }
        let mut cfg = ModelConfig::toy(VariantSpec::TP5, 1).unwrap();
        cfg.resolution = 100;
        assert!(matches!(cfg.validate(), Err(Error::Build { .. })));
    }
}
