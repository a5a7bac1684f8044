//! PAN neck and anchor-based detection heads.

mod csp;
mod head;
mod pan;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Activation;

pub use csp::{Bottleneck, BottleneckCsp2, BottleneckCspF, DownC, SppCsp};
pub use head::{DetectHead, HeadLevel, ImplicitKind, ImplicitParam};
pub use pan::{DataflowNode, PanNeck};

/// Prior boxes `(w, h)` in input pixels, per pyramid level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorSet {
    pub anchors: Vec<Vec<[f64; 2]>>,
    pub strides: Vec<usize>,
}

impl AnchorSet {
    /// The published P6 anchors for strides 8/16/32/64.
    pub fn p6() -> Self {
        Self {
            anchors: vec![
                vec![[19., 27.], [44., 40.], [38., 94.]],
                vec![[96., 68.], [86., 152.], [180., 137.]],
                vec![[140., 301.], [303., 264.], [238., 542.]],
                vec![[436., 615.], [739., 380.], [925., 792.]],
            ],
            strides: vec![8, 16, 32, 64],
        }
    }

    pub fn levels(&self) -> usize {
        self.anchors.len()
    }

    /// Anchors per level.
    pub fn na(&self) -> usize {
        self.anchors.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.anchors.is_empty() || self.anchors.len() != self.strides.len() {
            return Err(Error::Config(format!(
                "anchors: {} levels vs {} strides",
                self.anchors.len(),
                self.strides.len()
            )));
        }
        let na = self.na();
        for (l, level) in self.anchors.iter().enumerate() {
            if level.len() != na || na == 0 {
                return Err(Error::Config(format!("anchors: level {l} has {} anchors, expected {na}", level.len())));
            }
            if level.iter().any(|a| !(a[0] > 0.0 && a[1] > 0.0)) {
                return Err(Error::Config(format!("anchors: level {l} has a non-positive extent")));
            }
        }
        if self.strides.contains(&0) {
            return Err(Error::Config("anchors: zero stride".into()));
        }
        Ok(())
    }
}

/// Channel plan of the PAN neck. `channels[l]` is the width of fused level `l`
/// (shallowest first); the deepest input first passes the SPP block.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeckConfig {
    pub channels: Vec<usize>,
    #[serde(default = "default_csp_depth")]
    pub csp_depth: usize,
    #[serde(default = "default_spp")]
    pub spp_kernels: Vec<usize>,
    #[serde(default)]
    pub act: Activation,
}

fn default_csp_depth() -> usize {
    3
}

fn default_spp() -> Vec<usize> {
    vec![5, 9, 13]
}

impl NeckConfig {
    pub fn p6() -> Self {
        Self { channels: vec![128, 192, 256, 320], csp_depth: 3, spp_kernels: default_spp(), act: Activation::Silu }
    }
}

/// Where an implicit parameter is applied in each head level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Attachment {
    /// The input of the final 1×1 convolution.
    PreOutput,
    /// The raw prediction produced by the final 1×1 convolution.
    PostOutput,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImplicitPlacement {
    pub add: Attachment,
    pub mul: Attachment,
}

impl Default for ImplicitPlacement {
    fn default() -> Self {
        Self { add: Attachment::PreOutput, mul: Attachment::PostOutput }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    /// Width of the 3×3 convolution opening each level.
    pub channels: Vec<usize>,
    pub nc: usize,
    pub anchors: AnchorSet,
    /// `false` builds the head without implicit parameters.
    #[serde(default = "default_implicit")]
    pub implicit: bool,
    #[serde(default)]
    pub placement: ImplicitPlacement,
    #[serde(default)]
    pub act: Activation,
}

fn default_implicit() -> bool {
    true
}

impl HeadConfig {
    pub fn p6(nc: usize) -> Self {
        Self { channels: vec![256, 384, 512, 640], nc, anchors: AnchorSet::p6(), implicit: true, placement: ImplicitPlacement::default(), act: Activation::Silu }
    }

    /// Output channels of every level, `na·(5+nc)`.
    pub fn outputs(&self) -> usize {
        self.anchors.na() * (5 + self.nc)
    }

    pub fn implicit_placement(&self) -> Option<ImplicitPlacement> {
        self.implicit.then_some(self.placement)
    }
}
