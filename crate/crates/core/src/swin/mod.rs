//! Swin Transformer backbone.

mod attention;
mod backbone;
mod block;
pub mod window;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub use attention::WindowAttention;
pub use backbone::SwinBackbone;
pub use block::{PatchEmbed, PatchMerging, SwinBlock, SwinStage};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchEmbedConfig {
    pub patch_size: usize,
    pub in_channels: usize,
    pub embed_dim: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwinStageConfig {
    pub depth: usize,
    pub dim: usize,
    pub heads: usize,
    pub window: usize,
}

impl SwinStageConfig {
    /// Shift of block `i`: unshifted and half-window-shifted blocks alternate.
    pub fn shift(&self, block: usize) -> usize {
        if block % 2 == 1 {
            self.window / 2
        } else {
            0
        }
    }
}

/// Full backbone description. Stage `s` has `embed_dim * 2^s` channels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwinConfig {
    #[serde(default = "default_patch")]
    pub patch_size: usize,
    #[serde(default = "default_in_channels")]
    pub in_channels: usize,
    pub embed_dim: usize,
    pub depths: Vec<usize>,
    pub heads: Vec<usize>,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_mlp_ratio")]
    pub mlp_ratio: usize,
}

fn default_patch() -> usize {
    4
}
fn default_in_channels() -> usize {
    3
}
fn default_window() -> usize {
    7
}
fn default_mlp_ratio() -> usize {
    4
}

impl SwinConfig {
    fn standard(embed_dim: usize, depths: [usize; 4], heads: [usize; 4]) -> Self {
        Self {
            patch_size: 4,
            in_channels: 3,
            embed_dim,
            depths: depths.to_vec(),
            heads: heads.to_vec(),
            window: 7,
            mlp_ratio: 4,
        }
    }

    pub fn tiny() -> Self {
        Self::standard(96, [2, 2, 6, 2], [3, 6, 12, 24])
    }

    pub fn small() -> Self {
        Self::standard(96, [2, 2, 18, 2], [3, 6, 12, 24])
    }

    pub fn base() -> Self {
        Self::standard(128, [2, 2, 18, 2], [4, 8, 16, 32])
    }

    pub fn large() -> Self {
        Self::standard(192, [2, 2, 18, 2], [6, 12, 24, 48])
    }

    /// Scale by backbone letter `T`, `S`, `B` or `L`.
    pub fn for_letter(letter: char) -> Option<Self> {
        match letter {
            'T' => Some(Self::tiny()),
            'S' => Some(Self::small()),
            'B' => Some(Self::base()),
            'L' => Some(Self::large()),
            _ => None,
        }
    }

    pub fn patch_embed(&self) -> PatchEmbedConfig {
        PatchEmbedConfig {
            patch_size: self.patch_size,
            in_channels: self.in_channels,
            embed_dim: self.embed_dim,
        }
    }

    pub fn num_stages(&self) -> usize {
        self.depths.len()
    }

    pub fn stage_dim(&self, s: usize) -> usize {
        self.embed_dim << s
    }

    pub fn stage_dims(&self) -> Vec<usize> {
        (0..self.num_stages()).map(|s| self.stage_dim(s)).collect()
    }

    /// Pixel stride of stage `s` output.
    pub fn stage_stride(&self, s: usize) -> usize {
        self.patch_size << s
    }

    pub fn stages(&self) -> Vec<SwinStageConfig> {
        (0..self.num_stages())
            .map(|s| SwinStageConfig {
                depth: self.depths[s],
                dim: self.stage_dim(s),
                heads: self.heads[s],
                window: self.window,
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("swin: {m}")));
        if self.depths.is_empty() || self.depths.len() != self.heads.len() {
            return bad(format!("{} depths vs {} head counts", self.depths.len(), self.heads.len()));
        }
        if self.patch_size == 0 || self.window == 0 || self.embed_dim == 0 || self.mlp_ratio == 0 {
            return bad("zero-sized patch, window, embedding or mlp ratio".into());
        }
        for (s, st) in self.stages().iter().enumerate() {
            if st.heads == 0 || st.dim % st.heads != 0 {
                return bad(format!("stage {} dim {} not divisible by {} heads", s + 1, st.dim, st.heads));
            }
            if st.depth == 0 || st.depth % 2 != 0 {
                return bad(format!("stage {} depth {} must be even and positive", s + 1, st.depth));
            }
        }
        Ok(())
    }
}

/// Tokens laid out as `[B, Hg, Wg, C]`.
#[derive(Clone, Debug)]
pub struct TokenGrid<T: Element> {
    pub tokens: Tensor<T>,
    /// Zero padding `(bottom, right)` added to the source before this grid was formed.
    pub pad: (usize, usize),
}

impl<T: Element> TokenGrid<T> {
    pub fn new(tokens: Tensor<T>) -> Result<Self> {
        if tokens.rank() != 4 {
            return Err(Error::dim("token_grid", format!("expected [B,H,W,C], got {:?}", tokens.shape())));
        }
        Ok(Self { tokens, pad: (0, 0) })
    }

    pub fn batch(&self) -> usize {
        self.tokens.dim(0)
    }

    pub fn height(&self) -> usize {
        self.tokens.dim(1)
    }

    pub fn width(&self) -> usize {
        self.tokens.dim(2)
    }

    pub fn channels(&self) -> usize {
        self.tokens.dim(3)
    }

    /// `[B, C, Hg, Wg]` feature map.
    pub fn to_feature_map(&self) -> Result<Tensor<T>> {
        self.tokens.permute(&[0, 3, 1, 2])
    }

    pub fn from_feature_map(map: &Tensor<T>) -> Result<Self> {
        Self::new(map.permute(&[0, 2, 3, 1])?)
    }
}

/// Outputs of every backbone stage, shallowest first.
#[derive(Clone, Debug)]
pub struct FeaturePyramid<T: Element> {
    pub levels: Vec<TokenGrid<T>>,
    pub strides: Vec<usize>,
}
