use super::{PatchEmbedConfig, SwinStageConfig, TokenGrid, WindowAttention};
use crate::error::{Error, Result};
use crate::impl_module;
use crate::nn::{LayerNorm, Linear};
use crate::tensor::init::Initializer;
use crate::tensor::{Element, Tensor};

/// Non-overlapping `p×p` patches, linearly embedded (as a stride-`p` convolution) and normalized.
#[derive(Clone, Debug)]
pub struct PatchEmbed<T: Element> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub norm: LayerNorm<T>,
    pub patch: usize,
}

impl_module!(PatchEmbed { weight, bias, norm });

impl<T: Element> PatchEmbed<T> {
    pub fn new(init: &mut Initializer, cfg: PatchEmbedConfig) -> Self {
        let p = cfg.patch_size;
        let fan_in = cfg.in_channels * p * p;
        Self {
            weight: init.fan_in_uniform(&[cfg.embed_dim, cfg.in_channels, p, p], fan_in),
            bias: init.fan_in_uniform(&[cfg.embed_dim], fan_in),
            norm: LayerNorm::new(init, cfg.embed_dim),
            patch: p,
        }
    }

    pub fn param_count(cfg: PatchEmbedConfig) -> usize {
        let c = cfg.embed_dim;
        c * cfg.in_channels * cfg.patch_size * cfg.patch_size + c + 2 * c
    }

    /// `[B, C_in, H, W]` image → token grid; right/bottom zero padding to whole patches.
    pub fn forward(&self, image: &Tensor<T>) -> Result<TokenGrid<T>> {
        let p = self.patch;
        if image.rank() != 4 || image.dim(1) != self.weight.dim(1) {
            return Err(Error::dim("patch_embed", format!("image {:?} for {} input channels", image.shape(), self.weight.dim(1))));
        }
        let (h, w) = (image.dim(2), image.dim(3));
        if h < p || w < p {
            return Err(Error::dim("patch_embed", format!("{h}x{w} image smaller than patch {p}")));
        }
        let pad = (h.div_ceil(p) * p - h, w.div_ceil(p) * p - w);
        let x = if pad != (0, 0) {
            image.pad(&[(0, 0), (0, 0), (0, pad.0), (0, pad.1)])?
        } else {
            image.clone()
        };
        let map = x.conv2d(&self.weight, Some(&self.bias), p, 0)?;
        let tokens = self.norm.forward(&map.permute(&[0, 2, 3, 1])?)?;
        Ok(TokenGrid { tokens, pad })
    }
}

/// Concatenates each 2×2 token group (4C), normalizes and reduces to 2C.
#[derive(Clone, Debug)]
pub struct PatchMerging<T: Element> {
    pub norm: LayerNorm<T>,
    pub reduction: Linear<T>,
}

impl_module!(PatchMerging { norm, reduction });

impl<T: Element> PatchMerging<T> {
    pub fn new(init: &mut Initializer, dim: usize) -> Self {
        Self {
            norm: LayerNorm::new(init, 4 * dim),
            reduction: Linear::new(init, 4 * dim, 2 * dim, false),
        }
    }

    pub fn param_count(dim: usize) -> usize {
        8 * dim + 8 * dim * dim
    }

    /// Gathers `[B,H,W,C]` into `[B,H/2,W/2,4C]` with the group order
    /// (row 0, col 0), (row 1, col 0), (row 0, col 1), (row 1, col 1).
    pub fn gather(x: &Tensor<T>) -> Result<Tensor<T>> {
        let (b, h, w, c) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        let x = if h % 2 == 1 || w % 2 == 1 {
            x.pad(&[(0, 0), (0, h % 2), (0, w % 2), (0, 0)])?
        } else {
            x.clone()
        };
        let (hp, wp) = (x.dim(1), x.dim(2));
        let (ho, wo) = (hp / 2, wp / 2);
        let mut map = Vec::with_capacity(b * ho * wo * 4 * c);
        for bi in 0..b {
            for i in 0..ho {
                for j in 0..wo {
                    for (di, dj) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                        let base = ((bi * hp + 2 * i + di) * wp + 2 * j + dj) * c;
                        map.extend(base..base + c);
                    }
                }
            }
        }
        x.index_map(vec![b, ho, wo, 4 * c], map)
    }

    pub fn forward(&self, grid: &TokenGrid<T>) -> Result<TokenGrid<T>> {
        let pad = (grid.height() % 2, grid.width() % 2);
        let x = Self::gather(&grid.tokens)?;
        let tokens = self.reduction.forward(&self.norm.forward(&x)?)?;
        Ok(TokenGrid { tokens, pad })
    }
}

/// Pre-norm transformer block over (shifted) windows.
#[derive(Clone, Debug)]
pub struct SwinBlock<T: Element> {
    pub norm1: LayerNorm<T>,
    pub attn: WindowAttention<T>,
    pub norm2: LayerNorm<T>,
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
    pub shift: usize,
}

impl_module!(SwinBlock { norm1, attn, norm2, fc1, fc2 });

impl<T: Element> SwinBlock<T> {
    pub fn new(init: &mut Initializer, dim: usize, heads: usize, window: usize, shift: usize, mlp_ratio: usize) -> Self {
        Self {
            norm1: LayerNorm::new(init, dim),
            attn: WindowAttention::new(init, dim, heads, window),
            norm2: LayerNorm::new(init, dim),
            fc1: Linear::new(init, dim, mlp_ratio * dim, true),
            fc2: Linear::new(init, mlp_ratio * dim, dim, true),
            shift,
        }
    }

    pub fn param_count(dim: usize, heads: usize, window: usize, mlp_ratio: usize) -> usize {
        let hidden = mlp_ratio * dim;
        4 * dim
            + WindowAttention::<T>::param_count(dim, heads, window)
            + Linear::<T>::param_count(dim, hidden, true)
            + Linear::<T>::param_count(hidden, dim, true)
    }

    /// `[B,H,W,C]` → `[B,H,W,C]`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let a = self.attn.forward_grid(&self.norm1.forward(x)?, self.shift)?;
        let x = x.add(&a)?;
        let hidden = self.fc1.forward(&self.norm2.forward(&x)?)?.gelu();
        x.add(&self.fc2.forward(&hidden)?)
    }
}

/// Optional patch merging followed by `depth` blocks with alternating shifts.
#[derive(Clone, Debug)]
pub struct SwinStage<T: Element> {
    pub merge: Option<PatchMerging<T>>,
    pub blocks: Vec<SwinBlock<T>>,
}

impl_module!(SwinStage { merge, blocks });

impl<T: Element> SwinStage<T> {
    pub fn new(init: &mut Initializer, cfg: SwinStageConfig, mlp_ratio: usize, merge: bool) -> Self {
        Self {
            merge: merge.then(|| PatchMerging::new(init, cfg.dim / 2)),
            blocks: (0..cfg.depth)
                .map(|i| SwinBlock::new(init, cfg.dim, cfg.heads, cfg.window, cfg.shift(i), mlp_ratio))
                .collect(),
        }
    }

    pub fn forward(&self, grid: &TokenGrid<T>) -> Result<TokenGrid<T>> {
        let mut g = match &self.merge {
            Some(m) => m.forward(grid)?,
            None => grid.clone(),
        };
        for b in &self.blocks {
            g.tokens = b.forward(&g.tokens)?;
        }
        Ok(g)
    }
}
