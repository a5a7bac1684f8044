use super::{FeaturePyramid, PatchEmbed, PatchMerging, SwinBlock, SwinConfig, SwinStage};
use crate::error::Result;
use crate::impl_module;
use crate::tensor::init::Initializer;
use crate::tensor::{Element, Tensor};

#[derive(Clone, Debug)]
pub struct SwinBackbone<T: Element> {
    pub patch_embed: PatchEmbed<T>,
    pub stages: Vec<SwinStage<T>>,
    pub config: SwinConfig,
}

impl_module!(SwinBackbone { patch_embed, stages });

impl<T: Element> SwinBackbone<T> {
    pub fn new(init: &mut Initializer, config: &SwinConfig) -> Result<Self> {
        config.validate()?;
        let patch_embed = PatchEmbed::new(init, config.patch_embed());
        let stages = config
            .stages()
            .into_iter()
            .enumerate()
            .map(|(s, st)| SwinStage::new(init, st, config.mlp_ratio, s > 0))
            .collect();
        Ok(Self { patch_embed, stages, config: config.clone() })
    }

    /// Every stage output, strides `patch·2^s`.
    pub fn forward(&self, image: &Tensor<T>) -> Result<FeaturePyramid<T>> {
        let mut g = self.patch_embed.forward(image)?;
        let mut levels = Vec::with_capacity(self.stages.len());
        for st in &self.stages {
            g = st.forward(&g)?;
            levels.push(g.clone());
        }
        let strides = (0..levels.len()).map(|s| self.config.stage_stride(s)).collect();
        Ok(FeaturePyramid { levels, strides })
    }
}

impl SwinConfig {
    /// Parameter count derived from the configuration alone.
    pub fn param_count(&self) -> usize {
        let mut n = PatchEmbed::<f32>::param_count(self.patch_embed());
        for (s, st) in self.stages().iter().enumerate() {
            if s > 0 {
                n += PatchMerging::<f32>::param_count(st.dim / 2);
            }
            n += st.depth * SwinBlock::<f32>::param_count(st.dim, st.heads, st.window, self.mlp_ratio);
        }
        n
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Module;

    fn toy() -> SwinConfig {
        SwinConfig { patch_size: 4, in_channels: 3, embed_dim: 8, depths: vec![2; 4], heads: vec![1, 2, 4, 8], window: 2, mlp_ratio: 4 }
    }

    #[test]
    fn toy_pyramid_shapes() {
        let mut init = Initializer::new(0);
        let bb = SwinBackbone::<f32>::new(&mut init, &toy()).unwrap();
        let img = init.normal::<f32>(&[1, 3, 64, 64], 0.0, 1.0);
        let p = bb.forward(&img).unwrap();
        let shapes: Vec<_> = p.levels.iter().map(|g| g.tokens.shape().to_vec()).collect();
        assert_eq!(shapes, vec![vec![1, 16, 16, 8], vec![1, 8, 8, 16], vec![1, 4, 4, 32], vec![1, 2, 2, 64]]);
        assert_eq!(p.strides, vec![4, 8, 16, 32]);
        assert_eq!(bb.param_count(), toy().param_count());
    }

    #[test]
    fn stride_law_on_odd_inputs() {
        let mut init = Initializer::new(1);
        let bb = SwinBackbone::<f32>::new(&mut init, &toy()).unwrap();
        for (h, w) in [(37, 50), (64, 33)] {
            let p = bb.forward(&Tensor::zeros(&[1, 3, h, w])).unwrap();
            for (s, g) in p.levels.iter().enumerate() {
                let f = 1usize << (s + 2);
                assert_eq!((g.height(), g.width()), (h.div_ceil(f), w.div_ceil(f)));
            }
        }
    }
}
