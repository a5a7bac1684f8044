use super::{NormKind, TapConfig};
use crate::error::Result;
use crate::impl_module;
use crate::nn::{Activation, ConvUnit, Cost, LayerNorm};
use crate::swin::TokenGrid;
use crate::tensor::init::Initializer;
use crate::tensor::{Element, Tensor};

/// Token grid → feature map: normalize over channels, permute to `[B, C, H, W]`,
/// then an optional linear 1×1 convolution to the neck's width.
#[derive(Clone, Debug)]
pub struct Adapter<T: Element> {
    pub norm: Option<LayerNorm<T>>,
    pub conv: Option<ConvUnit<T>>,
}

impl_module!(Adapter { norm, conv });

impl<T: Element> Adapter<T> {
    pub fn new(init: &mut Initializer, c_in: usize, tap: &TapConfig) -> Self {
        Self {
            norm: (tap.norm == NormKind::Layer).then(|| LayerNorm::new(init, c_in)),
            conv: tap.channels.map(|c| ConvUnit::new(init, c_in, c, 1, 1, Activation::Identity)),
        }
    }

    pub fn forward(&self, grid: &TokenGrid<T>) -> Result<Tensor<T>> {
        let tokens = match &self.norm {
            Some(n) => n.forward(&grid.tokens)?,
            None => grid.tokens.clone(),
        };
        let map = tokens.permute(&[0, 3, 1, 2])?;
        match &self.conv {
            Some(c) => c.forward(&map),
            None => Ok(map),
        }
    }

    pub fn cost(c_in: usize, tap: &TapConfig, h: usize, w: usize) -> Cost {
        let norm = if tap.norm == NormKind::Layer { Cost::new(2 * c_in, 0) } else { Cost::default() };
        norm + tap.channels.map_or(Cost::default(), |c| ConvUnit::<f32>::cost(c_in, c, 1, 1, h, w).0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_adapter_is_a_permutation() {
        let mut init = Initializer::new(0);
        let tap = TapConfig { stage: 0, channels: Some(3), norm: NormKind::Identity };
        let mut a = Adapter::<f32>::new(&mut init, 3, &tap);
        let conv = a.conv.as_mut().unwrap();
        conv.weight = Tensor::eye(3).reshape(&[3, 3, 1, 1]).unwrap();
        conv.bias = Tensor::zeros(&[3]);
        let grid = TokenGrid::new(init.normal::<f32>(&[2, 4, 5, 3], 0.0, 1.0)).unwrap();
        let y = a.forward(&grid).unwrap();
        assert_eq!(y.to_vec(), grid.to_feature_map().unwrap().to_vec());
    }

    #[test]
    fn tap_shape() {
        let mut init = Initializer::new(0);
        let tap = TapConfig { stage: 2, channels: Some(7), norm: NormKind::Layer };
        let a = Adapter::<f32>::new(&mut init, 384, &tap);
        let y = a.forward(&TokenGrid::new(Tensor::zeros(&[1, 14, 14, 384])).unwrap()).unwrap();
        assert_eq!(y.shape(), &[1, 7, 14, 14]);
    }
}
