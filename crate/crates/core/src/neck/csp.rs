//! Cross-stage-partial convolution blocks.

use crate::error::{Error, Result};
use crate::impl_module;
use crate::nn::{Activation, ConvUnit, Cost};
use crate::tensor::init::Initializer;
use crate::tensor::{Element, Tensor};

fn check_channels<T: Element>(op: &'static str, x: &Tensor<T>, c: usize) -> Result<()> {
    if x.rank() != 4 || x.dim(1) != c {
        return Err(Error::dim(op, format!("expected {c} channels, got {:?}", x.shape())));
    }
    Ok(())
}

fn conv<T: Element>(init: &mut Initializer, c_in: usize, c_out: usize, k: usize, act: Activation) -> ConvUnit<T> {
    ConvUnit::new(init, c_in, c_out, k, 1, act)
}

fn conv_cost(c_in: usize, c_out: usize, k: usize, h: usize, w: usize) -> Cost {
    ConvUnit::<f32>::cost(c_in, c_out, k, 1, h, w).0
}

/// 1×1 then 3×3 convolution, with a residual when `shortcut`.
#[derive(Clone, Debug)]
pub struct Bottleneck<T: Element> {
    pub cv1: ConvUnit<T>,
    pub cv2: ConvUnit<T>,
    pub shortcut: bool,
}

impl_module!(Bottleneck { cv1, cv2 });

impl<T: Element> Bottleneck<T> {
    pub fn new(init: &mut Initializer, c: usize, shortcut: bool, act: Activation) -> Self {
        Self { cv1: conv(init, c, c, 1, act), cv2: conv(init, c, c, 3, act), shortcut }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.cv2.forward(&self.cv1.forward(x)?)?;
        if self.shortcut {
            x.add(&y)
        } else {
            Ok(y)
        }
    }

    pub fn cost(c: usize, h: usize, w: usize) -> Cost {
        conv_cost(c, c, 1, h, w) + conv_cost(c, c, 3, h, w)
    }
}

fn run_chain<T: Element>(m: &[Bottleneck<T>], x: Tensor<T>) -> Result<Tensor<T>> {
    m.iter().try_fold(x, |acc, b| b.forward(&acc))
}

/// Backbone CSP block: hidden width `c_out/2`, residual bottlenecks on one branch,
/// a plain projection of the input on the other.
#[derive(Clone, Debug)]
pub struct BottleneckCspF<T: Element> {
    pub cv1: ConvUnit<T>,
    pub cv2: ConvUnit<T>,
    pub m: Vec<Bottleneck<T>>,
    pub cv4: ConvUnit<T>,
    pub act: Activation,
}

impl_module!(BottleneckCspF { cv1, cv2, m, cv4 });

impl<T: Element> BottleneckCspF<T> {
    pub fn new(init: &mut Initializer, c_in: usize, c_out: usize, n: usize, act: Activation) -> Self {
        let h = c_out / 2;
        Self {
            cv1: conv(init, c_in, h, 1, act),
            cv2: conv(init, c_in, h, 1, Activation::Identity),
            m: (0..n).map(|_| Bottleneck::new(init, h, true, act)).collect(),
            cv4: conv(init, 2 * h, c_out, 1, act),
            act,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        check_channels("bottleneck_csp_f", x, self.cv1.in_channels())?;
        let y1 = run_chain(&self.m, self.cv1.forward(x)?)?;
        let y2 = self.cv2.forward(x)?;
        let cat = self.act.apply(&Tensor::concat(&[y1, y2], 1)?);
        self.cv4.forward(&cat)
    }

    pub fn cost(c_in: usize, c_out: usize, n: usize, h: usize, w: usize) -> Cost {
        let c = c_out / 2;
        conv_cost(c_in, c, 1, h, w) + conv_cost(c_in, c, 1, h, w) + conv_cost(2 * c, c_out, 1, h, w) + (0..n).map(|_| Bottleneck::<T>::cost(c, h, w)).sum()
    }
}

/// Neck CSP block: hidden width `c_out`, plain (non-residual) bottlenecks, and the
/// second branch projects the first branch's stem.
#[derive(Clone, Debug)]
pub struct BottleneckCsp2<T: Element> {
    pub cv1: ConvUnit<T>,
    pub m: Vec<Bottleneck<T>>,
    pub cv2: ConvUnit<T>,
    pub cv3: ConvUnit<T>,
    pub act: Activation,
}

impl_module!(BottleneckCsp2 { cv1, m, cv2, cv3 });

impl<T: Element> BottleneckCsp2<T> {
    pub fn new(init: &mut Initializer, c_in: usize, c_out: usize, n: usize, act: Activation) -> Self {
        Self {
            cv1: conv(init, c_in, c_out, 1, act),
            m: (0..n).map(|_| Bottleneck::new(init, c_out, false, act)).collect(),
            cv2: conv(init, c_out, c_out, 1, Activation::Identity),
            cv3: conv(init, 2 * c_out, c_out, 1, act),
            act,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        check_channels("bottleneck_csp2", x, self.cv1.in_channels())?;
        let x1 = self.cv1.forward(x)?;
        let y1 = run_chain(&self.m, x1.clone())?;
        let y2 = self.cv2.forward(&x1)?;
        let cat = self.act.apply(&Tensor::concat(&[y1, y2], 1)?);
        self.cv3.forward(&cat)
    }

    pub fn cost(c_in: usize, c_out: usize, n: usize, h: usize, w: usize) -> Cost {
        let c = c_out;
        conv_cost(c_in, c, 1, h, w) + conv_cost(c, c, 1, h, w) + conv_cost(2 * c, c_out, 1, h, w) + (0..n).map(|_| Bottleneck::<T>::cost(c, h, w)).sum()
    }
}

/// Spatial pyramid pooling (stride-1 max pools of several sizes) inside a CSP split.
#[derive(Clone, Debug)]
pub struct SppCsp<T: Element> {
    pub cv1: ConvUnit<T>,
    pub cv2: ConvUnit<T>,
    pub cv3: ConvUnit<T>,
    pub cv4: ConvUnit<T>,
    pub cv5: ConvUnit<T>,
    pub cv6: ConvUnit<T>,
    pub cv7: ConvUnit<T>,
    pub kernels: Vec<usize>,
    pub act: Activation,
}

impl_module!(SppCsp { cv1, cv2, cv3, cv4, cv5, cv6, cv7 });

impl<T: Element> SppCsp<T> {
    pub fn new(init: &mut Initializer, c_in: usize, c_out: usize, kernels: &[usize], act: Activation) -> Self {
        let c = c_out;
        Self {
            cv1: conv(init, c_in, c, 1, act),
            cv2: conv(init, c_in, c, 1, Activation::Identity),
            cv3: conv(init, c, c, 3, act),
            cv4: conv(init, c, c, 1, act),
            cv5: conv(init, (kernels.len() + 1) * c, c, 1, act),
            cv6: conv(init, c, c, 3, act),
            cv7: conv(init, 2 * c, c_out, 1, act),
            kernels: kernels.to_vec(),
            act,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        check_channels("spp_csp", x, self.cv1.in_channels())?;
        let x1 = self.cv4.forward(&self.cv3.forward(&self.cv1.forward(x)?)?)?;
        let mut parts = vec![x1.clone()];
        for &k in &self.kernels {
            parts.push(x1.max_pool2d(k, 1, k / 2)?);
        }
        let y1 = self.cv6.forward(&self.cv5.forward(&Tensor::concat(&parts, 1)?)?)?;
        let y2 = self.cv2.forward(x)?;
        self.cv7.forward(&self.act.apply(&Tensor::concat(&[y1, y2], 1)?))
    }

    pub fn cost(c_in: usize, c_out: usize, pools: usize, h: usize, w: usize) -> Cost {
        let c = c_out;
        conv_cost(c_in, c, 1, h, w)
            + conv_cost(c_in, c, 1, h, w)
            + conv_cost(c, c, 3, h, w)
            + conv_cost(c, c, 1, h, w)
            + conv_cost((pools + 1) * c, c, 1, h, w)
            + conv_cost(c, c, 3, h, w)
            + conv_cost(2 * c, c_out, 1, h, w)
    }
}

/// Stride-2 downsampling: a strided 3×3 convolution branch and a max-pool branch,
/// each producing half of the output channels.
#[derive(Clone, Debug)]
pub struct DownC<T: Element> {
    pub cv1: ConvUnit<T>,
    pub cv2: ConvUnit<T>,
    pub cv3: ConvUnit<T>,
}

impl_module!(DownC { cv1, cv2, cv3 });

impl<T: Element> DownC<T> {
    pub fn new(init: &mut Initializer, c_in: usize, c_out: usize, act: Activation) -> Self {
        Self {
            cv1: conv(init, c_in, c_in, 1, act),
            cv2: ConvUnit::new(init, c_in, c_out / 2, 3, 2, act),
            cv3: conv(init, c_in, c_out / 2, 1, act),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        check_channels("down_c", x, self.cv1.in_channels())?;
        let a = self.cv2.forward(&self.cv1.forward(x)?)?;
        // odd extents: pad so the pool matches the strided conv's ceil(n/2)
        let (h, w) = (x.dim(2), x.dim(3));
        let xp = if h % 2 == 1 || w % 2 == 1 {
            x.pad(&[(0, 0), (0, 0), (0, h % 2), (0, w % 2)])?
        } else {
            x.clone()
        };
        let b = self.cv3.forward(&xp.max_pool2d(2, 2, 0)?)?;
        Tensor::concat(&[a, b], 1)
    }

    /// Cost on an `h×w` input; also returns the output extent.
    pub fn cost(c_in: usize, c_out: usize, h: usize, w: usize) -> (Cost, usize, usize) {
        let (c2, oh, ow) = ConvUnit::<f32>::cost(c_in, c_out / 2, 3, 2, h, w);
        (conv_cost(c_in, c_in, 1, h, w) + c2 + conv_cost(c_in, c_out / 2, 1, oh, ow), oh, ow)
    }
}
