use serde::{Deserialize, Serialize};

use super::{Attachment, HeadConfig};
use crate::error::{Error, Result};
use crate::impl_module;
use crate::nn::{Activation, ConvUnit, Cost};
use crate::tensor::init::Initializer;
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImplicitKind {
    Add,
    Mul,
}

/// A learned per-channel vector applied by broadcast to a feature map.
#[derive(Clone, Debug)]
pub struct ImplicitParam<T: Element> {
    pub kind: ImplicitKind,
    /// `[C]`.
    pub values: Tensor<T>,
    pub attachment: Attachment,
}

impl_module!(ImplicitParam { values });

impl<T: Element> ImplicitParam<T> {
    /// Add-kind starts near 0 and mul-kind near 1 (std 0.02).
    pub fn new(init: &mut Initializer, kind: ImplicitKind, channels: usize, attachment: Attachment) -> Self {
        let mean = match kind {
            ImplicitKind::Add => 0.0,
            ImplicitKind::Mul => 1.0,
        };
        Self { kind, values: init.normal(&[channels], mean, 0.02), attachment }
    }

    pub fn channels(&self) -> usize {
        self.values.dim(0)
    }

    /// `x + z` or `x ⊙ z` over `x[B, C, H, W]`.
    pub fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let c = self.channels();
        if x.rank() != 4 || x.dim(1) != c {
            return Err(Error::dim("implicit", format!("{c} values for map {:?}", x.shape())));
        }
        let z = self.values.reshape(&[c, 1, 1])?;
        match self.kind {
            ImplicitKind::Add => x.add(&z),
            ImplicitKind::Mul => x.mul(&z),
        }
    }
}

/// One pyramid level of the detection head: 3×3 conv, then a 1×1 prediction conv.
#[derive(Clone, Debug)]
pub struct HeadLevel<T: Element> {
    pub conv: ConvUnit<T>,
    pub implicit_add: Option<ImplicitParam<T>>,
    pub out: ConvUnit<T>,
    pub implicit_mul: Option<ImplicitParam<T>>,
}

impl_module!(HeadLevel { conv, implicit_add, out, implicit_mul });

impl<T: Element> HeadLevel<T> {
    fn apply_at(&self, at: Attachment, mut x: Tensor<T>) -> Result<Tensor<T>> {
        for p in [&self.implicit_add, &self.implicit_mul].into_iter().flatten() {
            if p.attachment == at {
                x = p.apply(&x)?;
            }
        }
        Ok(x)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.apply_at(Attachment::PreOutput, self.conv.forward(x)?)?;
        self.apply_at(Attachment::PostOutput, self.out.forward(&y)?)
    }
}

#[derive(Clone, Debug)]
pub struct DetectHead<T: Element> {
    pub levels: Vec<HeadLevel<T>>,
    pub na: usize,
    pub nc: usize,
}

impl_module!(DetectHead { levels });

impl<T: Element> DetectHead<T> {
    /// `inputs[l]` is the channel count of fused level `l`.
    pub fn new(init: &mut Initializer, inputs: &[usize], cfg: &HeadConfig) -> Result<Self> {
        cfg.anchors.validate()?;
        if inputs.len() != cfg.channels.len() || inputs.len() != cfg.anchors.levels() {
            return Err(Error::Config(format!(
                "head: {} inputs, {} conv widths, {} anchor levels",
                inputs.len(),
                cfg.channels.len(),
                cfg.anchors.levels()
            )));
        }
        let (na, nc) = (cfg.anchors.na(), cfg.nc);
        let no = cfg.outputs();
        let mut levels = Vec::with_capacity(inputs.len());
        for (l, (&c_in, &c_mid)) in inputs.iter().zip(&cfg.channels).enumerate() {
            let conv = ConvUnit::new(init, c_in, c_mid, 3, 1, cfg.act);
            let mut out = ConvUnit::new(init, c_mid, no, 1, 1, Activation::Identity);
            out.bias = prior_bias(&out.bias, na, nc, cfg.anchors.strides[l]);
            let width = |at: Attachment| if at == Attachment::PreOutput { c_mid } else { no };
            let (implicit_add, implicit_mul) = match cfg.implicit_placement() {
                Some(p) => (
                    Some(ImplicitParam::new(init, ImplicitKind::Add, width(p.add), p.add)),
                    Some(ImplicitParam::new(init, ImplicitKind::Mul, width(p.mul), p.mul)),
                ),
                None => (None, None),
            };
            levels.push(HeadLevel { conv, implicit_add, out, implicit_mul });
        }
        Ok(Self { levels, na, nc })
    }

    pub fn outputs(&self) -> usize {
        self.na * (5 + self.nc)
    }

    /// Raw predictions `[B, na·(5+nc), H_l, W_l]` per level.
    pub fn forward(&self, fused: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        if fused.len() != self.levels.len() {
            return Err(Error::dim("detect_head", format!("{} levels for {} head levels", fused.len(), self.levels.len())));
        }
        self.levels.iter().zip(fused).map(|(l, x)| l.forward(x)).collect()
    }

    /// The same head with every implicit parameter removed.
    pub fn without_implicit(&self) -> Self {
        let mut h = self.clone();
        for l in &mut h.levels {
            l.implicit_add = None;
            l.implicit_mul = None;
        }
        h
    }

    /// Cost of one level on an `h×w` map.
    pub fn level_cost(c_in: usize, c_mid: usize, cfg: &HeadConfig, h: usize, w: usize) -> Cost {
        let no = cfg.outputs();
        let implicit = cfg.implicit_placement().map_or(0, |p| {
            [p.add, p.mul].iter().map(|&a| if a == Attachment::PreOutput { c_mid } else { no }).sum()
        });
        ConvUnit::<f32>::cost(c_in, c_mid, 3, 1, h, w).0 + ConvUnit::<f32>::cost(c_mid, no, 1, 1, h, w).0 + Cost::new(implicit, 0)
    }
}

/// Objectness prior of about 8 objects per 640² image and class prior 0.6/(nc−0.99).
fn prior_bias<T: Element>(bias: &Tensor<T>, na: usize, nc: usize, stride: usize) -> Tensor<T> {
    let mut b = bias.to_f64_vec();
    let obj = (8.0 / (640.0 / stride as f64).powi(2)).ln();
    let cls = (0.6 / (nc as f64 - 0.99)).ln();
    for a in 0..na {
        let o = a * (5 + nc);
        b[o + 4] += obj;
        for v in &mut b[o + 5..o + 5 + nc] {
            *v += cls;
        }
    }
    Tensor::from_f64(bias.shape(), &b).expect("same shape").with_requires_grad(bias.is_tracked())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neck::{AnchorSet, ImplicitPlacement};
    use crate::nn::Module;

    fn toy_cfg(nc: usize, na: usize) -> HeadConfig {
        let mut anchors = AnchorSet::p6();
        anchors.anchors.iter_mut().for_each(|l| l.truncate(na));
        HeadConfig { channels: vec![4, 4, 6, 6], nc, anchors, implicit: true, placement: ImplicitPlacement::default(), act: Activation::Silu }
    }

    #[test]
    fn implicit_examples() {
        let x = Tensor::<f64>::full(&[1, 1, 1, 1], 3.0);
        let add = ImplicitParam { kind: ImplicitKind::Add, values: Tensor::full(&[1], 1.0), attachment: Attachment::PreOutput };
        let mul = ImplicitParam { kind: ImplicitKind::Mul, values: Tensor::full(&[1], 2.0), attachment: Attachment::PostOutput };
        assert_eq!(mul.apply(&add.apply(&x).unwrap()).unwrap().item(), 8.0);
        let zero = ImplicitParam { values: Tensor::zeros(&[1]), ..add.clone() };
        assert_eq!(zero.apply(&x).unwrap().item(), 3.0);
        assert!(add.apply(&Tensor::zeros(&[1, 2, 1, 1])).is_err());
    }

    #[test]
    fn output_channels_and_cost() {
        let mut init = Initializer::new(0);
        let cfg = toy_cfg(1, 2);
        let head = DetectHead::<f32>::new(&mut init, &[3, 3, 5, 5], &cfg).unwrap();
        let xs: Vec<_> = [(8, 8), (4, 4), (2, 2), (1, 1)]
            .iter()
            .zip([3, 3, 5, 5])
            .map(|(&(h, w), c)| Tensor::zeros(&[1, c, h, w]))
            .collect();
        let out = head.forward(&xs).unwrap();
        assert!(out.iter().all(|o| o.dim(1) == 12));
        let total: Cost = [(3, 4, 8), (3, 4, 4), (5, 6, 2), (5, 6, 1)]
            .iter()
            .map(|&(ci, cm, s)| DetectHead::<f32>::level_cost(ci, cm, &cfg, s, s))
            .sum();
        assert_eq!(total.params, head.param_count());
        assert_eq!(DetectHead::<f32>::new(&mut init, &[3, 3, 5, 5], &toy_cfg(80, 3)).unwrap().outputs(), 255);
    }
}
