//! Parameterized layers and parameter traversal.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::init::Initializer;
use crate::tensor::io::WeightFile;
use crate::tensor::{conv_out_extent, Element, Tensor};

/// Anything that owns parameters. Traversal order is stable and defines the
/// order used by [`Module::set_params`] and weight serialization.
pub trait Module<T: Element> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>));

    fn named_params(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, t| out.push((name.to_string(), t.clone())));
        out
    }

    fn params(&self) -> Vec<Tensor<T>> {
        let mut out = Vec::new();
        self.visit("", &mut |_, t| out.push(t.clone()));
        out
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.numel());
        n
    }

    /// Replaces every parameter, in traversal order.
    fn set_params(&mut self, values: &[Tensor<T>]) -> Result<()> {
        let mut it = values.iter();
        let mut err = None;
        self.visit_mut("", &mut |name, t| {
            match it.next() {
                Some(v) if v.shape() == t.shape() => *t = v.clone(),
                Some(v) => {
                    err.get_or_insert(Error::dim("set_params", format!("{name}: {:?} vs {:?}", v.shape(), t.shape())));
                }
                None => {
                    err.get_or_insert(Error::dim("set_params", "too few values"));
                }
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if it.next().is_some() {
            return Err(Error::dim("set_params", "too many values"));
        }
        Ok(())
    }

    fn set_requires_grad(&mut self, requires_grad: bool) {
        self.visit_mut("", &mut |_, t| *t = t.with_requires_grad(requires_grad));
    }

    /// Loads every parameter by name from a weight container.
    fn load_weights(&mut self, wf: &WeightFile) -> Result<()> {
        let mut err = None;
        self.visit_mut("", &mut |name, t| {
            if err.is_some() {
                return;
            }
            match wf.tensor::<T>(name) {
                Ok(v) if v.shape() == t.shape() => *t = v.with_requires_grad(t.is_tracked()),
                Ok(v) => err = Some(Error::Weights(format!("{name}: stored {:?}, expected {:?}", v.shape(), t.shape()))),
                Err(e) => err = Some(e),
            }
        });
        err.map_or(Ok(()), Err)
    }
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl<T: Element> Module<T> for Tensor<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(prefix, self)
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(prefix, self)
    }
}

impl<T: Element, M: Module<T>> Module<T> for Vec<M> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        for (i, m) in self.iter().enumerate() {
            m.visit(&join(prefix, &i.to_string()), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        for (i, m) in self.iter_mut().enumerate() {
            m.visit_mut(&join(prefix, &i.to_string()), f);
        }
    }
}

impl<T: Element, M: Module<T>> Module<T> for Option<M> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        if let Some(m) = self {
            m.visit(prefix, f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        if let Some(m) = self {
            m.visit_mut(prefix, f);
        }
    }
}

impl<T: Element, M: Module<T>> Module<T> for Box<M> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        (**self).visit(prefix, f)
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        (**self).visit_mut(prefix, f)
    }
}

/// Implements [`Module`] for a struct generic over `T` by visiting the listed fields.
#[macro_export]
macro_rules! impl_module {
    ($ty:ident { $($field:ident),* $(,)? }) => {
        impl<T: $crate::tensor::Element> $crate::nn::Module<T> for $ty<T> {
            fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &$crate::tensor::Tensor<T>)) {
                $( $crate::nn::Module::visit(&self.$field, &$crate::nn::join(prefix, stringify!($field)), f); )*
            }

            fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut $crate::tensor::Tensor<T>)) {
                $( $crate::nn::Module::visit_mut(&mut self.$field, &$crate::nn::join(prefix, stringify!($field)), f); )*
            }
        }
    };
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Silu,
    Mish,
    Gelu,
    Identity,
}

impl Activation {
    pub fn apply<T: Element>(self, x: &Tensor<T>) -> Tensor<T> {
        match self {
            Activation::Silu => x.silu(),
            Activation::Mish => x.mish(),
            Activation::Gelu => x.gelu(),
            Activation::Identity => x.clone(),
        }
    }
}

/// `y = x @ weight + bias` over the last axis; weight is stored `[in, out]`.
#[derive(Clone, Debug)]
pub struct Linear<T: Element> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

impl_module!(Linear { weight, bias });

impl<T: Element> Linear<T> {
    /// Truncation-free normal(0, 0.02) weights and zero bias.
    pub fn new(init: &mut Initializer, input: usize, output: usize, bias: bool) -> Self {
        Self {
            weight: init.normal(&[input, output], 0.0, 0.02),
            bias: bias.then(|| init.constant(&[output], 0.0)),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.linear(&self.weight, self.bias.as_ref())
    }

    pub fn param_count(input: usize, output: usize, bias: bool) -> usize {
        input * output + if bias { output } else { 0 }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm<T: Element> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub eps: f64,
}

impl_module!(LayerNorm { weight, bias });

impl<T: Element> LayerNorm<T> {
    pub const EPS: f64 = 1e-5;

    pub fn new(init: &mut Initializer, dim: usize) -> Self {
        Self {
            weight: init.constant(&[dim], 1.0),
            bias: init.constant(&[dim], 0.0),
            eps: Self::EPS,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.layer_norm(&self.weight, &self.bias, self.eps)
    }
}

/// Convolution with bias followed by an activation ("same" padding for odd kernels).
///
/// Batch normalization of the reference architecture is folded into the bias.
#[derive(Clone, Debug)]
pub struct ConvUnit<T: Element> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub pad: usize,
    pub act: Activation,
}

impl_module!(ConvUnit { weight, bias });

impl<T: Element> ConvUnit<T> {
    pub fn new(init: &mut Initializer, c_in: usize, c_out: usize, k: usize, stride: usize, act: Activation) -> Self {
        let fan_in = c_in * k * k;
        Self {
            weight: init.fan_in_uniform(&[c_out, c_in, k, k], fan_in),
            bias: init.fan_in_uniform(&[c_out], fan_in),
            stride,
            pad: k / 2,
            act,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dim(1)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn kernel(&self) -> usize {
        self.weight.dim(2)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut y = x.conv2d(&self.weight, Some(&self.bias), self.stride, self.pad)?;
        if let Some(normalized) = calibration::observe(self, &y)? {
            y = normalized;
        }
        Ok(self.act.apply(&y))
    }

    pub fn param_count(c_in: usize, c_out: usize, k: usize) -> usize {
        c_in * c_out * k * k + c_out
    }

    /// Cost on an `h×w` input; also returns the output extent.
    pub fn cost(c_in: usize, c_out: usize, k: usize, stride: usize, h: usize, w: usize) -> (Cost, usize, usize) {
        let (oh, ow) = (conv_out_extent(h, k, stride, k / 2).unwrap_or(0), conv_out_extent(w, k, stride, k / 2).unwrap_or(0));
        let macs = (c_in * k * k * c_out * oh * ow) as u64;
        (Cost::new(Self::param_count(c_in, c_out, k), macs), oh, ow)
    }
}

/// Data-dependent initialization: batch statistics folded into convolutions.
///
/// Inside [`calibrate`], each convolution normalizes its pre-activation output
/// per channel over the batch, exactly like a freshly initialized batch norm in
/// training mode, and records the mean and std it saw. Afterwards the statistics
/// are folded into the weights and bias, so the plain forward pass reproduces the
/// normalized activations of the calibration batch.
pub mod calibration {
    use std::cell::RefCell;
    use std::collections::{HashMap, HashSet};

    use super::{ConvUnit, Module};
    use crate::error::Result;
    use crate::tensor::{no_grad, Element, Tensor};

    const EPS: f64 = 1e-3;

    #[derive(Default)]
    struct State {
        skip: HashSet<u64>,
        /// Keyed by weight id; `(bias id, mean, std)` per channel.
        stats: HashMap<u64, (u64, Vec<f64>, Vec<f64>)>,
    }

    thread_local! {
        static STATE: RefCell<Option<State>> = const { RefCell::new(None) };
    }

    pub(super) fn observe<T: Element>(conv: &ConvUnit<T>, y: &Tensor<T>) -> Result<Option<Tensor<T>>> {
        STATE.with(|s| {
            let mut s = s.borrow_mut();
            let Some(state) = s.as_mut() else { return Ok(None) };
            let id = conv.weight.id();
            if state.skip.contains(&id) || state.stats.contains_key(&id) {
                return Ok(None);
            }
            let (b, c) = (y.dim(0), y.dim(1));
            let hw = y.numel() / (b * c);
            let data = y.data();
            let (mut mean, mut std) = (vec![0.0; c], vec![0.0; c]);
            for ch in 0..c {
                let vals = (0..b).flat_map(|i| data[(i * c + ch) * hw..(i * c + ch + 1) * hw].iter().map(|v| v.as_f64()));
                let n = (b * hw) as f64;
                let (sum, sq) = vals.fold((0.0, 0.0), |(s, q), v| (s + v, q + v * v));
                mean[ch] = sum / n;
                std[ch] = ((sq / n - mean[ch] * mean[ch]).max(0.0) + EPS).sqrt();
            }
            let out: Vec<T> = data
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let ch = (i / hw) % c;
                    T::of_f64((v.as_f64() - mean[ch]) / std[ch])
                })
                .collect();
            state.stats.insert(id, (conv.bias.id(), mean, std));
            Tensor::new(y.shape(), out).map(Some)
        })
    }

    /// Runs `pass` once with per-channel normalization active, then folds the
    /// observed statistics into every convolution reached, except those whose
    /// weight is in `skip`. Returns the number of convolutions rescaled.
    pub fn calibrate<T: Element, M: Module<T>>(model: &mut M, skip: &[&Tensor<T>], pass: impl FnOnce(&M) -> Result<()>) -> Result<usize> {
        let state = State { skip: skip.iter().map(|t| t.id()).collect(), stats: HashMap::new() };
        STATE.with(|s| *s.borrow_mut() = Some(state));
        let run = no_grad(|| pass(model));
        let state = STATE.with(|s| s.borrow_mut().take()).expect("calibration state");
        run?;
        let biases: HashMap<u64, (Vec<f64>, Vec<f64>)> = state.stats.values().map(|(b, m, s)| (*b, (m.clone(), s.clone()))).collect();
        model.visit_mut("", &mut |_, t| {
            let id = t.id();
            let grad = t.is_tracked();
            let folded = if let Some((_, _, std)) = state.stats.get(&id) {
                let per = t.numel() / std.len();
                Some(t.data().iter().enumerate().map(|(i, v)| T::of_f64(v.as_f64() / std[i / per])).collect::<Vec<T>>())
            } else {
                biases.get(&id).map(|(mean, std)| t.data().iter().zip(mean.iter().zip(std)).map(|(v, (m, s))| T::of_f64((v.as_f64() - m) / s)).collect())
            };
            if let Some(data) = folded {
                *t = Tensor::new(t.shape(), data).expect("same shape").with_requires_grad(grad);
            }
        });
        Ok(state.stats.len())
    }
}

/// Parameters and forward multiply-accumulates of a layer or block.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Cost {
    pub params: usize,
    pub macs: u64,
}

impl Cost {
    pub fn new(params: usize, macs: u64) -> Self {
        Self { params, macs }
    }

    pub fn flops(&self) -> u64 {
        2 * self.macs
    }
}

impl std::ops::Add for Cost {
    type Output = Cost;
    fn add(self, o: Cost) -> Cost {
        Cost::new(self.params + o.params, self.macs + o.macs)
    }
}

impl std::ops::AddAssign for Cost {
    fn add_assign(&mut self, o: Cost) {
        *self = *self + o;
    }
}

impl std::iter::Sum for Cost {
    fn sum<I: Iterator<Item = Cost>>(iter: I) -> Cost {
        iter.fold(Cost::default(), |a, b| a + b)
    }
}
