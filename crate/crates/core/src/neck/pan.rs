use std::collections::{HashMap, HashSet};

use super::{BottleneckCsp2, NeckConfig, SppCsp};
use crate::error::{Error, Result};
use crate::impl_module;
use crate::nn::{ConvUnit, Cost};
use crate::tensor::init::Initializer;
use crate::tensor::{Element, Tensor};

/// Path-aggregation neck: SPP on the deepest input, a top-down pass
/// (1×1 reduce, ×2 upsample, concat with a 1×1 lateral, CSP fuse) and a
/// bottom-up pass (3×3 stride-2 conv, concat, CSP fuse).
#[derive(Clone, Debug)]
pub struct PanNeck<T: Element> {
    pub spp: SppCsp<T>,
    /// Indexed by the level being produced, `0..L−1`.
    pub reduce: Vec<ConvUnit<T>>,
    pub lateral: Vec<ConvUnit<T>>,
    pub top_down: Vec<BottleneckCsp2<T>>,
    /// Indexed by level minus one.
    pub down: Vec<ConvUnit<T>>,
    pub bottom_up: Vec<BottleneckCsp2<T>>,
}

impl_module!(PanNeck { spp, reduce, lateral, top_down, down, bottom_up });

/// A named node of the neck's dataflow graph and the nodes it reads.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DataflowNode {
    pub name: String,
    pub inputs: Vec<String>,
}

impl<T: Element> PanNeck<T> {
    /// `inputs[l]`: channels of raw pyramid level `l`, shallowest first.
    pub fn new(init: &mut Initializer, inputs: &[usize], cfg: &NeckConfig) -> Result<Self> {
        let l = inputs.len();
        if l < 2 || cfg.channels.len() != l {
            return Err(Error::Config(format!("neck: {l} input levels for {} channel entries", cfg.channels.len())));
        }
        let c = &cfg.channels;
        let (n, act) = (cfg.csp_depth, cfg.act);
        let spp = SppCsp::new(init, inputs[l - 1], c[l - 1], &cfg.spp_kernels, act);
        let (mut reduce, mut lateral, mut top_down) = (Vec::new(), Vec::new(), Vec::new());
        for i in 0..l - 1 {
            reduce.push(ConvUnit::new(init, c[i + 1], c[i], 1, 1, act));
            lateral.push(ConvUnit::new(init, inputs[i], c[i], 1, 1, act));
            top_down.push(BottleneckCsp2::new(init, 2 * c[i], c[i], n, act));
        }
        let (mut down, mut bottom_up) = (Vec::new(), Vec::new());
        for i in 1..l {
            down.push(ConvUnit::new(init, c[i - 1], c[i], 3, 2, act));
            bottom_up.push(BottleneckCsp2::new(init, 2 * c[i], c[i], n, act));
        }
        Ok(Self { spp, reduce, lateral, top_down, down, bottom_up })
    }

    pub fn levels(&self) -> usize {
        self.reduce.len() + 1
    }

    pub fn out_channels(&self) -> Vec<usize> {
        let mut c: Vec<usize> = self.top_down.iter().map(|b| b.cv3.out_channels()).collect();
        c.push(self.spp.cv7.out_channels());
        c
    }

    pub fn forward(&self, inputs: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        let l = self.levels();
        if inputs.len() != l {
            return Err(Error::dim("pan_neck", format!("{} levels for a {l}-level neck", inputs.len())));
        }
        let mut td = vec![None; l];
        td[l - 1] = Some(self.spp.forward(&inputs[l - 1])?);
        for i in (0..l - 1).rev() {
            let deeper = td[i + 1].as_ref().expect("filled");
            let (h, w) = (inputs[i].dim(2), inputs[i].dim(3));
            let mut up = self.reduce[i].forward(deeper)?.upsample_nearest(2)?;
            if up.dim(2) < h || up.dim(3) < w {
                return Err(Error::dim("pan_neck", format!("level {i} is {h}x{w} but the deeper level upsamples to {:?}", up.shape())));
            }
            if (up.dim(2), up.dim(3)) != (h, w) {
                up = up.slice(2, 0, h)?.slice(3, 0, w)?;
            }
            let lat = self.lateral[i].forward(&inputs[i])?;
            td[i] = Some(self.top_down[i].forward(&Tensor::concat(&[lat, up], 1)?)?);
        }
        let td: Vec<Tensor<T>> = td.into_iter().map(|t| t.expect("filled")).collect();
        let mut out = vec![td[0].clone()];
        for i in 1..l {
            let d = self.down[i - 1].forward(&out[i - 1])?;
            out.push(self.bottom_up[i - 1].forward(&Tensor::concat(&[d, td[i].clone()], 1)?)?);
        }
        Ok(out)
    }

    /// Per-module cost rows for inputs of the given channels and extents.
    pub fn cost(inputs: &[usize], extents: &[(usize, usize)], cfg: &NeckConfig) -> Vec<(String, Cost)> {
        let l = inputs.len();
        let c = &cfg.channels;
        let n = cfg.csp_depth;
        let conv = |ci, co, k, (h, w): (usize, usize)| ConvUnit::<f32>::cost(ci, co, k, 1, h, w).0;
        let (h6, w6) = extents[l - 1];
        let mut rows = vec![("spp".to_string(), SppCsp::<f32>::cost(inputs[l - 1], c[l - 1], cfg.spp_kernels.len(), h6, w6))];
        for i in (0..l - 1).rev() {
            let e = extents[i];
            let r = conv(c[i + 1], c[i], 1, extents[i + 1]) + conv(inputs[i], c[i], 1, e);
            rows.push((format!("top_down.{i}"), r + BottleneckCsp2::<f32>::cost(2 * c[i], c[i], n, e.0, e.1)));
        }
        for i in 1..l {
            let (d, _, _) = ConvUnit::<f32>::cost(c[i - 1], c[i], 3, 2, extents[i - 1].0, extents[i - 1].1);
            let e = extents[i];
            rows.push((format!("bottom_up.{i}"), d + BottleneckCsp2::<f32>::cost(2 * c[i], c[i], n, e.0, e.1)));
        }
        rows
    }

    /// Dataflow graph for `levels` inputs; inputs are `in{l}`, outputs `out{l}`.
    pub fn dataflow(levels: usize) -> Vec<DataflowNode> {
        let node = |name: String, inputs: Vec<String>| DataflowNode { name, inputs };
        let l = levels;
        let td = |i: usize| if i == l - 1 { "spp".to_string() } else { format!("top_down.{i}") };
        let mut g = vec![node("spp".into(), vec![format!("in{}", l - 1)])];
        for i in (0..l - 1).rev() {
            g.push(node(format!("reduce.{i}"), vec![td(i + 1)]));
            g.push(node(format!("lateral.{i}"), vec![format!("in{i}")]));
            g.push(node(td(i), vec![format!("lateral.{i}"), format!("reduce.{i}")]));
        }
        g.push(node("out0".into(), vec![td(0)]));
        for i in 1..l {
            g.push(node(format!("down.{i}"), vec![format!("out{}", i - 1)]));
            g.push(node(format!("out{i}"), vec![format!("down.{i}"), td(i)]));
        }
        g
    }

    /// Output levels reachable from raw input level `input` in the dataflow graph.
    pub fn downstream_outputs(levels: usize, input: usize) -> Vec<usize> {
        let g = Self::dataflow(levels);
        let mut readers: HashMap<&str, Vec<&str>> = HashMap::new();
        for n in &g {
            for i in &n.inputs {
                readers.entry(i.as_str()).or_default().push(n.name.as_str());
            }
        }
        let start = format!("in{input}");
        let mut seen = HashSet::new();
        let mut stack = vec![start.as_str()];
        while let Some(cur) = stack.pop() {
            for &r in readers.get(cur).map(Vec::as_slice).unwrap_or(&[]) {
                if seen.insert(r) {
                    stack.push(r);
                }
            }
        }
        (0..levels).filter(|o| seen.contains(format!("out{o}").as_str())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Module};
    use crate::tensor::counters::count_macs;

    fn toy() -> NeckConfig {
        NeckConfig { channels: vec![4, 6, 8, 8], csp_depth: 1, spp_kernels: vec![5, 9, 13], act: Activation::Silu }
    }

    fn inputs(init: &mut Initializer) -> Vec<Tensor<f32>> {
        [16, 8, 4, 2].iter().map(|&s| init.normal(&[1, 8, s, s], 0.0, 1.0)).collect()
    }

    #[test]
    fn toy_levels_have_configured_channels() {
        let mut init = Initializer::new(0);
        let neck = PanNeck::<f32>::new(&mut init, &[8; 4], &toy()).unwrap();
        let xs = inputs(&mut init);
        let (out, macs) = count_macs(|| neck.forward(&xs).unwrap());
        let shapes: Vec<_> = out.iter().map(|t| t.shape().to_vec()).collect();
        assert_eq!(shapes, vec![vec![1, 4, 16, 16], vec![1, 6, 8, 8], vec![1, 8, 4, 4], vec![1, 8, 2, 2]]);
        assert_eq!(neck.out_channels(), vec![4, 6, 8, 8]);
        let rows = PanNeck::<f32>::cost(&[8; 4], &[(16, 16), (8, 8), (4, 4), (2, 2)], &toy());
        let total: Cost = rows.iter().map(|r| r.1).sum();
        assert_eq!(total, Cost::new(neck.param_count(), macs));
        // determinism
        assert_eq!(neck.forward(&xs).unwrap()[0].to_vec(), out[0].to_vec());
        assert!(neck.forward(&xs[..3]).is_err());
    }

    #[test]
    fn zeroing_an_input_changes_exactly_its_downstream_outputs() {
        let mut init = Initializer::new(1);
        let neck = PanNeck::<f64>::new(&mut init, &[8; 4], &toy()).unwrap();
        let xs: Vec<Tensor<f64>> = [16, 8, 4, 2].iter().map(|&s| init.normal(&[1, 8, s, s], 0.0, 1.0)).collect();
        let base = neck.forward(&xs).unwrap();
        for l in 0..4 {
            let mut zeroed = xs.clone();
            zeroed[l] = Tensor::zeros(xs[l].shape());
            let out = neck.forward(&zeroed).unwrap();
            let changed: Vec<usize> = (0..4).filter(|&o| out[o].to_vec() != base[o].to_vec()).collect();
            assert_eq!(changed, PanNeck::<f64>::downstream_outputs(4, l), "input {l}");
        }
    }
}
