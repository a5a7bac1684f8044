//! Finite-difference checks of every differentiable op and of the model's
//! trainable components, at 64-bit precision.
//!
//! Each case builds a scalar function of some parameters from a seed: random
//! inputs, the op or module under test, then a dot product with fixed random
//! weights so every output coordinate carries a distinct gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::model::{Adapter, ModelConfig, NormKind, TapConfig, VariantSpec, YotoR};
use crate::neck::{AnchorSet, DetectHead, PanNeck};
use crate::nn::Module;
use crate::swin::{SwinBackbone, SwinConfig, TokenGrid, WindowAttention};
use crate::tensor::gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
use crate::tensor::init::Initializer;
use crate::tensor::Tensor;
use crate::train::{assign_targets, compute_loss_with, TargetBox, TrainConfig};

type T64 = Tensor<f64>;
type CaseFn = fn(u64) -> Result<GradCheckReport>;

/// One named check, run once per seed.
#[derive(Clone, Copy)]
pub struct Case {
    pub name: &'static str,
    pub run: CaseFn,
}

#[derive(Clone, Debug, Serialize)]
pub struct CaseResult {
    pub name: String,
    pub seeds: usize,
    pub checked: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

pub const TOLERANCE: f64 = 1e-4;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rand_t(r: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> T64 {
    let n = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| r.random_range(lo..hi)).collect();
    Tensor::from_f64(shape, &v).expect("shape")
}

/// `Σ y ⊙ w` for fixed random weights `w`.
fn project(y: &T64, seed: u64) -> Result<T64> {
    let w = rand_t(&mut rng(seed ^ 0x5eed), y.shape(), -1.0, 1.0);
    Ok(y.mul(&w)?.sum())
}

fn cfg(max_coords: Option<usize>, seed: u64) -> GradCheckConfig {
    GradCheckConfig { max_coords, seed, ..GradCheckConfig::default() }
}

fn unary(seed: u64, lo: f64, hi: f64, op: fn(&T64) -> Result<T64>) -> Result<GradCheckReport> {
    let x = rand_t(&mut rng(seed), &[3, 4], lo, hi);
    grad_check(|p| project(&op(&p[0])?, seed), &[x], &cfg(None, seed))
}

fn binary(seed: u64, op: fn(&T64, &T64) -> Result<T64>, b_shape: &[usize]) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let a = rand_t(&mut r, &[2, 3, 4], -2.0, 2.0);
    let b = rand_t(&mut r, b_shape, 0.5, 2.0);
    grad_check(|p| project(&op(&p[0], &p[1])?, seed), &[a, b], &cfg(None, seed))
}

/// `a` and `b` differ by at least 0.1 everywhere so min/max have no ties.
fn separated(seed: u64, op: fn(&T64, &T64) -> Result<T64>) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let a = rand_t(&mut r, &[12], -2.0, 2.0);
    let b: Vec<f64> = a.data().iter().map(|&v| v + if r.random_bool(0.5) { 1.0 } else { -1.0 } * r.random_range(0.1..1.0)).collect();
    let b = Tensor::from_f64(&[12], &b)?;
    grad_check(|p| project(&op(&p[0], &p[1])?, seed), &[a, b], &cfg(None, seed))
}

fn clamp_case(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let v: Vec<f64> = (0..12).map(|_| if r.random_bool(0.5) { 1.0 } else { -1.0 } * r.random_range(0.1..2.0)).collect();
    let x = Tensor::from_f64(&[12], &v)?;
    grad_check(|p| project(&p[0].clamp_min(0.0), seed), &[x], &cfg(None, seed))
}

fn max_pool_case(seed: u64) -> Result<GradCheckReport> {
    // a shuffled ramp keeps every pooling window's maximum unique
    let mut r = rng(seed);
    let mut v: Vec<f64> = (0..2 * 5 * 5).map(|i| i as f64 * 0.1).collect();
    for i in (1..v.len()).rev() {
        v.swap(i, r.random_range(0..=i));
    }
    let x = Tensor::from_f64(&[1, 2, 5, 5], &v)?;
    grad_check(|p| project(&p[0].max_pool2d(3, 1, 1)?, seed), &[x], &cfg(None, seed))
}

fn conv_case(seed: u64, stride: usize, pad: usize) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let x = rand_t(&mut r, &[2, 3, 5, 6], -1.0, 1.0);
    let w = rand_t(&mut r, &[4, 3, 3, 3], -0.5, 0.5);
    let b = rand_t(&mut r, &[4], -0.5, 0.5);
    grad_check(|p| project(&p[0].conv2d(&p[1], Some(&p[2]), stride, pad)?, seed), &[x, w, b], &cfg(None, seed))
}

fn layer_norm_case(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let x = rand_t(&mut r, &[3, 5], -2.0, 2.0);
    let g = rand_t(&mut r, &[5], 0.5, 1.5);
    let b = rand_t(&mut r, &[5], -0.5, 0.5);
    grad_check(|p| project(&p[0].layer_norm(&p[1], &p[2], 1e-5)?, seed), &[x, g, b], &cfg(None, seed))
}

fn linear_case(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let x = rand_t(&mut r, &[2, 3, 4], -1.0, 1.0);
    let w = rand_t(&mut r, &[4, 5], -1.0, 1.0);
    let b = rand_t(&mut r, &[5], -1.0, 1.0);
    grad_check(|p| project(&p[0].linear(&p[1], Some(&p[2]))?, seed), &[x, w, b], &cfg(None, seed))
}

fn matmul_case(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let a = rand_t(&mut r, &[3, 4], -1.0, 1.0);
    let b = rand_t(&mut r, &[4, 2], -1.0, 1.0);
    grad_check(|p| project(&p[0].matmul(&p[1])?, seed), &[a, b], &cfg(None, seed))
}

fn bmm_case(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let a = rand_t(&mut r, &[2, 3, 4], -1.0, 1.0);
    let b = rand_t(&mut r, &[2, 4, 2], -1.0, 1.0);
    grad_check(|p| project(&p[0].bmm(&p[1])?, seed), &[a, b], &cfg(None, seed))
}

fn concat_case(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let a = rand_t(&mut r, &[2, 3, 2], -1.0, 1.0);
    let b = rand_t(&mut r, &[2, 1, 2], -1.0, 1.0);
    grad_check(|p| project(&Tensor::concat(&[p[0].clone(), p[1].clone()], 1)?, seed), &[a, b], &cfg(None, seed))
}

fn index_map_case(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let x = rand_t(&mut r, &[6], -1.0, 1.0);
    // repeated sources accumulate
    let map: Vec<usize> = (0..10).map(|_| r.random_range(0..6)).collect();
    grad_check(|p| project(&p[0].index_map(vec![2, 5], map.clone())?, seed), &[x], &cfg(None, seed))
}

fn ops() -> Vec<Case> {
    macro_rules! case {
        ($name:literal, $f:expr) => {
            Case { name: $name, run: $f }
        };
    }
    vec![
        case!("add", |s| binary(s, |a, b| a.add(b), &[3, 1])),
        case!("sub", |s| binary(s, |a, b| a.sub(b), &[2, 3, 4])),
        case!("mul", |s| binary(s, |a, b| a.mul(b), &[4])),
        case!("div", |s| binary(s, |a, b| a.div(b), &[3, 4])),
        case!("minimum", |s| separated(s, |a, b| a.minimum(b))),
        case!("maximum", |s| separated(s, |a, b| a.maximum(b))),
        case!("neg", |s| unary(s, -2.0, 2.0, |x| Ok(x.neg()))),
        case!("scale", |s| unary(s, -2.0, 2.0, |x| Ok(x.scale(-1.7)))),
        case!("add_scalar", |s| unary(s, -2.0, 2.0, |x| Ok(x.add_scalar(0.3).square()))),
        case!("exp", |s| unary(s, -2.0, 2.0, |x| Ok(x.exp()))),
        case!("ln", |s| unary(s, 0.2, 3.0, |x| Ok(x.ln()))),
        case!("sqrt", |s| unary(s, 0.2, 3.0, |x| Ok(x.sqrt()))),
        case!("square", |s| unary(s, -2.0, 2.0, |x| Ok(x.square()))),
        case!("atan", |s| unary(s, -3.0, 3.0, |x| Ok(x.atan()))),
        case!("tanh", |s| unary(s, -3.0, 3.0, |x| Ok(x.tanh()))),
        case!("sigmoid", |s| unary(s, -4.0, 4.0, |x| Ok(x.sigmoid()))),
        case!("silu", |s| unary(s, -4.0, 4.0, |x| Ok(x.silu()))),
        case!("softplus", |s| unary(s, -4.0, 4.0, |x| Ok(x.softplus()))),
        case!("mish", |s| unary(s, -4.0, 4.0, |x| Ok(x.mish()))),
        case!("gelu", |s| unary(s, -4.0, 4.0, |x| Ok(x.gelu()))),
        case!("clamp_min", clamp_case),
        case!("sum", |s| unary(s, -2.0, 2.0, |x| Ok(x.square().sum()))),
        case!("mean", |s| unary(s, -2.0, 2.0, |x| Ok(x.square().mean()))),
        case!("sum_axis", |s| unary(s, -2.0, 2.0, |x| x.square().sum_axis(0))),
        case!("index_map", index_map_case),
        case!("reshape", |s| unary(s, -2.0, 2.0, |x| x.reshape(&[2, 6]))),
        case!("flatten", |s| unary(s, -2.0, 2.0, |x| Ok(x.flatten()))),
        case!("permute", |s| unary(s, -2.0, 2.0, |x| x.reshape(&[3, 2, 2])?.permute(&[2, 0, 1]))),
        case!("transpose_last", |s| unary(s, -2.0, 2.0, |x| x.transpose_last())),
        case!("roll", |s| unary(s, -2.0, 2.0, |x| x.roll(&[(0, 1), (1, -3)]))),
        case!("slice", |s| unary(s, -2.0, 2.0, |x| x.slice(1, 1, 2))),
        case!("pad", |s| unary(s, -2.0, 2.0, |x| x.pad(&[(1, 0), (0, 2)]))),
        case!("upsample_nearest", |s| unary(s, -2.0, 2.0, |x| x.reshape(&[1, 1, 3, 4])?.upsample_nearest(2))),
        case!("select", |s| unary(s, -2.0, 2.0, |x| x.select(1, &[3, 0, 3]))),
        case!("concat", concat_case),
        case!("matmul", matmul_case),
        case!("bmm", bmm_case),
        case!("linear", linear_case),
        case!("conv2d", |s| conv_case(s, 1, 1)),
        case!("conv2d_strided", |s| conv_case(s, 2, 1)),
        case!("max_pool2d", max_pool_case),
        case!("layer_norm", layer_norm_case),
        case!("softmax", |s| unary(s, -3.0, 3.0, |x| x.softmax())),
    ]
}

/// `f(params)` of a module: install `params`, then run `forward`.
///
/// Module outputs sum many terms, so `f` is large next to individual partial
/// derivatives; a wider step keeps the difference quotient above roundoff, and
/// partials below 1e-4 are compared on an absolute scale.
fn module_check<M: Module<f64> + Clone>(module: &M, seed: u64, coords: usize, forward: impl Fn(&M) -> Result<T64>) -> Result<GradCheckReport> {
    let params = module.params();
    grad_check(
        |p| {
            let mut m = module.clone();
            m.set_params(p)?;
            forward(&m)
        },
        &params,
        &GradCheckConfig { step: 1e-4, floor: 1e-4, ..cfg(Some(coords), seed) },
    )
}

fn tiny_swin() -> SwinConfig {
    SwinConfig { embed_dim: 4, depths: vec![2, 2, 2, 2], heads: vec![1, 2, 2, 4], window: 2, ..SwinConfig::tiny() }
}

fn attention_case(seed: u64) -> Result<GradCheckReport> {
    let mut init = Initializer::new(seed);
    let attn = WindowAttention::<f64>::new(&mut init, 4, 2, 2);
    let x: T64 = init.normal(&[1, 4, 4, 4], 0.0, 1.0);
    module_check(&attn, seed, 4, |m| project(&m.forward_grid(&x, 1)?, seed))
}

fn backbone_case(seed: u64) -> Result<GradCheckReport> {
    let mut init = Initializer::new(seed);
    let bb = SwinBackbone::<f64>::new(&mut init, &tiny_swin())?;
    let x: T64 = init.uniform(&[1, 3, 16, 16], 1.0);
    module_check(&bb, seed, 2, |m| {
        let pyr = m.forward(&x)?;
        let mut total = Tensor::scalar(0.0);
        for (i, l) in pyr.levels.iter().enumerate() {
            total = total.add(&project(&l.tokens, seed + i as u64)?)?;
        }
        Ok(total)
    })
}

fn adapter_case(seed: u64) -> Result<GradCheckReport> {
    let mut init = Initializer::new(seed);
    let tap = TapConfig { stage: 0, channels: Some(3), norm: NormKind::Layer };
    let mut a = Adapter::<f64>::new(&mut init, 5, &tap);
    // move LayerNorm off its identity init so its scale and shift matter
    let ps: Vec<T64> = a.params().iter().map(|p| p.add(&init.normal(p.shape(), 0.0, 0.3)).expect("same shape")).collect();
    a.set_params(&ps)?;
    let grid = TokenGrid::new(init.normal(&[2, 3, 3, 5], 0.0, 1.0))?;
    module_check(&a, seed, 4, |m| project(&m.forward(&grid)?, seed))
}

#[derive(Clone)]
struct NeckHead {
    neck: PanNeck<f64>,
    head: DetectHead<f64>,
}

impl Module<f64> for NeckHead {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &T64)) {
        self.neck.visit(&crate::nn::join(prefix, "neck"), f);
        self.head.visit(&crate::nn::join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut T64)) {
        self.neck.visit_mut(&crate::nn::join(prefix, "neck"), f);
        self.head.visit_mut(&crate::nn::join(prefix, "head"), f);
    }
}

fn neck_head_case(seed: u64) -> Result<GradCheckReport> {
    let cfg = ModelConfig::toy(VariantSpec::TP5, 2)?;
    let mut init = Initializer::new(seed);
    let levels = cfg.level_channels();
    let neck = PanNeck::new(&mut init, &levels, &cfg.neck)?;
    let head = DetectHead::new(&mut init, &neck.out_channels(), &cfg.head)?;
    let nh = NeckHead { neck, head };
    let inputs: Vec<T64> = levels.iter().enumerate().map(|(l, &c)| init.normal(&[1, c, 8 >> l, 8 >> l], 0.0, 1.0)).collect();
    module_check(&nh, seed, 2, |m| {
        let outs = m.head.forward(&m.neck.forward(&inputs)?)?;
        let mut total = Tensor::scalar(0.0);
        for (i, o) in outs.iter().enumerate() {
            total = total.add(&project(o, seed + i as u64)?)?;
        }
        Ok(total)
    })
}

fn loss_case(seed: u64) -> Result<GradCheckReport> {
    let cfg = ModelConfig::toy(VariantSpec::TP5, 2)?;
    let model = YotoR::<f64>::build(&cfg, seed)?;
    let mut init = Initializer::new(seed);
    let x: T64 = init.uniform(&[1, 3, 64, 64], 1.0).add_scalar(1.0).scale(0.5);
    let mut r = rng(seed);
    let targets: Vec<TargetBox> = (0..2)
        .map(|class| {
            let (w, h) = (r.random_range(10.0..30.0), r.random_range(10.0..30.0));
            let (x1, y1) = (r.random_range(0.0..64.0 - w), r.random_range(0.0..64.0 - h));
            TargetBox { image: 0, class, bbox: [x1, y1, x1 + w, y1 + h] }
        })
        .collect();
    let anchors: AnchorSet = cfg.head.anchors.clone();
    let tc = TrainConfig::default();
    let grids: Vec<(usize, usize)> = anchors.strides.iter().map(|&s| (64 / s, 64 / s)).collect();
    let assignment = assign_targets(&targets, &anchors, &grids, tc.anchor_t);
    // the stop-gradient terms are held at their values for the unperturbed model
    let (_, frozen) = compute_loss_with(&model.forward(&x)?, &assignment, &anchors, 2, &tc, None)?;
    module_check(&model, seed, 1, |m| Ok(compute_loss_with(&m.forward(&x)?, &assignment, &anchors, 2, &tc, Some(&frozen))?.0.total))
}

fn components() -> Vec<Case> {
    vec![
        Case { name: "window_attention", run: attention_case },
        Case { name: "backbone", run: backbone_case },
        Case { name: "adapter", run: adapter_case },
        Case { name: "neck_head", run: neck_head_case },
        Case { name: "total_loss", run: loss_case },
    ]
}

/// Every op case followed by the component cases.
pub fn cases() -> Vec<Case> {
    let mut c = ops();
    c.extend(components());
    c
}

/// Runs the cases whose name contains `filter` (all when `None`) over seeds `0..seeds`.
pub fn run(seeds: usize, filter: Option<&str>) -> Result<Vec<CaseResult>> {
    let mut out = Vec::new();
    for case in cases().into_iter().filter(|c| filter.is_none_or(|f| c.name.contains(f))) {
        let mut report = GradCheckReport::default();
        for seed in 0..seeds as u64 {
            report.merge(&(case.run)(seed)?);
        }
        out.push(CaseResult {
            name: case.name.to_string(),
            seeds,
            checked: report.checked,
            max_rel_error: report.max_rel_error,
            passed: report.passed(TOLERANCE),
        });
    }
    Ok(out)
}

pub fn to_csv(results: &[CaseResult]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["case", "seeds", "checked", "max_rel_error", "passed"])?;
    for r in results {
        w.write_record([r.name.clone(), r.seeds.to_string(), r.checked.to_string(), format!("{:.3e}", r.max_rel_error), r.passed.to_string()])?;
    }
    let bytes = w.into_inner().map_err(|e| crate::Error::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("utf-8"))
}
