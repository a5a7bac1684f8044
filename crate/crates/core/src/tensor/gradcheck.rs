//! Central finite-difference verification of recorded gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{no_grad, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Finite-difference step.
    pub step: f64,
    /// Lower bound on the relative-error denominator, so coordinates whose
    /// true gradient is ~0 are compared on an absolute scale.
    pub floor: f64,
    /// Check at most this many coordinates per parameter (sampled); `None` checks all.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-6,
            floor: 1e-6,
            max_coords: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    /// `(parameter index, flat coordinate)` of the worst relative error.
    pub worst: Option<(usize, usize)>,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tol
    }

    pub fn merge(&mut self, other: &GradCheckReport) {
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
        self.max_abs_error = self.max_abs_error.max(other.max_abs_error);
        self.checked += other.checked;
    }
}

/// Compares the gradient recorded through `f` against `(f(θ+h) − f(θ−h)) / 2h`
/// for every (or a sampled subset of) coordinate of every parameter.
pub fn grad_check<F>(f: F, params: &[Tensor<f64>], cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let leaves: Vec<Tensor<f64>> = params.iter().map(|p| p.detach().requires_grad()).collect();
    let y = f(&leaves)?;
    if y.numel() != 1 {
        return Err(Error::dim("grad_check", "function must return a scalar"));
    }
    let grads = y.backward()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradCheckReport::default();
    for (pi, leaf) in leaves.iter().enumerate() {
        let analytic = grads.get_tensor(leaf).to_vec();
        let n = leaf.numel();
        let coords: Vec<usize> = match cfg.max_coords {
            Some(k) if k < n => {
                let mut c = sample(&mut rng, n, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        for &ci in &coords {
            let eval = |delta: f64| -> Result<f64> {
                let inputs: Vec<Tensor<f64>> = leaves
                    .iter()
                    .enumerate()
                    .map(|(j, l)| {
                        if j == pi {
                            let mut v = l.to_vec();
                            v[ci] += delta;
                            Tensor::new(l.shape(), v).expect("same shape")
                        } else {
                            l.detach()
                        }
                    })
                    .collect();
                no_grad(|| f(&inputs)).map(|t| t.item())
            };
            let numeric = (eval(cfg.step)? - eval(-cfg.step)?) / (2.0 * cfg.step);
            let a = analytic[ci];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(cfg.floor);
            if !rel.is_finite() {
                return Err(Error::dim("grad_check", format!("non-finite comparison at param {pi} coord {ci}")));
            }
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst = Some((pi, ci));
            }
        }
    }
    Ok(report)
}
