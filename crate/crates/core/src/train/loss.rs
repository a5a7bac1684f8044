use serde::Serialize;

use super::{Assignment, BoxLoss, ObjTarget, TrainConfig};
use crate::error::{Error, Result};
use crate::neck::AnchorSet;
use crate::tensor::{no_grad, Element, Tensor};

const EPS: f64 = 1e-7;

/// Loss terms after their gains, plus the raw objectness BCE per level.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct LossComponents {
    pub box_loss: f64,
    pub obj: f64,
    pub cls: f64,
    pub total: f64,
    /// Mean objectness BCE of each level before balance and gain.
    pub obj_per_level: Vec<f64>,
}

pub struct LossOutput<T: Element> {
    pub total: Tensor<T>,
    pub components: LossComponents,
}

fn c<T: Element>(v: f64) -> T {
    T::of_f64(v)
}

fn col<T: Element>(x: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
    x.slice(1, k, 1)
}

/// IoU, or CIoU, of `[n, 4]` center-size boxes; returns `[n, 1]`.
///
/// The CIoU trade-off weight `α = v / (v − IoU + 1)` is treated as a constant.
pub fn box_iou<T: Element>(p: &Tensor<T>, t: &Tensor<T>, kind: BoxLoss) -> Result<Tensor<T>> {
    box_iou_alpha(p, t, kind, None).map(|(iou, _)| iou)
}

/// [`box_iou`] that also returns the CIoU aspect weight α (empty for plain IoU),
/// or uses the given α instead of computing it.
fn box_iou_alpha<T: Element>(p: &Tensor<T>, t: &Tensor<T>, kind: BoxLoss, alpha: Option<&[f64]>) -> Result<(Tensor<T>, Vec<f64>)> {
    let half = c::<T>(0.5);
    let corners = |b: &Tensor<T>| -> Result<[Tensor<T>; 4]> {
        let (x, y, w, h) = (col(b, 0)?, col(b, 1)?, col(b, 2)?, col(b, 3)?);
        let (hw, hh) = (w.scale(half), h.scale(half));
        Ok([x.sub(&hw)?, y.sub(&hh)?, x.add(&hw)?, y.add(&hh)?])
    };
    let [px1, py1, px2, py2] = corners(p)?;
    let [tx1, ty1, tx2, ty2] = corners(t)?;
    let iw = px2.minimum(&tx2)?.sub(&px1.maximum(&tx1)?)?.clamp_min(T::zero());
    let ih = py2.minimum(&ty2)?.sub(&py1.maximum(&ty1)?)?.clamp_min(T::zero());
    let inter = iw.mul(&ih)?;
    let eps = c::<T>(EPS);
    let (w1, h1) = (px2.sub(&px1)?, py2.sub(&py1)?.add_scalar(eps));
    let (w2, h2) = (tx2.sub(&tx1)?, ty2.sub(&ty1)?.add_scalar(eps));
    let union = w1.mul(&h1)?.add(&w2.mul(&h2)?)?.sub(&inter)?.add_scalar(eps);
    let iou = inter.div(&union)?;
    if kind == BoxLoss::Iou {
        return Ok((iou, Vec::new()));
    }
    let cw = px2.maximum(&tx2)?.sub(&px1.minimum(&tx1)?)?;
    let ch = py2.maximum(&ty2)?.sub(&py1.minimum(&ty1)?)?;
    let c2 = cw.square().add(&ch.square())?.add_scalar(eps);
    let dx = tx1.add(&tx2)?.sub(&px1)?.sub(&px2)?;
    let dy = ty1.add(&ty2)?.sub(&py1)?.sub(&py2)?;
    let rho2 = dx.square().add(&dy.square())?.scale(c::<T>(0.25));
    let dv = w2.div(&h2)?.atan().sub(&w1.div(&h1)?.atan())?;
    let v = dv.square().scale(c::<T>(4.0 / (std::f64::consts::PI * std::f64::consts::PI)));
    let alpha = match alpha {
        Some(a) => Tensor::from_f64(v.shape(), a)?,
        None => no_grad(|| v.div(&v.sub(&iou)?.add_scalar(c::<T>(1.0 + EPS))))?.detach(),
    };
    let ciou = iou.sub(&rho2.div(&c2)?.add(&v.mul(&alpha)?)?)?;
    Ok((ciou, alpha.to_f64_vec()))
}

/// Elementwise `−[pw·y·ln σ(x) + (1−y)·ln(1−σ(x))]` for constant targets `y`.
pub fn bce_with_logits<T: Element>(x: &Tensor<T>, y: &Tensor<T>, pos_weight: f64) -> Result<Tensor<T>> {
    let one_minus_y = y.neg().add_scalar(T::one());
    x.neg().softplus().mul(&y.scale(c::<T>(pos_weight)))?.add(&x.softplus().mul(&one_minus_y)?)
}

/// Box, objectness and class loss over raw head outputs `[B, na·(5+nc), H, W]`.
///
/// `total = B · (box_gain·Σ_l mean(1−CIoU) + obj_gain·Σ_l balance_l·mean BCE_obj + cls_gain·Σ_l mean BCE_cls)`;
/// the class term is skipped when `nc == 1`.
pub fn compute_loss<T: Element>(
    outputs: &[Tensor<T>],
    assignment: &Assignment,
    anchors: &AnchorSet,
    nc: usize,
    cfg: &TrainConfig,
) -> Result<LossOutput<T>> {
    compute_loss_with(outputs, assignment, anchors, nc, cfg, None).map(|(l, _)| l)
}

/// Values the loss uses without differentiating through them: the CIoU α and
/// the objectness target of each assigned prediction, per level.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DetachedTerms {
    pub alpha: Vec<Vec<f64>>,
    pub obj_target: Vec<Vec<f64>>,
}

/// [`compute_loss`], optionally with the detached terms taken from `detached`
/// (typically captured at another parameter point) rather than recomputed.
/// Returns the terms actually used. Holding them fixed makes the loss a plain
/// function of the outputs whose derivative is exactly the recorded gradient.
pub fn compute_loss_with<T: Element>(
    outputs: &[Tensor<T>],
    assignment: &Assignment,
    anchors: &AnchorSet,
    nc: usize,
    cfg: &TrainConfig,
    detached: Option<&DetachedTerms>,
) -> Result<(LossOutput<T>, DetachedTerms)> {
    let mut used = DetachedTerms::default();
    if let Some(d) = detached {
        let fits = |v: &Vec<Vec<f64>>, alpha: bool| {
            v.len() == assignment.levels.len()
                && v.iter().zip(&assignment.levels).all(|(x, a)| x.len() == a.len() || (alpha && x.is_empty() && cfg.box_loss == BoxLoss::Iou))
        };
        if !fits(&d.alpha, true) || !fits(&d.obj_target, false) {
            return Err(Error::dim("loss", "detached terms do not match the assignment"));
        }
    }
    cfg.validate(outputs.len())?;
    if assignment.levels.len() != outputs.len() || anchors.levels() != outputs.len() {
        return Err(Error::dim("loss", format!("{} outputs, {} assigned levels", outputs.len(), assignment.levels.len())));
    }
    let na = anchors.na();
    let no = 5 + nc;
    let bs = outputs[0].dim(0);
    let mut lbox = Tensor::<T>::scalar(T::zero());
    let mut lobj = Tensor::<T>::scalar(T::zero());
    let mut lcls = Tensor::<T>::scalar(T::zero());
    let mut obj_per_level = Vec::new();
    for (l, raw) in outputs.iter().enumerate() {
        if raw.rank() != 4 || raw.dim(1) != na * no || raw.dim(0) != bs {
            return Err(Error::dim("loss", format!("level {l} output {:?}", raw.shape())));
        }
        let (h, w) = (raw.dim(2), raw.dim(3));
        let mut tobj = vec![T::zero(); bs * na * h * w];
        let assigned = &assignment.levels[l];
        if !assigned.is_empty() {
            let n = assigned.len();
            let mut map = Vec::with_capacity(n * no);
            for e in assigned {
                if e.image >= bs || e.gi >= w || e.gj >= h || e.anchor >= na {
                    return Err(Error::dim("loss", format!("assignment outside level {l}: {e:?}")));
                }
                for k in 0..no {
                    map.push(((e.image * na * no + e.anchor * no + k) * h + e.gj) * w + e.gi);
                }
            }
            let ps = raw.index_map(vec![n, no], map)?;
            let two = c::<T>(2.0);
            let pxy = ps.slice(1, 0, 2)?.sigmoid().scale(two).add_scalar(c::<T>(-0.5));
            let anchor_wh: Vec<f64> = assigned.iter().flat_map(|e| e.anchor_wh).collect();
            let pwh = ps.slice(1, 2, 2)?.sigmoid().scale(two).square().mul(&Tensor::from_f64(&[n, 2], &anchor_wh)?)?;
            let pbox = Tensor::concat(&[pxy, pwh], 1)?;
            let tbox: Vec<f64> = assigned.iter().flat_map(|e| e.tbox).collect();
            let given_alpha = detached.map(|d| d.alpha[l].as_slice());
            let (iou, alpha) = box_iou_alpha(&pbox, &Tensor::from_f64(&[n, 4], &tbox)?, cfg.box_loss, given_alpha)?;
            lbox = lbox.add(&iou.neg().add_scalar(T::one()).mean())?;
            let targets: Vec<f64> = match detached {
                Some(d) => d.obj_target[l].clone(),
                None => iou
                    .data()
                    .iter()
                    .map(|v| match cfg.obj_target {
                        ObjTarget::Iou => v.as_f64().max(0.0),
                        ObjTarget::Hard => 1.0,
                    })
                    .collect(),
            };
            // later assignments to the same slot overwrite earlier ones
            for (e, &t) in assigned.iter().zip(&targets) {
                tobj[((e.image * na + e.anchor) * h + e.gj) * w + e.gi] = T::of_f64(t);
            }
            used.alpha.push(alpha);
            used.obj_target.push(targets);
            if nc > 1 {
                let mut onehot = vec![0.0; n * nc];
                for (i, e) in assigned.iter().enumerate() {
                    onehot[i * nc + e.class] = 1.0;
                }
                let logits = ps.slice(1, 5, nc)?;
                let bce = bce_with_logits(&logits, &Tensor::from_f64(&[n, nc], &onehot)?, cfg.cls_pos_weight)?;
                lcls = lcls.add(&bce.mean())?;
            }
        }
        if assigned.is_empty() {
            used.alpha.push(Vec::new());
            used.obj_target.push(Vec::new());
        }
        let obj_channels: Vec<usize> = (0..na).map(|a| a * no + 4).collect();
        let obj_logits = raw.select(1, &obj_channels)?;
        let level_obj = bce_with_logits(&obj_logits, &Tensor::new(&[bs, na, h, w], tobj)?, cfg.obj_pos_weight)?.mean();
        obj_per_level.push(level_obj.item().as_f64());
        lobj = lobj.add(&level_obj.scale(c::<T>(cfg.level_balance[l])))?;
    }
    let lbox = lbox.scale(c::<T>(cfg.box_gain));
    let lobj = lobj.scale(c::<T>(cfg.obj_gain));
    let lcls = lcls.scale(c::<T>(cfg.cls_gain));
    let total = lbox.add(&lobj)?.add(&lcls)?.scale(c::<T>(bs as f64));
    let components = LossComponents {
        box_loss: lbox.item().as_f64(),
        obj: lobj.item().as_f64(),
        cls: lcls.item().as_f64(),
        total: total.item().as_f64(),
        obj_per_level,
    };
    Ok((LossOutput { total, components }, used))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::{assign_targets, TargetBox};

    fn logit(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    #[test]
    fn iou_and_ciou_basics() {
        let a = Tensor::<f64>::from_f64(&[2, 4], &[1.0, 1.0, 2.0, 2.0, 0.0, 0.0, 1.0, 1.0]).unwrap();
        let b = Tensor::<f64>::from_f64(&[2, 4], &[1.0, 1.0, 2.0, 2.0, 5.0, 5.0, 1.0, 1.0]).unwrap();
        let iou = box_iou(&a, &b, BoxLoss::Iou).unwrap().to_vec();
        assert!((iou[0] - 1.0).abs() < 1e-6 && iou[1] == 0.0);
        let ciou = box_iou(&a, &b, BoxLoss::Ciou).unwrap().to_vec();
        assert!((ciou[0] - 1.0).abs() < 1e-6);
        // disjoint: −ρ²/c² with ρ² = 50 and c² = 72
        assert!((ciou[1] + 50.0 / 72.0).abs() < 1e-6, "{}", ciou[1]);
    }

    #[test]
    fn zero_logits_give_ln2_objectness() {
        let anchors = AnchorSet { anchors: vec![vec![[8.0, 8.0]]], strides: vec![8] };
        let t = [TargetBox { image: 0, class: 0, bbox: [0.0, 0.0, 8.0, 8.0] }];
        let assignment = assign_targets(&t, &anchors, &[(4, 4)], 4.0);
        let cfg = TrainConfig { level_balance: vec![1.0], ..TrainConfig::default() };
        let out = compute_loss(&[Tensor::<f64>::zeros(&[1, 6, 4, 4])], &assignment, &anchors, 1, &cfg).unwrap();
        assert!((out.components.obj_per_level[0] - 2f64.ln()).abs() < 1e-12);
        assert!(out.components.total > 0.0);
    }

    #[test]
    fn perfect_prediction_has_near_zero_loss() {
        let anchors = AnchorSet { anchors: vec![vec![[8.0, 8.0], [16.0, 12.0]]], strides: vec![8] };
        let nc = 3;
        let no = 5 + nc;
        let targets = [
            TargetBox { image: 0, class: 2, bbox: [5.0, 6.0, 18.0, 17.0] },
            TargetBox { image: 0, class: 0, bbox: [30.0, 33.0, 41.0, 40.0] },
        ];
        let assignment = assign_targets(&targets, &anchors, &[(8, 8)], 4.0);
        // each target's cells are distinct here, so every positive can be exact
        let mut cells: Vec<_> = assignment.levels[0].iter().map(|e| (e.anchor, e.gi, e.gj)).collect();
        cells.sort();
        cells.dedup();
        assert_eq!(cells.len(), assignment.levels[0].len());
        let mut raw = vec![-40.0; 2 * no * 64];
        for e in &assignment.levels[0] {
            let at = |k: usize| ((e.anchor * no + k) * 8 + e.gj) * 8 + e.gi;
            raw[at(0)] = logit((e.tbox[0] + 0.5) / 2.0);
            raw[at(1)] = logit((e.tbox[1] + 0.5) / 2.0);
            raw[at(2)] = logit((e.tbox[2] / e.anchor_wh[0]).sqrt() / 2.0);
            raw[at(3)] = logit((e.tbox[3] / e.anchor_wh[1]).sqrt() / 2.0);
            raw[at(4)] = 40.0;
            raw[at(5 + e.class)] = 40.0;
        }
        let cfg = TrainConfig { level_balance: vec![4.0], ..TrainConfig::default() };
        let out = compute_loss(&[Tensor::<f64>::new(&[1, 2 * no, 8, 8], raw).unwrap()], &assignment, &anchors, nc, &cfg).unwrap();
        // the eps terms inside the IoU keep positives' targets a hair under 1
        assert!(out.components.total < 1e-4, "{:?}", out.components);
    }
}
