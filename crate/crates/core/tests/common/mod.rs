//! Straight-line reference implementations shared by the property tests and
//! the acceptance suite. None of these call the code they check.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use yotor::detect::{decode_level, iou, CocoResult, Detection};
use yotor::eval::{evaluate_matrix, Annotation, Category, CocoDataset, EvalConfig, GroundTruth, ImageInfo};
use yotor::neck::AnchorSet;
use yotor::swin::{SwinConfig, WindowAttention};
use yotor::tensor::init::Initializer;
use yotor::train::TargetBox;
use yotor::Tensor;

// ---------------------------------------------------------------- NMS

/// Quadratic reference: walk every pair, no buckets, no early exit.
pub fn brute_nms(dets: &[Detection], iou_t: f64, score_t: f64, max_det: usize) -> Vec<Detection> {
    let mut idx: Vec<usize> = (0..dets.len()).collect();
    // insertion sort, stable by construction
    for i in 1..idx.len() {
        let mut j = i;
        while j > 0 && dets[idx[j]].score > dets[idx[j - 1]].score {
            idx.swap(j, j - 1);
            j -= 1;
        }
    }
    let mut alive: Vec<bool> = idx.iter().map(|&i| dets[i].score > score_t).collect();
    for a in 0..idx.len() {
        if !alive[a] {
            continue;
        }
        for b in a + 1..idx.len() {
            let (da, db) = (&dets[idx[a]], &dets[idx[b]]);
            if alive[b] && da.class == db.class && iou(&da.bbox, &db.bbox) >= iou_t {
                alive[b] = false;
            }
        }
    }
    idx.iter().zip(alive).filter(|(_, k)| *k).map(|(&i, _)| dets[i].clone()).take(max_det).collect()
}

pub fn random_detection(rng: &mut ChaCha8Rng) -> Detection {
    let (x, y) = (rng.random_range(0.0..100.0), rng.random_range(0.0..100.0));
    let (w, h) = (rng.random_range(1.0..40.0), rng.random_range(1.0..40.0));
    Detection {
        bbox: [x, y, x + w, y + h],
        // coarse scores so ties actually happen
        score: rng.random_range(0..20) as f64 / 20.0,
        class: rng.random_range(0..3),
    }
}

/// One fuzzed NMS case: (detections, IoU threshold, max_det).
pub fn nms_case(seed: u64) -> (Vec<Detection>, f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(0..60);
    let dets = (0..n).map(|_| random_detection(&mut rng)).collect();
    (dets, rng.random_range(0.1..0.9), rng.random_range(1..50))
}

// ---------------------------------------------------------------- decode

/// Largest relative error of `decode_level` against per-cell scalar formulas.
pub fn decode_max_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (na, nc) = (rng.random_range(1..4), rng.random_range(1..6));
    let (h, w) = (rng.random_range(1..7), rng.random_range(1..7));
    let stride = [8, 16, 32, 64][rng.random_range(0..4)];
    let no = 5 + nc;
    let anchors: Vec<[f64; 2]> = (0..na).map(|_| [rng.random_range(4.0..200.0), rng.random_range(4.0..200.0)]).collect();
    let vals: Vec<f32> = (0..2 * na * no * h * w).map(|_| rng.random_range(-6.0..6.0)).collect();
    let raw = Tensor::<f32>::new(&[2, na * no, h, w], vals.clone()).unwrap();
    let out = decode_level(&raw, &anchors, stride, nc, 0).unwrap();
    let sig = |x: f32| 1.0 / (1.0 + (-(x as f64)).exp());
    let mut worst = 0.0f64;
    for n in 0..2 {
        let mut k = 0;
        for a in 0..na {
            for i in 0..h {
                for j in 0..w {
                    let t = |c: usize| vals[((n * na * no + a * no + c) * h + i) * w + j];
                    let c = &out[n][k];
                    k += 1;
                    let mut expect = vec![
                        (2.0 * sig(t(0)) - 0.5 + j as f64) * stride as f64,
                        (2.0 * sig(t(1)) - 0.5 + i as f64) * stride as f64,
                        (2.0 * sig(t(2))).powi(2) * anchors[a][0],
                        (2.0 * sig(t(3))).powi(2) * anchors[a][1],
                        sig(t(4)),
                    ];
                    expect.extend((0..nc).map(|q| sig(t(5 + q))));
                    let mut got = vec![c.center[0], c.center[1], c.size[0], c.size[1], c.objectness];
                    got.extend(c.class_probs.iter().copied());
                    assert_eq!(got.len(), expect.len());
                    for (g, e) in got.iter().zip(&expect) {
                        worst = worst.max((g - e).abs() / e.abs().max(1.0));
                    }
                }
            }
        }
        assert_eq!(k, out[n].len());
    }
    worst
}

// ---------------------------------------------------------------- evaluator

fn random_box(rng: &mut ChaCha8Rng) -> [f64; 4] {
    // log-uniform sizes so every area bucket gets traffic
    let w = 2f64.powf(rng.random_range(1.0..7.5));
    let h = w * rng.random_range(0.5..2.0);
    [rng.random_range(0.0..200.0), rng.random_range(0.0..200.0), w, h]
}

fn jitter(rng: &mut ChaCha8Rng, b: [f64; 4], amount: f64) -> [f64; 4] {
    let j = |v: f64, s: f64, rng: &mut ChaCha8Rng| v + rng.random_range(-amount..amount) * s;
    [j(b[0], b[2], rng), j(b[1], b[3], rng), (b[2] * (1.0 + rng.random_range(-amount..amount))).max(0.5), (b[3] * (1.0 + rng.random_range(-amount..amount))).max(0.5)]
}

pub fn micro_dataset(seed: u64) -> (CocoDataset, Vec<CocoResult>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_img = rng.random_range(1..5u64);
    let n_cat = rng.random_range(1..4u64);
    let mut ds = CocoDataset {
        images: (0..n_img).map(|i| ImageInfo { id: 10 + 3 * i, width: 300, height: 300, file_name: String::new() }).collect(),
        annotations: Vec::new(),
        categories: (0..n_cat).map(|c| Category { id: 1 + 2 * c, name: format!("c{c}") }).collect(),
    };
    let mut dets = Vec::new();
    let coarse = rng.random_bool(0.3);
    let score = |rng: &mut ChaCha8Rng| if coarse { rng.random_range(1..5) as f64 / 5.0 } else { rng.random_range(0.0..1.0) };
    for img in ds.images.clone() {
        for cat in ds.categories.clone() {
            for _ in 0..rng.random_range(0..5) {
                let bbox = random_box(&mut rng);
                let id = ds.annotations.len() as u64 + 1;
                ds.annotations.push(Annotation { id, image_id: img.id, category_id: cat.id, bbox, area: None, iscrowd: rng.random_bool(0.1) as u8 });
                for _ in 0..rng.random_range(0..3) {
                    let s = score(&mut rng);
                    dets.push(CocoResult { image_id: img.id, category_id: cat.id, bbox: jitter(&mut rng, bbox, 0.3), score: s });
                }
            }
            for _ in 0..rng.random_range(0..4) {
                let s = score(&mut rng);
                dets.push(CocoResult { image_id: img.id, category_id: cat.id, bbox: random_box(&mut rng), score: s });
            }
        }
    }
    (ds, dets)
}

fn xywh_iou(d: &[f64; 4], g: &[f64; 4], crowd: bool) -> f64 {
    let ix = ((d[0] + d[2]).min(g[0] + g[2]) - d[0].max(g[0])).max(0.0);
    let iy = ((d[1] + d[3]).min(g[1] + g[3]) - d[1].max(g[1])).max(0.0);
    let inter = ix * iy;
    let union = if crowd { d[2] * d[3] } else { d[2] * d[3] + g[2] * g[3] - inter };
    if inter == 0.0 {
        0.0
    } else {
        inter / union
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Outcome {
    Tp,
    Fp,
    Ignored,
}

/// One (threshold, category, area, cap) cell at a time: `(AP, recall)`, or
/// `None` when the cell has no ground truth.
pub fn brute_cell(ds: &CocoDataset, dets: &[CocoResult], t: f64, cat: u64, lo: f64, hi: f64, cap: usize, recall_grid: &[f64]) -> Option<(f64, f64)> {
    let out = |a: f64| a < lo || a > hi;
    let mut images: Vec<u64> = ds.images.iter().map(|i| i.id).collect();
    images.sort();
    let mut pooled: Vec<(f64, Outcome)> = Vec::new();
    let mut positives = 0usize;
    for &img in &images {
        let gts: Vec<&Annotation> = ds.annotations.iter().filter(|a| a.image_id == img && a.category_id == cat).collect();
        let ignore: Vec<bool> = gts.iter().map(|g| g.iscrowd == 1 || out(g.bbox[2] * g.bbox[3])).collect();
        positives += ignore.iter().filter(|&&i| !i).count();
        // non-ignored GTs first, original order otherwise
        let order: Vec<usize> = (0..gts.len()).filter(|&g| !ignore[g]).chain((0..gts.len()).filter(|&g| ignore[g])).collect();
        let mut ds_img: Vec<&CocoResult> = dets.iter().filter(|d| d.image_id == img && d.category_id == cat).collect();
        ds_img.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
        ds_img.truncate(cap);
        let mut taken = vec![false; gts.len()];
        for d in ds_img {
            let free = |g: usize| (!taken[g] || gts[g].iscrowd == 1) && xywh_iou(&d.bbox, &gts[g].bbox, gts[g].iscrowd == 1) >= t;
            // the best real GT wins; otherwise the best ignored one; later entries win ties
            let pick = |want_ignored: bool| {
                let mut best: Option<(usize, f64)> = None;
                for &g in &order {
                    if ignore[g] == want_ignored && free(g) {
                        let v = xywh_iou(&d.bbox, &gts[g].bbox, gts[g].iscrowd == 1);
                        if best.is_none_or(|(_, b)| v >= b) {
                            best = Some((g, v));
                        }
                    }
                }
                best.map(|(g, _)| g)
            };
            let outcome = match pick(false).or_else(|| pick(true)) {
                Some(g) => {
                    taken[g] = true;
                    if ignore[g] {
                        Outcome::Ignored
                    } else {
                        Outcome::Tp
                    }
                }
                None if out(d.bbox[2] * d.bbox[3]) => Outcome::Ignored,
                None => Outcome::Fp,
            };
            pooled.push((d.score, outcome));
        }
    }
    if positives == 0 {
        return None;
    }
    pooled.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut curve = Vec::new();
    for (_, o) in &pooled {
        match o {
            Outcome::Tp => tp += 1.0,
            Outcome::Fp => fp += 1.0,
            Outcome::Ignored => {}
        }
        curve.push((tp / positives as f64, if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 }));
    }
    let ap = recall_grid
        .iter()
        .map(|&r| curve.iter().filter(|c| c.0 >= r).map(|c| c.1).fold(0.0, f64::max))
        .sum::<f64>()
        / recall_grid.len() as f64;
    Some((ap, curve.last().map_or(0.0, |c| c.0)))
}

/// Compares every cell of the evaluator's matrix on one micro-dataset with
/// `brute_cell`. Returns the largest AP/recall difference and the number of
/// defined cells; a defined/undefined mismatch counts as infinite error.
pub fn evaluator_max_error(seed: u64) -> (f64, usize) {
    let cfg = EvalConfig::default();
    let (ds, dets) = micro_dataset(seed);
    let gt = GroundTruth::from_dataset(&ds).unwrap();
    let mx = evaluate_matrix(&gt, &dets, &cfg).unwrap();
    let (mut worst, mut cells) = (0.0f64, 0);
    let nr = cfg.recall_thresholds.len();
    for (t, &thr) in cfg.iou_thresholds.iter().enumerate() {
        for (k, &cat) in gt.category_ids.iter().enumerate() {
            for (a, area) in cfg.area_ranges.iter().enumerate() {
                for (m, &cap) in cfg.max_dets.iter().enumerate() {
                    let want = brute_cell(&ds, &dets, thr, cat, area.lo, area.hi, cap, &cfg.recall_thresholds);
                    let ap = (0..nr).map(|r| mx.precision_at(t, r, k, a, m)).sum::<f64>() / nr as f64;
                    let rc = mx.recall_at(t, k, a, m);
                    match want {
                        None if (ap, rc) == (-1.0, -1.0) => {}
                        None => worst = f64::INFINITY,
                        Some((wa, wr)) => {
                            worst = worst.max((ap - wa).abs()).max((rc - wr).abs());
                            cells += 1;
                        }
                    }
                }
            }
        }
    }
    (worst, cells)
}

// ---------------------------------------------------------------- shifted windows

/// Attention of every real token over the tokens sharing its shifted window,
/// laid out on the unshifted grid. Along each axis the shifted partition has
/// boundaries at `s, s+M, s+2M, …`, so the block of index `i` is
/// `(i + M − s) / M`. Padding tokens never act as keys. Input `[B, H, W, C]`.
pub fn shifted_window_oracle(attn: &WindowAttention<f32>, x: &Tensor<f32>, shift: usize) -> Vec<f64> {
    let (b, h, w, c) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let (m, heads) = (attn.window, attn.heads);
    let d = c / heads;
    let xs: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
    let f = |t: &Tensor<f32>| t.data().iter().map(|&v| v as f64).collect::<Vec<f64>>();
    let (wq, bq) = (f(&attn.qkv.weight), f(attn.qkv.bias.as_ref().unwrap()));
    let (wp, bp) = (f(&attn.proj.weight), f(attn.proj.bias.as_ref().unwrap()));
    let table = f(&attn.rel_bias);
    // weight layout [in, out]
    let linear = |v: &[f64], wt: &[f64], bias: &[f64], n_out: usize| -> Vec<f64> {
        (0..n_out).map(|o| bias[o] + v.iter().enumerate().map(|(i, x)| x * wt[i * n_out + o]).sum::<f64>()).collect()
    };
    let block = |i: usize| (i + m - shift) / m;
    let mut out = vec![0.0; b * h * w * c];
    for n in 0..b {
        let tok = |i: usize, j: usize| &xs[((n * h + i) * w + j) * c..((n * h + i) * w + j + 1) * c];
        let qkv: Vec<Vec<f64>> = (0..h * w).map(|p| linear(tok(p / w, p % w), &wq, &bq, 3 * c)).collect();
        for p in 0..h * w {
            let (i, j) = (p / w, p % w);
            let keys: Vec<usize> = (0..h * w).filter(|&k| block(k / w) == block(i) && block(k % w) == block(j)).collect();
            let mut mixed = vec![0.0; c];
            for hd in 0..heads {
                let q = &qkv[p][hd * d..(hd + 1) * d];
                let logits: Vec<f64> = keys
                    .iter()
                    .map(|&k| {
                        let kv = &qkv[k][c + hd * d..c + (hd + 1) * d];
                        let dot: f64 = q.iter().zip(kv).map(|(a, b)| a * b).sum::<f64>() / (d as f64).sqrt();
                        let (dy, dx) = (i + m - 1 - k / w, j + m - 1 - k % w);
                        dot + table[(dy * (2 * m - 1) + dx) * heads + hd]
                    })
                    .collect();
                let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
                let z: f64 = e.iter().sum();
                for (&k, ek) in keys.iter().zip(&e) {
                    for t in 0..d {
                        mixed[hd * d + t] += ek / z * qkv[k][2 * c + hd * d + t];
                    }
                }
            }
            let y = linear(&mixed, &wp, &bp, c);
            out[p * c + n * h * w * c..(p + 1) * c + n * h * w * c].copy_from_slice(&y);
        }
    }
    out
}

/// One random (grid, window, shift) case at f32; returns max |Δ| against the oracle.
pub fn shifted_window_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.random_range(2..8);
    let shift = rng.random_range(0..m);
    let heads = rng.random_range(1..4);
    let c = heads * rng.random_range(1..5);
    let (h, w) = (rng.random_range(1..3 * m + 2), rng.random_range(1..3 * m + 2));
    let b = rng.random_range(1..3);
    let mut init = Initializer::new(seed);
    let mut attn = WindowAttention::<f32>::new(&mut init, c, heads, m);
    attn.rel_bias = init.normal(attn.rel_bias.shape(), 0.0, 0.5);
    let x = init.normal::<f32>(&[b, h, w, c], 0.0, 1.0);
    let got = attn.forward_grid(&x, shift).unwrap();
    let want = shifted_window_oracle(&attn, &x, shift);
    got.data().iter().zip(&want).map(|(&g, &e)| (g as f64 - e).abs()).fold(0.0, f64::max)
}

// ---------------------------------------------------------------- assignment

/// Every (target, anchor, column, row) quadruple the assignment rule should
/// produce, found by testing every anchor against every cell of every level.
pub fn brute_assignment(targets: &[TargetBox], anchors: &AnchorSet, grids: &[(usize, usize)], anchor_t: f64) -> Vec<Vec<(usize, usize, usize, usize)>> {
    let mut levels = Vec::new();
    for (l, &(rows, cols)) in grids.iter().enumerate() {
        let s = anchors.strides[l] as f64;
        let mut out = Vec::new();
        for (ti, t) in targets.iter().enumerate() {
            let (gx, gy) = ((t.bbox[0] + t.bbox[2]) / (2.0 * s), (t.bbox[1] + t.bbox[3]) / (2.0 * s));
            let (gw, gh) = ((t.bbox[2] - t.bbox[0]) / s, (t.bbox[3] - t.bbox[1]) / s);
            if gw <= 0.0 || gh <= 0.0 {
                continue;
            }
            for (a, an) in anchors.anchors[l].iter().enumerate() {
                let (aw, ah) = (an[0] / s, an[1] / s);
                let worst = [gw / aw, aw / gw, gh / ah, ah / gh].into_iter().fold(0.0, f64::max);
                if worst >= anchor_t {
                    continue;
                }
                // the cell holding the center plus the nearer neighbor along each axis
                let pick = |g: f64, n: usize, i: usize| -> u8 {
                    let c = (g.floor().max(0.0) as usize).min(n - 1);
                    let near = if g - c as f64 <= 0.5 { c.wrapping_sub(1) } else { c + 1 };
                    if i == c {
                        2
                    } else if i == near {
                        1
                    } else {
                        0
                    }
                };
                for gj in 0..rows {
                    for gi in 0..cols {
                        let (pi, pj) = (pick(gx, cols, gi), pick(gy, rows, gj));
                        if (pi == 2 && pj >= 1) || (pi == 1 && pj == 2) {
                            out.push((ti, a, gi, gj));
                        }
                    }
                }
            }
        }
        levels.push(out);
    }
    levels
}

// ---------------------------------------------------------------- parameter counts

/// Closed-form Swin parameter count: patch embedding with its norm, then per
/// block two norms, qkv, projection, bias table and MLP, and a merging layer
/// before every stage after the first. No classification head or final norm.
pub fn swin_params(cfg: &SwinConfig) -> usize {
    let (p, ci, e) = (cfg.patch_size, cfg.in_channels, cfg.embed_dim);
    let mut n = ci * e * p * p + e + 2 * e;
    let span = (2 * cfg.window - 1) * (2 * cfg.window - 1);
    for (s, (&depth, &heads)) in cfg.depths.iter().zip(&cfg.heads).enumerate() {
        let c = e << s;
        if s > 0 {
            let prev = c / 2;
            n += 2 * 4 * prev + 4 * prev * c;
        }
        let hidden = cfg.mlp_ratio * c;
        let block = 2 * c + (3 * c * c + 3 * c) + (c * c + c) + span * heads + 2 * c + (c * hidden + hidden) + (hidden * c + c);
        n += depth * block;
    }
    n
}
