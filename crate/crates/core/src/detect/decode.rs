use crate::error::{Error, Result};
use crate::hooks::{record, Stage};
use crate::tensor::{Element, Tensor};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One anchor at one cell, in letterboxed pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub center: [f64; 2],
    pub size: [f64; 2],
    pub objectness: f64,
    pub class_probs: Vec<f64>,
    pub level: usize,
    pub anchor: usize,
    pub cell: [usize; 2],
}

impl Candidate {
    pub fn bbox(&self) -> [f64; 4] {
        let [cx, cy] = self.center;
        let [w, h] = self.size;
        [cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0]
    }

    /// Best class (lowest index on ties) and its objectness·probability score.
    pub fn best(&self) -> (usize, f64) {
        let mut best = 0;
        for (c, &p) in self.class_probs.iter().enumerate() {
            if p > self.class_probs[best] {
                best = c;
            }
        }
        (best, self.objectness * self.class_probs[best])
    }
}

/// Decodes one level `[B, na·(5+nc), H, W]` into per-image candidates,
/// ordered anchor, row, column.
///
/// `xy = (2σ(t) − 0.5 + cell)·stride`, `wh = (2σ(t))²·anchor`.
pub fn decode_level<T: Element>(raw: &Tensor<T>, anchors: &[[f64; 2]], stride: usize, nc: usize, level: usize) -> Result<Vec<Vec<Candidate>>> {
    let no = 5 + nc;
    if raw.rank() != 4 || raw.dim(1) != anchors.len() * no {
        return Err(Error::dim("decode", format!("{:?} for {} anchors and {nc} classes", raw.shape(), anchors.len())));
    }
    record(Stage::Decode);
    let (b, h, w) = (raw.dim(0), raw.dim(2), raw.dim(3));
    let data = raw.data();
    let at = |n: usize, ch: usize, i: usize, j: usize| data[((n * raw.dim(1) + ch) * h + i) * w + j].as_f64();
    let s = stride as f64;
    let mut out = Vec::with_capacity(b);
    for n in 0..b {
        let mut cands = Vec::with_capacity(anchors.len() * h * w);
        for (a, &[aw, ah]) in anchors.iter().enumerate() {
            let ch = a * no;
            for i in 0..h {
                for j in 0..w {
                    let p = |k: usize| sigmoid(at(n, ch + k, i, j));
                    cands.push(Candidate {
                        center: [(2.0 * p(0) - 0.5 + j as f64) * s, (2.0 * p(1) - 0.5 + i as f64) * s],
                        size: [(2.0 * p(2)).powi(2) * aw, (2.0 * p(3)).powi(2) * ah],
                        objectness: p(4),
                        class_probs: (0..nc).map(|c| p(5 + c)).collect(),
                        level,
                        anchor: a,
                        cell: [i, j],
                    });
                }
            }
        }
        out.push(cands);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_logits() {
        let raw = Tensor::<f32>::zeros(&[1, 7, 2, 2]);
        let c = &decode_level(&raw, &[[10.0, 20.0]], 8, 2, 0).unwrap()[0];
        assert_eq!(c.len(), 4);
        assert_eq!(c[0].center, [4.0, 4.0]);
        assert_eq!(c[0].size, [10.0, 20.0]);
        assert_eq!(c[0].objectness, 0.5);
        assert_eq!(c[0].class_probs, vec![0.5, 0.5]);
        assert_eq!(c[0].best(), (0, 0.25));
        assert_eq!(c[3].center, [12.0, 12.0]);
    }

    #[test]
    fn center_offset_limit() {
        let mut v = vec![0.0; 6];
        v[0] = 60.0;
        let c = &decode_level(&Tensor::<f64>::new(&[1, 6, 1, 1], v).unwrap(), &[[1.0, 1.0]], 8, 1, 0).unwrap()[0][0];
        assert!((c.center[0] / 8.0 - 1.5).abs() < 1e-12);
        assert!(decode_level(&Tensor::<f64>::zeros(&[1, 5, 1, 1]), &[[1.0, 1.0]], 8, 1, 0).is_err());
    }
}
