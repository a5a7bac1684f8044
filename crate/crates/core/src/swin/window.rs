//! Window layout helpers for (shifted-)window attention.
//!
//! All functions operate on `[B, H, W, C]` token tensors.

use crate::error::{Error, Result};
use crate::tensor::{cst, Element, Tensor};

/// Additive value that removes a query/key pair from attention.
pub const MASK_NEG: f64 = -1e9;

/// `[B,H,W,C]` → `[B·nW, M·M, C]`, windows in row-major order per image.
pub fn window_partition<T: Element>(t: &Tensor<T>, m: usize) -> Result<Tensor<T>> {
    if t.rank() != 4 || m == 0 || !t.dim(1).is_multiple_of(m) || !t.dim(2).is_multiple_of(m) {
        return Err(Error::dim("window_partition", format!("{:?} with window {m}", t.shape())));
    }
    let (b, h, w, c) = (t.dim(0), t.dim(1), t.dim(2), t.dim(3));
    t.reshape(&[b, h / m, m, w / m, m, c])?
        .permute(&[0, 1, 3, 2, 4, 5])?
        .reshape(&[b * (h / m) * (w / m), m * m, c])
}

/// Inverse of [`window_partition`].
pub fn window_reverse<T: Element>(windows: &Tensor<T>, m: usize, b: usize, h: usize, w: usize) -> Result<Tensor<T>> {
    if windows.rank() != 3 || !h.is_multiple_of(m) || !w.is_multiple_of(m) || windows.dim(0) != b * (h / m) * (w / m) || windows.dim(1) != m * m {
        return Err(Error::dim("window_reverse", format!("{:?} into {b}x{h}x{w} with window {m}", windows.shape())));
    }
    let c = windows.dim(2);
    windows
        .reshape(&[b, h / m, w / m, m, m, c])?
        .permute(&[0, 1, 3, 2, 4, 5])?
        .reshape(&[b, h, w, c])
}

/// Toroidal roll of the grid by `(-s, -s)`: token `(i, j)` moves to `(i - s, j - s) mod (H, W)`.
pub fn cyclic_shift<T: Element>(t: &Tensor<T>, s: isize) -> Result<Tensor<T>> {
    if s == 0 {
        return Ok(t.clone());
    }
    t.roll(&[(1, -s), (2, -s)])
}

/// Pre-shift region label of a position on one axis of the shifted grid:
/// 0 when the token did not wrap around, 1 when it did.
fn wrapped(i: usize, extent: usize, s: usize) -> usize {
    usize::from(s > 0 && i >= extent - s)
}

/// Per-window additive masks `[nW, M·M, M·M]` for a grid shifted by `s`.
///
/// A pair is allowed (0) when both tokens come from the same pre-shift region,
/// and blocked with [`MASK_NEG`] otherwise.
pub fn shifted_window_mask<T: Element>(hg: usize, wg: usize, m: usize, s: usize) -> Result<Tensor<T>> {
    attention_mask(hg, wg, hg, wg, m, s)
}

/// Like [`shifted_window_mask`] on a padded `hp × wp` grid whose valid region is
/// `h × w` (top-left); keys that are padding are blocked for every query.
pub fn attention_mask<T: Element>(h: usize, w: usize, hp: usize, wp: usize, m: usize, s: usize) -> Result<Tensor<T>> {
    if m == 0 || !hp.is_multiple_of(m) || !wp.is_multiple_of(m) || h > hp || w > wp {
        return Err(Error::dim("attention_mask", format!("grid {hp}x{wp} (valid {h}x{w}) with window {m}")));
    }
    if s >= m || (s > 0 && (s > hp || s > wp)) {
        return Err(Error::dim("attention_mask", format!("shift {s} must satisfy 0 <= s < {m}")));
    }
    let n = m * m;
    let (nh, nw) = (hp / m, wp / m);
    let mut data = vec![T::zero(); nh * nw * n * n];
    let neg = cst::<T>(MASK_NEG);
    let mut labels = vec![0usize; n];
    let mut valid = vec![true; n];
    for wy in 0..nh {
        for wx in 0..nw {
            for t in 0..n {
                let (i, j) = (wy * m + t / m, wx * m + t % m);
                labels[t] = wrapped(i, hp, s) * 2 + wrapped(j, wp, s);
                // position before the shift
                let (oi, oj) = ((i + s) % hp, (j + s) % wp);
                valid[t] = oi < h && oj < w;
            }
            let base = (wy * nw + wx) * n * n;
            for q in 0..n {
                for k in 0..n {
                    if labels[q] != labels[k] || !valid[k] {
                        data[base + q * n + k] = neg;
                    }
                }
            }
        }
    }
    Tensor::new(&[nh * nw, n, n], data)
}

/// Maps each token pair `(i, j)` of an `M×M` window to its row in a
/// `(2M−1)²` relative-position bias table.
pub fn relative_position_index(m: usize) -> Vec<usize> {
    let n = m * m;
    let mut idx = Vec::with_capacity(n * n);
    for i in 0..n {
        let (yi, xi) = (i / m, i % m);
        for j in 0..n {
            let (yj, xj) = (j / m, j % m);
            let dy = yi + m - 1 - yj;
            let dx = xi + m - 1 - xj;
            idx.push(dy * (2 * m - 1) + dx);
        }
    }
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iota(shape: &[usize]) -> Tensor<f32> {
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|v| v as f32).collect()).unwrap()
    }

    #[test]
    fn partition_counts() {
        let t = Tensor::<f32>::zeros(&[1, 56, 56, 2]);
        assert_eq!(window_partition(&t, 7).unwrap().shape(), &[64, 49, 2]);
        let t = Tensor::<f32>::zeros(&[1, 7, 7, 3]);
        assert_eq!(window_partition(&t, 7).unwrap().shape(), &[1, 49, 3]);
        assert!(window_partition(&Tensor::<f32>::zeros(&[1, 6, 7, 1]), 7).is_err());
    }

    #[test]
    fn partition_groups_window_tokens() {
        let t = iota(&[1, 4, 4, 1]);
        let w = window_partition(&t, 2).unwrap();
        assert_eq!(&w.to_vec()[..4], &[0., 1., 4., 5.]);
        assert_eq!(&w.to_vec()[4..8], &[2., 3., 6., 7.]);
        assert_eq!(window_reverse(&w, 2, 1, 4, 4).unwrap().to_vec(), t.to_vec());
    }

    #[test]
    fn shift_identities() {
        let t = iota(&[2, 6, 6, 3]);
        assert_eq!(cyclic_shift(&t, 0).unwrap().to_vec(), t.to_vec());
        let full = cyclic_shift(&cyclic_shift(&iota(&[1, 3, 3, 1]), 3).unwrap(), -3).unwrap();
        assert_eq!(full.to_vec(), iota(&[1, 3, 3, 1]).to_vec());
        let mut hot = vec![0.0f32; 36];
        hot[0] = 1.0;
        let h = Tensor::new(&[1, 6, 6, 1], hot).unwrap();
        let shifted = cyclic_shift(&h, 3).unwrap();
        assert_eq!(shifted.to_vec()[(6 - 3) * 6 + (6 - 3)], 1.0);
    }

    #[test]
    fn unshifted_mask_is_zero() {
        let m = shifted_window_mask::<f32>(14, 14, 7, 0).unwrap();
        assert_eq!(m.shape(), &[4, 49, 49]);
        assert!(m.to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn relative_index_range() {
        let idx = relative_position_index(7);
        assert_eq!(idx.len(), 49 * 49);
        assert_eq!(*idx.iter().max().unwrap(), 13 * 13 - 1);
        // self-pairs map to the zero offset
        assert!((0..49).all(|i| idx[i * 49 + i] == 6 * 13 + 6));
    }
}
