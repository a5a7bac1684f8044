//! Layout operations. Most are expressed as an index map from output
//! elements to source elements, whose backward rule is a scatter-add.

use super::{numel_of, Element, Tensor};
use crate::error::{Error, Result};

/// Marks an output element with no source (filled with zero).
pub const NO_SOURCE: usize = usize::MAX;

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Calls `f(flat_out_index, multi_index)` for every element of `shape` in row-major order.
fn for_each_index(shape: &[usize], mut f: impl FnMut(usize, &[usize])) {
    let n = numel_of(shape);
    let mut idx = vec![0usize; shape.len()];
    for flat in 0..n {
        f(flat, &idx);
        for ax in (0..shape.len()).rev() {
            idx[ax] += 1;
            if idx[ax] < shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
}

impl<T: Element> Tensor<T> {
    /// `out[i] = self[map[i]]`, or zero where `map[i] == NO_SOURCE`.
    pub fn index_map(&self, out_shape: Vec<usize>, map: Vec<usize>) -> Result<Tensor<T>> {
        if map.len() != numel_of(&out_shape) {
            return Err(Error::dim("index_map", "map length does not match output shape"));
        }
        let src = self.data();
        if map.iter().any(|&j| j != NO_SOURCE && j >= src.len()) {
            return Err(Error::dim("index_map", "source index out of range"));
        }
        let data = map
            .iter()
            .map(|&j| if j == NO_SOURCE { T::zero() } else { src[j] })
            .collect();
        let n = self.numel();
        Ok(Tensor::from_op("index_map", out_shape, data, vec![self.clone()], move |ctx| {
            let mut g = vec![T::zero(); n];
            for (i, &j) in map.iter().enumerate() {
                if j != NO_SOURCE {
                    g[j] += ctx.grad[i];
                }
            }
            vec![Some(g)]
        }))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel_of(shape) != self.numel() || shape.contains(&0) {
            return Err(Error::dim("reshape", format!("{:?} -> {:?}", self.shape(), shape)));
        }
        Ok(Tensor::from_op("reshape", shape.to_vec(), self.to_vec(), vec![self.clone()], |ctx| {
            vec![Some(ctx.grad.to_vec())]
        }))
    }

    pub fn flatten(&self) -> Tensor<T> {
        self.reshape(&[self.numel()]).expect("flatten preserves size")
    }

    /// Output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor<T>> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::dim("permute", format!("invalid axes {axes:?} for rank {rank}")));
        }
        let in_strides = strides(self.shape());
        let out_shape: Vec<usize> = axes.iter().map(|&a| self.shape()[a]).collect();
        let mut map = Vec::with_capacity(self.numel());
        for_each_index(&out_shape, |_, idx| {
            map.push(idx.iter().zip(axes).map(|(&i, &a)| i * in_strides[a]).sum());
        });
        self.index_map(out_shape, map)
    }

    /// Swaps the last two axes.
    pub fn transpose_last(&self) -> Result<Tensor<T>> {
        let r = self.rank();
        if r < 2 {
            return Err(Error::dim("transpose_last", "rank < 2"));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(&axes)
    }

    /// Toroidal roll: `out[..., i, ...] = in[..., (i - shift) mod n, ...]` per listed axis.
    pub fn roll(&self, shifts: &[(usize, isize)]) -> Result<Tensor<T>> {
        let shape = self.shape().to_vec();
        for &(ax, _) in shifts {
            if ax >= shape.len() {
                return Err(Error::dim("roll", format!("axis {ax} out of range")));
            }
        }
        let st = strides(&shape);
        let mut map = Vec::with_capacity(self.numel());
        for_each_index(&shape, |_, idx| {
            let mut j = 0;
            for (ax, &i) in idx.iter().enumerate() {
                let mut src = i as isize;
                for &(a, s) in shifts {
                    if a == ax {
                        src -= s;
                    }
                }
                let n = shape[ax] as isize;
                j += (src.rem_euclid(n) as usize) * st[ax];
            }
            map.push(j);
        });
        self.index_map(shape, map)
    }

    /// Contiguous range `[start, start+len)` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        if axis >= self.rank() || len == 0 || start + len > self.shape()[axis] {
            return Err(Error::dim("slice", format!("{start}+{len} on axis {axis} of {:?}", self.shape())));
        }
        let st = strides(self.shape());
        let mut out_shape = self.shape().to_vec();
        out_shape[axis] = len;
        let mut map = Vec::with_capacity(numel_of(&out_shape));
        for_each_index(&out_shape, |_, idx| {
            map.push(
                idx.iter()
                    .enumerate()
                    .map(|(a, &i)| (if a == axis { i + start } else { i }) * st[a])
                    .sum(),
            );
        });
        self.index_map(out_shape, map)
    }

    /// Zero padding `(before, after)` per axis; `pads.len()` must equal rank.
    pub fn pad(&self, pads: &[(usize, usize)]) -> Result<Tensor<T>> {
        if pads.len() != self.rank() {
            return Err(Error::dim("pad", "one (before, after) pair per axis required"));
        }
        if pads.iter().all(|&(b, a)| b == 0 && a == 0) {
            return Ok(self.clone());
        }
        let st = strides(self.shape());
        let in_shape = self.shape().to_vec();
        let out_shape: Vec<usize> = in_shape.iter().zip(pads).map(|(&d, &(b, a))| d + b + a).collect();
        let mut map = Vec::with_capacity(numel_of(&out_shape));
        for_each_index(&out_shape, |_, idx| {
            let mut j = 0;
            for (ax, &i) in idx.iter().enumerate() {
                let (b, _) = pads[ax];
                if i < b || i - b >= in_shape[ax] {
                    map.push(NO_SOURCE);
                    return;
                }
                j += (i - b) * st[ax];
            }
            map.push(j);
        });
        self.index_map(out_shape, map)
    }

    /// Nearest-neighbour ×`factor` upsampling of the last two axes.
    pub fn upsample_nearest(&self, factor: usize) -> Result<Tensor<T>> {
        let r = self.rank();
        if r < 2 || factor == 0 {
            return Err(Error::dim("upsample_nearest", "needs rank ≥ 2 and factor ≥ 1"));
        }
        let (h, w) = (self.shape()[r - 2], self.shape()[r - 1]);
        let lead: usize = self.shape()[..r - 2].iter().product();
        let (oh, ow) = (h * factor, w * factor);
        let mut map = Vec::with_capacity(lead * oh * ow);
        for l in 0..lead {
            for y in 0..oh {
                for x in 0..ow {
                    map.push(l * h * w + (y / factor) * w + x / factor);
                }
            }
        }
        let mut shape = self.shape().to_vec();
        shape[r - 2] = oh;
        shape[r - 1] = ow;
        self.index_map(shape, map)
    }

    /// Selects entries along `axis` in the given order (gather).
    pub fn select(&self, axis: usize, indices: &[usize]) -> Result<Tensor<T>> {
        if axis >= self.rank() || indices.is_empty() || indices.iter().any(|&i| i >= self.shape()[axis]) {
            return Err(Error::dim("select", format!("bad indices on axis {axis} of {:?}", self.shape())));
        }
        let st = strides(self.shape());
        let mut out_shape = self.shape().to_vec();
        out_shape[axis] = indices.len();
        let mut map = Vec::with_capacity(numel_of(&out_shape));
        for_each_index(&out_shape, |_, idx| {
            map.push(
                idx.iter()
                    .enumerate()
                    .map(|(a, &i)| (if a == axis { indices[i] } else { i }) * st[a])
                    .sum(),
            );
        });
        self.index_map(out_shape, map)
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(parts: &[Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let first = parts.first().ok_or_else(|| Error::dim("concat", "no inputs"))?;
        let rank = first.rank();
        if axis >= rank {
            return Err(Error::dim("concat", format!("axis {axis} out of range for rank {rank}")));
        }
        for p in parts {
            let ok = p.rank() == rank && (0..rank).all(|a| a == axis || p.shape()[a] == first.shape()[a]);
            if !ok {
                return Err(Error::dim(
                    "concat",
                    format!("incompatible shapes {:?} and {:?} on axis {axis}", first.shape(), p.shape()),
                ));
            }
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let widths: Vec<usize> = parts.iter().map(|p| p.shape()[axis] * inner).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(outer * total);
        for o in 0..outer {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&p.data()[o * w..(o + 1) * w]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = parts.iter().map(|p| p.shape()[axis]).sum();
        Ok(Tensor::from_op("concat", shape, data, parts.to_vec(), move |ctx| {
            let mut grads: Vec<Option<Vec<T>>> = widths
                .iter()
                .zip(ctx.needs)
                .map(|(&w, &need)| need.then(|| Vec::with_capacity(outer * w)))
                .collect();
            for o in 0..outer {
                let mut off = o * total;
                for (g, &w) in grads.iter_mut().zip(&widths) {
                    if let Some(g) = g {
                        g.extend_from_slice(&ctx.grad[off..off + w]);
                    }
                    off += w;
                }
            }
            grads
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iota(shape: &[usize]) -> Tensor<f64> {
        let n = numel_of(shape);
        Tensor::new(shape, (0..n).map(|v| v as f64).collect()).unwrap()
    }

    #[test]
    fn permute_matches_manual_transpose() {
        let x = iota(&[2, 3]);
        let t = x.permute(&[1, 0]).unwrap();
        assert_eq!(t.shape(), &[3, 2]);
        assert_eq!(t.to_vec(), vec![0., 3., 1., 4., 2., 5.]);
        assert!(x.permute(&[0, 0]).is_err());
    }

    #[test]
    fn roll_moves_hot_element() {
        let mut v = vec![0.0; 16];
        v[0] = 1.0;
        let x = Tensor::<f64>::new(&[4, 4], v).unwrap();
        let r = x.roll(&[(0, -3), (1, -3)]).unwrap();
        // (0,0) -> (4-3, 4-3)
        assert_eq!(r.to_vec()[4 + 1], 1.0);
        let back = r.roll(&[(0, 3), (1, 3)]).unwrap();
        assert_eq!(back.to_vec(), x.to_vec());
    }

    #[test]
    fn pad_slice_and_upsample() {
        let x = iota(&[1, 2, 2]);
        let p = x.pad(&[(0, 0), (0, 1), (1, 0)]).unwrap();
        assert_eq!(p.shape(), &[1, 3, 3]);
        assert_eq!(p.to_vec(), vec![0., 0., 1., 0., 2., 3., 0., 0., 0.]);
        assert_eq!(p.slice(2, 1, 2).unwrap().slice(1, 0, 2).unwrap().to_vec(), x.to_vec());
        let u = x.upsample_nearest(2).unwrap();
        assert_eq!(u.shape(), &[1, 4, 4]);
        assert_eq!(&u.to_vec()[..4], &[0., 0., 1., 1.]);
    }

    #[test]
    fn concat_and_its_gradient() {
        let a = iota(&[2, 1]).requires_grad();
        let b = iota(&[2, 2]).requires_grad();
        let c = Tensor::concat(&[a.clone(), b.clone()], 1).unwrap();
        assert_eq!(c.to_vec(), vec![0., 0., 1., 1., 2., 3.]);
        let w = Tensor::from_f64(&[2, 3], &[1., 2., 3., 4., 5., 6.]).unwrap();
        let g = c.mul(&w).unwrap().sum().backward().unwrap();
        assert_eq!(g.get(&a).unwrap(), &[1., 4.]);
        assert_eq!(g.get(&b).unwrap(), &[2., 3., 5., 6.]);
    }

    #[test]
    fn select_gathers_and_scatters() {
        let x = iota(&[3, 2]).requires_grad();
        let s = x.select(0, &[2, 0, 2]).unwrap();
        assert_eq!(s.to_vec(), vec![4., 5., 0., 1., 4., 5.]);
        let g = s.sum().backward().unwrap();
        assert_eq!(g.get(&x).unwrap(), &[1., 1., 0., 0., 2., 2.]);
    }
}
