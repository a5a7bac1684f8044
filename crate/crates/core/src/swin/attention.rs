use super::window::{attention_mask, cyclic_shift, relative_position_index, window_partition, window_reverse};
use crate::error::{Error, Result};
use crate::impl_module;
use crate::nn::Linear;
use crate::tensor::init::Initializer;
use crate::tensor::{cst, Element, Tensor};

/// Multi-head self-attention inside `M×M` windows with a learned relative position bias.
#[derive(Clone, Debug)]
pub struct WindowAttention<T: Element> {
    pub qkv: Linear<T>,
    pub proj: Linear<T>,
    /// `[(2M−1)², heads]`, zero at init.
    pub rel_bias: Tensor<T>,
    pub heads: usize,
    pub window: usize,
}

impl_module!(WindowAttention { qkv, proj, rel_bias });

impl<T: Element> WindowAttention<T> {
    pub fn new(init: &mut Initializer, dim: usize, heads: usize, window: usize) -> Self {
        let span = 2 * window - 1;
        Self {
            qkv: Linear::new(init, dim, 3 * dim, true),
            proj: Linear::new(init, dim, dim, true),
            rel_bias: init.constant(&[span * span, heads], 0.0),
            heads,
            window,
        }
    }

    pub fn dim(&self) -> usize {
        self.proj.weight.dim(1)
    }

    pub fn param_count(dim: usize, heads: usize, window: usize) -> usize {
        let span = 2 * window - 1;
        Linear::<T>::param_count(dim, 3 * dim, true) + Linear::<T>::param_count(dim, dim, true) + span * span * heads
    }

    /// The bias table gathered to `[heads, N, N]`.
    pub fn position_bias(&self) -> Result<Tensor<T>> {
        let h = self.heads;
        let idx = relative_position_index(self.window);
        let nn = idx.len();
        let mut map = Vec::with_capacity(h * nn);
        for head in 0..h {
            map.extend(idx.iter().map(|&r| r * h + head));
        }
        let n = self.window * self.window;
        self.rel_bias.index_map(vec![h, n, n], map)
    }

    /// `windows`: `[B·nW, N, C]`; `mask`: `[nW, N, N]` additive, shared across the batch.
    pub fn forward(&self, windows: &Tensor<T>, mask: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let c = self.dim();
        let n = self.window * self.window;
        if windows.rank() != 3 || windows.dim(1) != n || windows.dim(2) != c {
            return Err(Error::dim(
                "window_attention",
                format!("expected [*, {n}, {c}], got {:?}", windows.shape()),
            ));
        }
        let (bw, h) = (windows.dim(0), self.heads);
        let d = c / h;
        let qkv = self.qkv.forward(windows)?.reshape(&[bw, n, 3, h, d])?.permute(&[2, 0, 3, 1, 4])?;
        let part = |i: usize| qkv.slice(0, i, 1)?.reshape(&[bw * h, n, d]);
        let q = part(0)?.scale(cst(1.0 / (d as f64).sqrt()));
        let k = part(1)?;
        let v = part(2)?;
        let mut attn = q.bmm(&k.transpose_last()?)?.reshape(&[bw, h, n, n])?;
        attn = attn.add(&self.position_bias()?)?;
        if let Some(mask) = mask {
            let nw = mask.dim(0);
            if mask.shape() != [nw, n, n] || bw % nw != 0 {
                return Err(Error::dim("window_attention", format!("mask {:?} for {bw} windows", mask.shape())));
            }
            attn = attn
                .reshape(&[bw / nw, nw, h, n, n])?
                .add(&mask.reshape(&[nw, 1, n, n])?)?
                .reshape(&[bw, h, n, n])?;
        }
        let out = attn.softmax()?.reshape(&[bw * h, n, n])?.bmm(&v)?;
        let out = out.reshape(&[bw, h, n, d])?.permute(&[0, 2, 1, 3])?.reshape(&[bw, n, c])?;
        self.proj.forward(&out)
    }

    /// Attention over a `[B, H, W, C]` grid: pad to whole windows, roll by `−shift`,
    /// attend per window with the region/padding mask, then undo the roll and crop.
    pub fn forward_grid(&self, x: &Tensor<T>, shift: usize) -> Result<Tensor<T>> {
        if x.rank() != 4 {
            return Err(Error::dim("window_attention", format!("expected [B,H,W,C], got {:?}", x.shape())));
        }
        let m = self.window;
        if shift >= m {
            return Err(Error::dim("window_attention", format!("shift {shift} must be below window {m}")));
        }
        let (b, h, w) = (x.dim(0), x.dim(1), x.dim(2));
        let (hp, wp) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
        let padded = if (hp, wp) != (h, w) {
            x.pad(&[(0, 0), (0, hp - h), (0, wp - w), (0, 0)])?
        } else {
            x.clone()
        };
        let mask = if shift > 0 || (hp, wp) != (h, w) {
            Some(attention_mask::<T>(h, w, hp, wp, m, shift)?)
        } else {
            None
        };
        let shifted = cyclic_shift(&padded, shift as isize)?;
        let windows = window_partition(&shifted, m)?;
        let attended = self.forward(&windows, mask.as_ref())?;
        let merged = window_reverse(&attended, m, b, hp, wp)?;
        let unshifted = cyclic_shift(&merged, -(shift as isize))?;
        if (hp, wp) != (h, w) {
            unshifted.slice(1, 0, h)?.slice(2, 0, w)
        } else {
            Ok(unshifted)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Module;

    #[test]
    fn singleton_window_is_projected_value() {
        let mut init = Initializer::new(3);
        let a = WindowAttention::<f64>::new(&mut init, 4, 2, 1);
        let x = init.normal::<f64>(&[3, 1, 4], 0.0, 1.0);
        let out = a.forward(&x, None).unwrap();
        let v = a.qkv.forward(&x).unwrap().slice(2, 8, 4).unwrap();
        let expect = a.proj.forward(&v).unwrap();
        for (p, q) in out.data().iter().zip(expect.data()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_qkv_gives_mean_of_values() {
        let mut init = Initializer::new(4);
        let mut a = WindowAttention::<f64>::new(&mut init, 4, 2, 2);
        a.qkv.weight = Tensor::zeros(&[4, 12]);
        // values come only from the bias: v = [1,2,3,4] for every token
        let mut b = vec![0.0; 12];
        b[8..].copy_from_slice(&[1., 2., 3., 4.]);
        a.qkv.bias = Some(Tensor::new(&[12], b).unwrap());
        a.proj.weight = Tensor::eye(4);
        a.proj.bias = Some(Tensor::zeros(&[4]));
        let x = init.normal::<f64>(&[2, 4, 4], 0.0, 1.0);
        let out = a.forward(&x, None).unwrap();
        for row in out.data().chunks(4) {
            assert_eq!(row, &[1., 2., 3., 4.]);
        }
    }

    #[test]
    fn param_count_matches_walk() {
        let mut init = Initializer::new(0);
        let a = WindowAttention::<f32>::new(&mut init, 96, 3, 7);
        assert_eq!(a.param_count(), WindowAttention::<f32>::param_count(96, 3, 7));
        assert_eq!(a.position_bias().unwrap().shape(), &[3, 49, 49]);
    }
}
