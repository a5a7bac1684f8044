use super::linalg::{gemm_nn, gemm_nt, gemm_tn};
use super::{cst, Element, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }
}

/// Output extent of a convolution or pooling window, if positive.
pub fn conv_out_extent(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let span = input + 2 * pad;
    if stride == 0 || span < k {
        return None;
    }
    Some((span - k) / stride + 1)
}

fn im2col<T: Element>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let ncol = g.cols();
    for ci in 0..g.c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * ncol..(row + 1) * ncol];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        dst[oy * g.ow + ox] = if iy >= 0 && ix >= 0 && (iy as usize) < g.h && (ix as usize) < g.w {
                            x[(ci * g.h + iy as usize) * g.w + ix as usize]
                        } else {
                            T::zero()
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Element>(cols: &[T], g: &ConvGeom, x: &mut [T]) {
    let ncol = g.cols();
    for ci in 0..g.c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let src = &cols[row * ncol..(row + 1) * ncol];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy as usize >= g.h {
                        continue;
                    }
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            x[(ci * g.h + iy as usize) * g.w + ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

impl<T: Element> Tensor<T> {
    /// 2-D cross-correlation: `x[B,C,H,W]`, `w[O,C,k,k]`, optional `bias[O]`.
    pub fn conv2d(&self, weight: &Tensor<T>, bias: Option<&Tensor<T>>, stride: usize, pad: usize) -> Result<Tensor<T>> {
        if self.rank() != 4 || weight.rank() != 4 {
            return Err(Error::dim("conv2d", format!("input {:?}, weight {:?}", self.shape(), weight.shape())));
        }
        let (b, c, h, w) = (self.dim(0), self.dim(1), self.dim(2), self.dim(3));
        let (o, wc, k, k2) = (weight.dim(0), weight.dim(1), weight.dim(2), weight.dim(3));
        if wc != c || k != k2 {
            return Err(Error::dim("conv2d", format!("input {:?}, weight {:?}", self.shape(), weight.shape())));
        }
        if let Some(bias) = bias {
            if bias.shape() != [o] {
                return Err(Error::dim("conv2d", format!("bias {:?} for {o} outputs", bias.shape())));
            }
        }
        let (oh, ow) = match (conv_out_extent(h, k, stride, pad), conv_out_extent(w, k, stride, pad)) {
            (Some(oh), Some(ow)) => (oh, ow),
            _ => {
                return Err(Error::dim(
                    "conv2d",
                    format!("non-positive output extent for {h}x{w}, k={k}, stride={stride}, pad={pad}"),
                ))
            }
        };
        let g = ConvGeom { c, h, w, k, stride, pad, oh, ow };
        let (rows, ncol) = (g.rows(), g.cols());
        let x = self.data();
        let wd = weight.data();
        super::counters::add_macs(b * o * ncol * rows);
        let mut out = vec![T::zero(); b * o * ncol];
        let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); rows * ncol] };
        for bi in 0..b {
            let xb = &x[bi * c * h * w..(bi + 1) * c * h * w];
            let ob = &mut out[bi * o * ncol..(bi + 1) * o * ncol];
            if let Some(bias) = bias {
                for (oc, &bv) in bias.data().iter().enumerate() {
                    ob[oc * ncol..(oc + 1) * ncol].iter_mut().for_each(|v| *v = bv);
                }
            }
            if g.is_pointwise() {
                gemm_nn(wd, xb, ob, o, rows, ncol);
            } else {
                im2col(xb, &g, &mut cols);
                gemm_nn(wd, &cols, ob, o, rows, ncol);
            }
        }
        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(bias) = bias {
            parents.push(bias.clone());
        }
        let (sx, sw) = (self.clone(), weight.clone());
        let has_bias = bias.is_some();
        Ok(Tensor::from_op("conv2d", vec![b, o, oh, ow], out, parents, move |ctx| {
            let x = sx.data();
            let wd = sw.data();
            let gout = ctx.grad;
            let mut gx = ctx.needs[0].then(|| vec![T::zero(); b * c * h * w]);
            let mut gw = ctx.needs[1].then(|| vec![T::zero(); o * rows]);
            let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); rows * ncol] };
            let mut gcols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); rows * ncol] };
            for bi in 0..b {
                let gb = &gout[bi * o * ncol..(bi + 1) * o * ncol];
                let xb = &x[bi * c * h * w..(bi + 1) * c * h * w];
                if let Some(gw) = gw.as_mut() {
                    if g.is_pointwise() {
                        gemm_nt(gb, xb, gw, o, ncol, rows);
                    } else {
                        im2col(xb, &g, &mut cols);
                        gemm_nt(gb, &cols, gw, o, ncol, rows);
                    }
                }
                if let Some(gx) = gx.as_mut() {
                    let gxb = &mut gx[bi * c * h * w..(bi + 1) * c * h * w];
                    if g.is_pointwise() {
                        gemm_tn(wd, gb, gxb, rows, o, ncol);
                    } else {
                        gcols.iter_mut().for_each(|v| *v = T::zero());
                        gemm_tn(wd, gb, &mut gcols, rows, o, ncol);
                        col2im(&gcols, &g, gxb);
                    }
                }
            }
            let mut grads = vec![gx, gw];
            if has_bias {
                grads.push(ctx.needs[2].then(|| {
                    let mut gbias = vec![T::zero(); o];
                    for bi in 0..b {
                        for (oc, acc) in gbias.iter_mut().enumerate() {
                            let base = (bi * o + oc) * ncol;
                            for &v in &gout[base..base + ncol] {
                                *acc += v;
                            }
                        }
                    }
                    gbias
                }));
            }
            grads
        }))
    }

    /// Max pooling over the last two axes of `[B,C,H,W]`; padding never wins.
    pub fn max_pool2d(&self, k: usize, stride: usize, pad: usize) -> Result<Tensor<T>> {
        if self.rank() != 4 || k == 0 || 2 * pad > k {
            return Err(Error::dim("max_pool2d", format!("input {:?}, k={k}, pad={pad}", self.shape())));
        }
        let (b, c, h, w) = (self.dim(0), self.dim(1), self.dim(2), self.dim(3));
        let (oh, ow) = match (conv_out_extent(h, k, stride, pad), conv_out_extent(w, k, stride, pad)) {
            (Some(oh), Some(ow)) => (oh, ow),
            _ => return Err(Error::dim("max_pool2d", "non-positive output extent")),
        };
        let x = self.data();
        let mut out = Vec::with_capacity(b * c * oh * ow);
        let mut arg = Vec::with_capacity(b * c * oh * ow);
        for plane in 0..b * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = T::neg_infinity();
                    let mut best_i = usize::MAX;
                    for ky in 0..k {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy as usize >= h {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix as usize >= w {
                                continue;
                            }
                            let j = base + iy as usize * w + ix as usize;
                            if best_i == usize::MAX || x[j] > best {
                                best = x[j];
                                best_i = j;
                            }
                        }
                    }
                    if best_i == usize::MAX {
                        return Err(Error::dim("max_pool2d", "window entirely in padding"));
                    }
                    out.push(best);
                    arg.push(best_i);
                }
            }
        }
        let n = self.numel();
        Ok(Tensor::from_op("max_pool2d", vec![b, c, oh, ow], out, vec![self.clone()], move |ctx| {
            let mut g = vec![T::zero(); n];
            for (i, &j) in arg.iter().enumerate() {
                g[j] += ctx.grad[i];
            }
            vec![Some(g)]
        }))
    }

    /// Normalizes over the last axis, then applies `gamma`/`beta`.
    pub fn layer_norm(&self, gamma: &Tensor<T>, beta: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
        let r = self.rank();
        if r == 0 {
            return Err(Error::dim("layer_norm", "scalar input"));
        }
        let c = self.shape()[r - 1];
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(Error::dim(
                "layer_norm",
                format!("affine {:?}/{:?} for last axis {c}", gamma.shape(), beta.shape()),
            ));
        }
        let rows = self.numel() / c;
        let x = self.data();
        let (gm, bt) = (gamma.data(), beta.data());
        let eps = cst::<T>(eps);
        let inv_c = T::one() / cst::<T>(c as f64);
        let mut out = vec![T::zero(); rows * c];
        let mut xhat = vec![T::zero(); rows * c];
        let mut rstd = vec![T::zero(); rows];
        for row in 0..rows {
            let xs = &x[row * c..(row + 1) * c];
            let mean = xs.iter().fold(T::zero(), |a, &v| a + v) * inv_c;
            let var = xs.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) * inv_c;
            let rs = T::one() / (var + eps).sqrt();
            rstd[row] = rs;
            for i in 0..c {
                let xh = (xs[i] - mean) * rs;
                xhat[row * c + i] = xh;
                out[row * c + i] = xh * gm[i] + bt[i];
            }
        }
        let sg = gamma.clone();
        Ok(Tensor::from_op(
            "layer_norm",
            self.shape().to_vec(),
            out,
            vec![self.clone(), gamma.clone(), beta.clone()],
            move |ctx| {
                let g = ctx.grad;
                let gm = sg.data();
                let gx = ctx.needs[0].then(|| {
                    let mut gx = vec![T::zero(); rows * c];
                    for row in 0..rows {
                        let gr = &g[row * c..(row + 1) * c];
                        let xh = &xhat[row * c..(row + 1) * c];
                        let mut m1 = T::zero();
                        let mut m2 = T::zero();
                        for i in 0..c {
                            let d = gr[i] * gm[i];
                            m1 += d;
                            m2 += d * xh[i];
                        }
                        m1 *= inv_c;
                        m2 *= inv_c;
                        for i in 0..c {
                            gx[row * c + i] = rstd[row] * (gr[i] * gm[i] - m1 - xh[i] * m2);
                        }
                    }
                    gx
                });
                let ggamma = ctx.needs[1].then(|| {
                    let mut acc = vec![T::zero(); c];
                    for (i, (&gv, &xh)) in g.iter().zip(&xhat).enumerate() {
                        acc[i % c] += gv * xh;
                    }
                    acc
                });
                let gbeta = ctx.needs[2].then(|| {
                    let mut acc = vec![T::zero(); c];
                    for (i, &gv) in g.iter().enumerate() {
                        acc[i % c] += gv;
                    }
                    acc
                });
                vec![gx, ggamma, gbeta]
            },
        ))
    }

    /// Softmax over the last axis, stabilized by subtracting the row maximum.
    pub fn softmax(&self) -> Result<Tensor<T>> {
        let r = self.rank();
        if r == 0 {
            return Err(Error::dim("softmax", "scalar input"));
        }
        let n = self.shape()[r - 1];
        let rows = self.numel() / n;
        let x = self.data();
        let mut out = vec![T::zero(); rows * n];
        for row in 0..rows {
            let xs = &x[row * n..(row + 1) * n];
            let m = xs.iter().fold(T::neg_infinity(), |a, &v| a.max(v));
            let mut z = T::zero();
            for i in 0..n {
                let e = (xs[i] - m).exp();
                out[row * n + i] = e;
                z += e;
            }
            out[row * n..(row + 1) * n].iter_mut().for_each(|v| *v = *v / z);
        }
        Ok(Tensor::from_op("softmax", self.shape().to_vec(), out, vec![self.clone()], move |ctx| {
            let (y, g) = (ctx.out, ctx.grad);
            let mut gx = vec![T::zero(); rows * n];
            for row in 0..rows {
                let ys = &y[row * n..(row + 1) * n];
                let gs = &g[row * n..(row + 1) * n];
                let dot = ys.iter().zip(gs).fold(T::zero(), |a, (&p, &q)| a + p * q);
                for i in 0..n {
                    gx[row * n + i] = ys[i] * (gs[i] - dot);
                }
            }
            vec![Some(gx)]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_examples() {
        let x = Tensor::<f64>::ones(&[1, 1, 3, 3]);
        let w = Tensor::<f64>::ones(&[1, 1, 3, 3]);
        let y = x.conv2d(&w, None, 1, 1).unwrap();
        assert_eq!(y.to_vec(), vec![4., 6., 4., 6., 9., 6., 4., 6., 4.]);

        let x = Tensor::<f64>::from_f64(&[1, 1, 2, 2], &[1., 2., 3., 4.]).unwrap();
        let id = Tensor::<f64>::ones(&[1, 1, 1, 1]);
        let b = Tensor::<f64>::zeros(&[1]);
        assert_eq!(x.conv2d(&id, Some(&b), 1, 0).unwrap().to_vec(), x.to_vec());

        let x = Tensor::<f64>::ones(&[1, 1, 4, 4]);
        let w = Tensor::<f64>::ones(&[1, 1, 2, 2]);
        assert_eq!(x.conv2d(&w, None, 2, 0).unwrap().shape(), &[1, 1, 2, 2]);
        assert!(Tensor::<f64>::ones(&[1, 1, 2, 2]).conv2d(&Tensor::ones(&[1, 1, 3, 3]), None, 1, 0).is_err());
    }

    #[test]
    fn layer_norm_examples() {
        let one = Tensor::<f64>::ones(&[2]);
        let zero = Tensor::<f64>::zeros(&[2]);
        let y = Tensor::<f64>::from_f64(&[2], &[1., 3.]).unwrap().layer_norm(&one, &zero, 0.0).unwrap();
        assert_eq!(y.to_vec(), vec![-1., 1.]);
        let c = Tensor::<f64>::full(&[4], 2.5);
        let y = c.layer_norm(&Tensor::ones(&[4]), &Tensor::zeros(&[4]), 1e-5).unwrap();
        assert!(y.to_vec().iter().all(|&v| v == 0.0));
        let b = Tensor::<f64>::from_f64(&[4], &[0.1, 0.2, 0.3, 0.4]).unwrap();
        let y = c.layer_norm(&Tensor::ones(&[4]), &b, 1e-5).unwrap();
        assert_eq!(y.to_vec(), b.to_vec());
    }

    #[test]
    fn softmax_examples() {
        let y = Tensor::<f64>::from_f64(&[2], &[0.0, 3f64.ln()]).unwrap().softmax().unwrap();
        assert!((y.to_vec()[0] - 0.25).abs() < 1e-12 && (y.to_vec()[1] - 0.75).abs() < 1e-12);
        let u = Tensor::<f64>::full(&[5], 0.3).softmax().unwrap();
        assert!(u.to_vec().iter().all(|&v| (v - 0.2).abs() < 1e-12));
    }

    #[test]
    fn max_pool_picks_maximum() {
        let x = Tensor::<f64>::from_f64(&[1, 1, 2, 2], &[1., 5., 3., 2.]).unwrap().requires_grad();
        let y = x.max_pool2d(3, 1, 1).unwrap();
        assert_eq!(y.to_vec(), vec![5.; 4]);
        let g = y.sum().backward().unwrap();
        assert_eq!(g.get(&x).unwrap(), &[0., 4., 0., 0.]);
    }
}
