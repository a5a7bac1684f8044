use super::{Element, Tensor};
use crate::error::{Error, Result};

/// `out[m,n] += a[m,k] * b[k,n]`
pub(crate) fn gemm_nn<T: Element>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m,n] += a[m,k] * b[n,k]`
pub(crate) fn gemm_nt<T: Element>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            out[i * n + j] += acc;
        }
    }
}

/// `out[m,n] += a[k,m] * b[k,n]`
pub(crate) fn gemm_tn<T: Element>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av == T::zero() {
                continue;
            }
            let row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

impl<T: Element> Tensor<T> {
    /// Matrix product of `[M,K]` and `[K,N]`.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        if self.rank() != 2 || other.rank() != 2 || self.shape()[1] != other.shape()[0] {
            return Err(Error::dim(
                "matmul",
                format!("{:?} x {:?}", self.shape(), other.shape()),
            ));
        }
        self.bmm(other)
    }

    /// Batched product over matching leading axes: `[..., M, K] x [..., K, N]`.
    pub fn bmm(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (ra, rb) = (self.rank(), other.rank());
        if ra < 2 || ra != rb || self.shape()[..ra - 2] != other.shape()[..rb - 2] || self.shape()[ra - 1] != other.shape()[rb - 2] {
            return Err(Error::dim("bmm", format!("{:?} x {:?}", self.shape(), other.shape())));
        }
        let batch: usize = self.shape()[..ra - 2].iter().product();
        let (m, k, n) = (self.shape()[ra - 2], self.shape()[ra - 1], other.shape()[rb - 1]);
        super::counters::add_macs(batch * m * k * n);
        let mut data = vec![T::zero(); batch * m * n];
        let (a, b) = (self.data(), other.data());
        for bi in 0..batch {
            gemm_nn(&a[bi * m * k..(bi + 1) * m * k], &b[bi * k * n..(bi + 1) * k * n], &mut data[bi * m * n..(bi + 1) * m * n], m, k, n);
        }
        let mut shape = self.shape().to_vec();
        shape[ra - 1] = n;
        let (sa, sb) = (self.clone(), other.clone());
        Ok(Tensor::from_op("bmm", shape, data, vec![self.clone(), other.clone()], move |ctx| {
            let (a, b, g) = (sa.data(), sb.data(), ctx.grad);
            let ga = ctx.needs[0].then(|| {
                let mut ga = vec![T::zero(); batch * m * k];
                for bi in 0..batch {
                    gemm_nt(&g[bi * m * n..(bi + 1) * m * n], &b[bi * k * n..(bi + 1) * k * n], &mut ga[bi * m * k..(bi + 1) * m * k], m, n, k);
                }
                ga
            });
            let gb = ctx.needs[1].then(|| {
                let mut gb = vec![T::zero(); batch * k * n];
                for bi in 0..batch {
                    gemm_tn(&a[bi * m * k..(bi + 1) * m * k], &g[bi * m * n..(bi + 1) * m * n], &mut gb[bi * k * n..(bi + 1) * k * n], k, m, n);
                }
                gb
            });
            vec![ga, gb]
        }))
    }

    /// Affine map over the last axis: `x[..., I] @ w[I, O] + b[O]`.
    pub fn linear(&self, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let r = self.rank();
        if r == 0 || weight.rank() != 2 || self.shape()[r - 1] != weight.shape()[0] {
            return Err(Error::dim("linear", format!("input {:?} with weight {:?}", self.shape(), weight.shape())));
        }
        let rows = self.numel() / self.shape()[r - 1];
        let flat = self.reshape(&[rows, self.shape()[r - 1]])?;
        let mut y = flat.matmul(weight)?;
        if let Some(b) = bias {
            y = y.add(b)?;
        }
        let mut shape = self.shape().to_vec();
        shape[r - 1] = weight.shape()[1];
        y.reshape(&shape)
    }
}
