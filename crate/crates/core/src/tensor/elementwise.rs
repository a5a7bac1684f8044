use super::{cst, numel_of, Element, Tensor};
use crate::error::{Error, Result};

/// Right-aligned broadcast of two shapes; extents must match or be 1.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For every flat index of `out`, the flat index of the broadcast source.
pub(crate) fn broadcast_index(out: &[usize], inp: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let offset = rank - inp.len();
    let mut strides = vec![0usize; rank];
    let mut s = 1;
    for i in (0..inp.len()).rev() {
        strides[i + offset] = if inp[i] == 1 { 0 } else { s };
        s *= inp[i];
    }
    let n = numel_of(out);
    let mut idx = Vec::with_capacity(n);
    let mut counter = vec![0usize; rank];
    let mut cur = 0usize;
    for _ in 0..n {
        idx.push(cur);
        for ax in (0..rank).rev() {
            counter[ax] += 1;
            cur += strides[ax];
            if counter[ax] < out[ax] {
                break;
            }
            cur -= strides[ax] * counter[ax];
            counter[ax] = 0;
        }
    }
    idx
}

fn reduce_into<T: Element>(grad: &[T], idx: &Option<Vec<usize>>, len: usize, f: impl Fn(usize) -> T) -> Vec<T> {
    match idx {
        None => (0..grad.len()).map(|i| grad[i] * f(i)).collect(),
        Some(idx) => {
            let mut out = vec![T::zero(); len];
            for (i, &j) in idx.iter().enumerate() {
                out[j] += grad[i] * f(i);
            }
            out
        }
    }
}

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
    Min,
    Max,
}

impl<T: Element> Tensor<T> {
    fn binary(&self, other: &Tensor<T>, kind: Binary, name: &'static str) -> Result<Tensor<T>> {
        let shape = broadcast_shape(self.shape(), other.shape()).ok_or_else(|| {
            Error::dim(name, format!("cannot broadcast {:?} with {:?}", self.shape(), other.shape()))
        })?;
        let ia = (self.shape() != shape.as_slice()).then(|| broadcast_index(&shape, self.shape()));
        let ib = (other.shape() != shape.as_slice()).then(|| broadcast_index(&shape, other.shape()));
        let a = self.data();
        let b = other.data();
        let n = numel_of(&shape);
        let at = |i: usize| match &ia {
            Some(m) => a[m[i]],
            None => a[i],
        };
        let bt = |i: usize| match &ib {
            Some(m) => b[m[i]],
            None => b[i],
        };
        let data: Vec<T> = match kind {
            Binary::Add => (0..n).map(|i| at(i) + bt(i)).collect(),
            Binary::Sub => (0..n).map(|i| at(i) - bt(i)).collect(),
            Binary::Mul => (0..n).map(|i| at(i) * bt(i)).collect(),
            Binary::Div => (0..n).map(|i| at(i) / bt(i)).collect(),
            Binary::Min => (0..n).map(|i| at(i).min(bt(i))).collect(),
            Binary::Max => (0..n).map(|i| at(i).max(bt(i))).collect(),
        };
        let (sa, sb) = (self.clone(), other.clone());
        Ok(Tensor::from_op(name, shape, data, vec![self.clone(), other.clone()], move |ctx| {
            let g = ctx.grad;
            let a = sa.data();
            let b = sb.data();
            let at = |i: usize| match &ia {
            Some(m) => a[m[i]],
            None => a[i],
        };
            let bt = |i: usize| match &ib {
            Some(m) => b[m[i]],
            None => b[i],
        };
            let one = T::one();
            let zero = T::zero();
            let ga = ctx.needs[0].then(|| match kind {
                Binary::Add | Binary::Sub => reduce_into(g, &ia, a.len(), |_| one),
                Binary::Mul => reduce_into(g, &ia, a.len(), bt),
                Binary::Div => reduce_into(g, &ia, a.len(), |i| one / bt(i)),
                // ties route the gradient to the left operand
                Binary::Min => reduce_into(g, &ia, a.len(), |i| if at(i) <= bt(i) { one } else { zero }),
                Binary::Max => reduce_into(g, &ia, a.len(), |i| if at(i) >= bt(i) { one } else { zero }),
            });
            let gb = ctx.needs[1].then(|| match kind {
                Binary::Add => reduce_into(g, &ib, b.len(), |_| one),
                Binary::Sub => reduce_into(g, &ib, b.len(), |_| -one),
                Binary::Mul => reduce_into(g, &ib, b.len(), at),
                Binary::Div => reduce_into(g, &ib, b.len(), |i| -at(i) / (bt(i) * bt(i))),
                Binary::Min => reduce_into(g, &ib, b.len(), |i| if at(i) <= bt(i) { zero } else { one }),
                Binary::Max => reduce_into(g, &ib, b.len(), |i| if at(i) >= bt(i) { zero } else { one }),
            });
            vec![ga, gb]
        }))
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, Binary::Add, "add")
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, Binary::Sub, "sub")
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, Binary::Mul, "mul")
    }

    pub fn div(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, Binary::Div, "div")
    }

    pub fn minimum(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, Binary::Min, "minimum")
    }

    pub fn maximum(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, Binary::Max, "maximum")
    }

    /// Elementwise map with derivative `df(x, y)` where `y = f(x)`.
    fn unary<F, D>(&self, name: &'static str, f: F, df: D) -> Tensor<T>
    where
        F: Fn(T) -> T,
        D: Fn(T, T) -> T + Send + Sync + 'static,
    {
        let data: Vec<T> = self.data().iter().map(|&x| f(x)).collect();
        let src = self.clone();
        Tensor::from_op(name, self.shape().to_vec(), data, vec![self.clone()], move |ctx| {
            let x = src.data();
            vec![Some(
                x.iter()
                    .zip(ctx.out)
                    .zip(ctx.grad)
                    .map(|((&x, &y), &g)| g * df(x, y))
                    .collect(),
            )]
        })
    }

    pub fn neg(&self) -> Tensor<T> {
        self.unary("neg", |x| -x, |_, _| -T::one())
    }

    pub fn scale(&self, c: T) -> Tensor<T> {
        self.unary("scale", move |x| x * c, move |_, _| c)
    }

    pub fn add_scalar(&self, c: T) -> Tensor<T> {
        self.unary("add_scalar", move |x| x + c, |_, _| T::one())
    }

    pub fn exp(&self) -> Tensor<T> {
        self.unary("exp", |x| x.exp(), |_, y| y)
    }

    pub fn ln(&self) -> Tensor<T> {
        self.unary("ln", |x| x.ln(), |x, _| T::one() / x)
    }

    pub fn sqrt(&self) -> Tensor<T> {
        self.unary("sqrt", |x| x.sqrt(), |_, y| cst::<T>(0.5) / y)
    }

    pub fn square(&self) -> Tensor<T> {
        self.unary("square", |x| x * x, |x, _| x + x)
    }

    pub fn atan(&self) -> Tensor<T> {
        self.unary("atan", |x| x.atan(), |x, _| T::one() / (T::one() + x * x))
    }

    pub fn tanh(&self) -> Tensor<T> {
        self.unary("tanh", |x| x.tanh(), |_, y| T::one() - y * y)
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        self.unary("sigmoid", sigmoid, |_, y| y * (T::one() - y))
    }

    /// `x * sigmoid(x)`
    pub fn silu(&self) -> Tensor<T> {
        self.unary(
            "silu",
            |x| x * sigmoid(x),
            |x, _| {
                let s = sigmoid(x);
                s * (T::one() + x * (T::one() - s))
            },
        )
    }

    /// `ln(1 + e^x)`, stable for large |x|.
    pub fn softplus(&self) -> Tensor<T> {
        self.unary("softplus", softplus, |x, _| sigmoid(x))
    }

    /// `x * tanh(softplus(x))`
    pub fn mish(&self) -> Tensor<T> {
        self.unary(
            "mish",
            |x| x * softplus(x).tanh(),
            |x, _| {
                let t = softplus(x).tanh();
                t + x * (T::one() - t * t) * sigmoid(x)
            },
        )
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&self) -> Tensor<T> {
        let half = cst::<T>(0.5);
        let inv_sqrt2 = cst::<T>(std::f64::consts::FRAC_1_SQRT_2);
        let inv_sqrt_2pi = cst::<T>(0.398_942_280_401_432_7);
        self.unary(
            "gelu",
            move |x| half * x * (T::one() + (x * inv_sqrt2).erf()),
            move |x, _| half * (T::one() + (x * inv_sqrt2).erf()) + x * inv_sqrt_2pi * (-half * x * x).exp(),
        )
    }

    /// `max(x, lo)`; zero gradient where clamped.
    pub fn clamp_min(&self, lo: T) -> Tensor<T> {
        self.unary("clamp_min", move |x| x.max(lo), move |x, _| if x >= lo { T::one() } else { T::zero() })
    }

    pub fn sum(&self) -> Tensor<T> {
        let total = self.data().iter().fold(T::zero(), |a, &b| a + b);
        let n = self.numel();
        Tensor::from_op("sum", Vec::new(), vec![total], vec![self.clone()], move |ctx| vec![Some(vec![ctx.grad[0]; n])])
    }

    pub fn mean(&self) -> Tensor<T> {
        let n = cst::<T>(self.numel() as f64);
        self.sum().scale(T::one() / n)
    }

    /// Sum over one axis, removing it.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor<T>> {
        if axis >= self.rank() {
            return Err(Error::dim("sum_axis", format!("axis {axis} out of range for rank {}", self.rank())));
        }
        let shape = self.shape();
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut data = vec![T::zero(); outer * inner];
        let x = self.data();
        for o in 0..outer {
            for k in 0..len {
                let base = (o * len + k) * inner;
                for i in 0..inner {
                    data[o * inner + i] += x[base + i];
                }
            }
        }
        let mut out_shape = shape.to_vec();
        out_shape.remove(axis);
        Ok(Tensor::from_op("sum_axis", out_shape, data, vec![self.clone()], move |ctx| {
            let mut g = vec![T::zero(); outer * len * inner];
            for o in 0..outer {
                for k in 0..len {
                    let base = (o * len + k) * inner;
                    g[base..base + inner].copy_from_slice(&ctx.grad[o * inner..(o + 1) * inner]);
                }
            }
            vec![Some(g)]
        }))
    }
}

#[inline]
pub(crate) fn sigmoid<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub(crate) fn softplus<T: Element>(x: T) -> T {
    // ln(1+e^x) = max(x,0) + ln(1+e^-|x|)
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}
