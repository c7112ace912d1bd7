//! Elementwise arithmetic, reductions and channel concatenation.

use crate::error::{Error, Result};
use crate::real::Real;

use super::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Relu,
    Log,
    Exp,
    Neg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
}

fn is_scalar<T: Real>(t: &Tensor<T>) -> bool {
    t.ndim() == 0
}

/// Binary op on equal shapes, or with one side a rank-0 scalar.
pub fn binary<T: Real>(op: BinaryOp, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let name = match op {
        BinaryOp::Add => "add",
        BinaryOp::Sub => "sub",
        BinaryOp::Mul => "mul",
    };
    let (shape, a_bcast, b_bcast) = if a.shape() == b.shape() {
        (a.shape().to_vec(), false, false)
    } else if is_scalar(a) {
        (b.shape().to_vec(), true, false)
    } else if is_scalar(b) {
        (a.shape().to_vec(), false, true)
    } else {
        return Err(Error::shape(name, a.shape(), b.shape()));
    };
    let n: usize = shape.iter().product();
    let av = a.data();
    let bv = b.data();
    let ai = |i: usize| if a_bcast { av[0] } else { av[i] };
    let bi = |i: usize| if b_bcast { bv[0] } else { bv[i] };
    let out: Vec<T> = (0..n)
        .map(|i| match op {
            BinaryOp::Add => ai(i) + bi(i),
            BinaryOp::Sub => ai(i) - bi(i),
            BinaryOp::Mul => ai(i) * bi(i),
        })
        .collect();
    let saved = (op == BinaryOp::Mul).then(|| (av.clone(), bv.clone()));
    drop(av);
    drop(bv);

    let reduce = |g: Vec<T>, bcast: bool| -> Vec<T> {
        if bcast {
            vec![g.into_iter().sum()]
        } else {
            g
        }
    };
    Ok(Tensor::from_op(
        out,
        shape,
        name,
        vec![a.clone(), b.clone()],
        Box::new(move |g, needs| {
            let (ga, gb) = match op {
                BinaryOp::Add => (
                    needs[0].then(|| g.to_vec()),
                    needs[1].then(|| g.to_vec()),
                ),
                BinaryOp::Sub => (
                    needs[0].then(|| g.to_vec()),
                    needs[1].then(|| g.iter().map(|&x| -x).collect()),
                ),
                BinaryOp::Mul => {
                    let (av, bv) = saved.expect("mul saves operands");
                    let at = |i: usize| if a_bcast { av[0] } else { av[i] };
                    let bt = |i: usize| if b_bcast { bv[0] } else { bv[i] };
                    (
                        needs[0].then(|| g.iter().enumerate().map(|(i, &x)| x * bt(i)).collect()),
                        needs[1].then(|| g.iter().enumerate().map(|(i, &x)| x * at(i)).collect()),
                    )
                }
            };
            vec![ga.map(|g| reduce(g, a_bcast)), gb.map(|g| reduce(g, b_bcast))]
        }),
    ))
}

pub fn unary<T: Real>(op: UnaryOp, a: &Tensor<T>) -> Result<Tensor<T>> {
    let x = a.data();
    let (name, out): (&'static str, Vec<T>) = match op {
        UnaryOp::Relu => ("relu", x.iter().map(|&v| v.max(T::zero())).collect()),
        UnaryOp::Log => {
            if let Some(bad) = x.iter().find(|&&v| !(v > T::zero())) {
                return Err(Error::Domain {
                    op: "log",
                    msg: format!("non-positive argument {bad}"),
                });
            }
            ("log", x.iter().map(|&v| v.ln()).collect())
        }
        UnaryOp::Exp => ("exp", x.iter().map(|&v| v.exp()).collect()),
        UnaryOp::Neg => ("neg", x.iter().map(|&v| -v).collect()),
    };
    let saved: Vec<T> = match op {
        UnaryOp::Relu | UnaryOp::Log => x.clone(),
        UnaryOp::Exp => out.clone(),
        UnaryOp::Neg => Vec::new(),
    };
    drop(x);
    Ok(Tensor::from_op(
        out,
        a.shape().to_vec(),
        name,
        vec![a.clone()],
        Box::new(move |g, _| {
            let gi: Vec<T> = match op {
                UnaryOp::Relu => g
                    .iter()
                    .zip(&saved)
                    .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                    .collect(),
                UnaryOp::Log => g.iter().zip(&saved).map(|(&g, &x)| g / x).collect(),
                UnaryOp::Exp => g.iter().zip(&saved).map(|(&g, &y)| g * y).collect(),
                UnaryOp::Neg => g.iter().map(|&g| -g).collect(),
            };
            vec![Some(gi)]
        }),
    ))
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Reduces over `axes` (all axes when `None`); reduced axes are dropped.
pub fn reduce<T: Real>(op: ReduceOp, a: &Tensor<T>, axes: Option<&[usize]>) -> Result<Tensor<T>> {
    let shape = a.shape().to_vec();
    let mut reduced = vec![false; shape.len()];
    match axes {
        None => reduced.iter_mut().for_each(|r| *r = true),
        Some(axes) => {
            for &ax in axes {
                if ax >= shape.len() {
                    return Err(Error::invalid(format!(
                        "axis {ax} out of range for shape {shape:?}"
                    )));
                }
                if reduced[ax] {
                    return Err(Error::invalid(format!("axis {ax} repeated")));
                }
                reduced[ax] = true;
            }
        }
    }
    let out_shape: Vec<usize> = shape
        .iter()
        .zip(&reduced)
        .filter(|(_, &r)| !r)
        .map(|(&e, _)| e)
        .collect();
    let count: usize = shape
        .iter()
        .zip(&reduced)
        .filter(|(_, &r)| r)
        .map(|(&e, _)| e)
        .product();

    // output index of every input element
    let in_strides = strides(&shape);
    let out_strides_full: Vec<usize> = {
        let os = strides(&out_shape);
        let mut it = os.into_iter();
        reduced
            .iter()
            .map(|&r| if r { 0 } else { it.next().unwrap() })
            .collect()
    };
    let n = a.numel();
    let map: Vec<usize> = (0..n)
        .map(|i| {
            let mut rem = i;
            let mut o = 0;
            for d in 0..shape.len() {
                let idx = rem / in_strides[d];
                rem %= in_strides[d];
                o += idx * out_strides_full[d];
            }
            o
        })
        .collect();

    let out_n: usize = out_shape.iter().product();
    let mut out = vec![T::zero(); out_n];
    for (&o, &v) in map.iter().zip(a.data().iter()) {
        out[o] += v;
    }
    let scale = match op {
        ReduceOp::Sum => T::one(),
        ReduceOp::Mean => T::one() / T::of(count as f64),
    };
    if op == ReduceOp::Mean {
        out.iter_mut().for_each(|v| *v *= scale);
    }
    let name = match op {
        ReduceOp::Sum => "sum",
        ReduceOp::Mean => "mean",
    };
    Ok(Tensor::from_op(
        out,
        out_shape,
        name,
        vec![a.clone()],
        Box::new(move |g, _| vec![Some(map.iter().map(|&o| g[o] * scale).collect())]),
    ))
}

/// Concatenates along axis 1 (channels). All other extents must agree.
pub fn concat_channels<T: Real>(inputs: &[Tensor<T>]) -> Result<Tensor<T>> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::invalid("concat_channels of an empty list"))?;
    if first.ndim() < 2 {
        return Err(Error::InvalidShape(format!(
            "concat_channels needs rank >= 2, got {:?}",
            first.shape()
        )));
    }
    let base = first.shape();
    for t in &inputs[1..] {
        let s = t.shape();
        if s.len() != base.len() || s[0] != base[0] || s[2..] != base[2..] {
            return Err(Error::shape("concat_channels", base, s));
        }
    }
    let n = base[0];
    let inner: usize = base[2..].iter().product();
    let widths: Vec<usize> = inputs.iter().map(|t| t.shape()[1]).collect();
    let total: usize = widths.iter().sum();
    let mut shape = base.to_vec();
    shape[1] = total;

    let mut out = Vec::with_capacity(n * total * inner);
    for b in 0..n {
        for (t, &c) in inputs.iter().zip(&widths) {
            let d = t.data();
            out.extend_from_slice(&d[b * c * inner..(b + 1) * c * inner]);
        }
    }
    Ok(Tensor::from_op(
        out,
        shape,
        "concat_channels",
        inputs.to_vec(),
        Box::new(move |g, needs| {
            let mut grads: Vec<Option<Vec<T>>> = needs
                .iter()
                .zip(&widths)
                .map(|(&need, &c)| need.then(|| Vec::with_capacity(n * c * inner)))
                .collect();
            let mut off = 0;
            for _ in 0..n {
                for (slot, &c) in grads.iter_mut().zip(&widths) {
                    let len = c * inner;
                    if let Some(v) = slot {
                        v.extend_from_slice(&g[off..off + len]);
                    }
                    off += len;
                }
            }
            grads
        }),
    ))
}

/// Splits along axis 1 into consecutive groups of the given widths.
pub fn split_channels<T: Real>(x: &Tensor<T>, widths: &[usize]) -> Result<Vec<Tensor<T>>> {
    if x.ndim() < 2 {
        return Err(Error::InvalidShape(format!(
            "split_channels needs rank >= 2, got {:?}",
            x.shape()
        )));
    }
    let c = x.shape()[1];
    if widths.iter().sum::<usize>() != c || widths.contains(&0) {
        return Err(Error::invalid(format!(
            "split widths {widths:?} do not partition {c} channels"
        )));
    }
    let n = x.shape()[0];
    let inner: usize = x.shape()[2..].iter().product();
    let mut start = 0;
    let mut parts = Vec::with_capacity(widths.len());
    for &w in widths {
        let mut shape = x.shape().to_vec();
        shape[1] = w;
        let d = x.data();
        let mut out = Vec::with_capacity(n * w * inner);
        for b in 0..n {
            let base = (b * c + start) * inner;
            out.extend_from_slice(&d[base..base + w * inner]);
        }
        drop(d);
        let s = start;
        parts.push(Tensor::from_op(
            out,
            shape,
            "split_channels",
            vec![x.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![T::zero(); n * c * inner];
                for b in 0..n {
                    let dst = (b * c + s) * inner;
                    let src = b * w * inner;
                    gx[dst..dst + w * inner].copy_from_slice(&g[src..src + w * inner]);
                }
                vec![Some(gx)]
            }),
        ));
        start += w;
    }
    Ok(parts)
}

/// Multiplies by a constant.
pub fn scale<T: Real>(a: &Tensor<T>, c: T) -> Tensor<T> {
    let out = a.data().iter().map(|&v| v * c).collect();
    Tensor::from_op(
        out,
        a.shape().to_vec(),
        "scale",
        vec![a.clone()],
        Box::new(move |g, _| vec![Some(g.iter().map(|&x| x * c).collect())]),
    )
}

impl<T: Real> Tensor<T> {
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(BinaryOp::Add, self, other)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(BinaryOp::Sub, self, other)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(BinaryOp::Mul, self, other)
    }

    pub fn relu(&self) -> Result<Tensor<T>> {
        unary(UnaryOp::Relu, self)
    }

    pub fn log(&self) -> Result<Tensor<T>> {
        unary(UnaryOp::Log, self)
    }

    pub fn exp(&self) -> Result<Tensor<T>> {
        unary(UnaryOp::Exp, self)
    }

    pub fn neg(&self) -> Result<Tensor<T>> {
        unary(UnaryOp::Neg, self)
    }

    pub fn scale(&self, c: T) -> Tensor<T> {
        scale(self, c)
    }

    pub fn sum(&self) -> Result<Tensor<T>> {
        reduce(ReduceOp::Sum, self, None)
    }

    pub fn mean(&self) -> Result<Tensor<T>> {
        reduce(ReduceOp::Mean, self, None)
    }

    pub fn sum_axes(&self, axes: &[usize]) -> Result<Tensor<T>> {
        reduce(ReduceOp::Sum, self, Some(axes))
    }

    pub fn mean_axes(&self, axes: &[usize]) -> Result<Tensor<T>> {
        reduce(ReduceOp::Mean, self, Some(axes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64], s: &[usize]) -> Tensor<f64> {
        Tensor::from_vec(v.to_vec(), s).unwrap()
    }

    fn p(v: &[f64], s: &[usize]) -> Tensor<f64> {
        Tensor::param(v.to_vec(), s).unwrap()
    }

    #[test]
    fn add_and_relu() {
        assert_eq!(t(&[1., 2.], &[2]).add(&t(&[3., 4.], &[2])).unwrap().to_vec(), vec![4., 6.]);
        assert_eq!(t(&[-1., 0., 2.], &[3]).relu().unwrap().to_vec(), vec![0., 0., 2.]);
    }

    #[test]
    fn shape_mismatch_is_error() {
        let e = t(&[1., 2.], &[2]).add(&t(&[1., 2., 3.], &[3]));
        assert!(matches!(e, Err(Error::ShapeMismatch { .. })));
        // a 1-element rank-1 tensor is not a scalar
        assert!(t(&[1., 2.], &[2]).mul(&t(&[2.], &[1])).is_err());
    }

    #[test]
    fn scalar_broadcast_and_its_gradient() {
        let x = p(&[1., 2., 3.], &[3]);
        let s = Tensor::scalar(2.0).to_param();
        let y = x.mul(&s).unwrap();
        assert_eq!(y.to_vec(), vec![2., 4., 6.]);
        y.sum().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2., 2., 2.]);
        assert_eq!(s.grad().unwrap(), vec![6.]);
    }

    #[test]
    fn log_rejects_non_positive() {
        assert!(matches!(t(&[1., 0.], &[2]).log(), Err(Error::Domain { .. })));
        assert!(t(&[1., -3.], &[2]).log().is_err());
    }

    #[test]
    fn square_gradient() {
        let x = p(&[1., 2., 3.], &[3]);
        x.mul(&x).unwrap().sum().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2., 4., 6.]);
    }

    #[test]
    fn diamond_accumulates() {
        let x = p(&[5.], &[]);
        x.add(&x).unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.]);
    }

    #[test]
    fn sum_and_mean() {
        assert_eq!(t(&[1., 2., 3.], &[3]).sum().unwrap().item().unwrap(), 6.);
        let x = p(&[1., 2., 3., 4.], &[4]);
        x.mean().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.25; 4]);
    }

    #[test]
    fn reduce_over_axes() {
        let x = t(&[1., 2., 3., 4., 5., 6.], &[2, 3]);
        assert_eq!(x.sum_axes(&[0]).unwrap().to_vec(), vec![5., 7., 9.]);
        assert_eq!(x.sum_axes(&[1]).unwrap().to_vec(), vec![6., 15.]);
        assert_eq!(x.mean_axes(&[1]).unwrap().shape(), &[2]);
        assert_eq!(x.mean_axes(&[]).unwrap().to_vec(), x.to_vec());
        assert!(x.sum_axes(&[2]).is_err());
        assert!(x.sum_axes(&[1, 1]).is_err());
    }

    #[test]
    fn exp_and_neg_backward() {
        let x = p(&[0.5, -1.0], &[2]);
        x.exp().unwrap().neg().unwrap().sum().unwrap().backward().unwrap();
        let g = x.grad().unwrap();
        assert!((g[0] + 0.5f64.exp()).abs() < 1e-15);
        assert!((g[1] + (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn concat_shapes_and_gradients() {
        let a = Tensor::<f64>::param(vec![1.0; 4 * 64], &[1, 4, 8, 8]).unwrap();
        let b = Tensor::<f64>::param(vec![2.0; 2 * 64], &[1, 2, 8, 8]).unwrap();
        let c = concat_channels(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(c.shape(), &[1, 6, 8, 8]);
        c.sum().unwrap().backward().unwrap();
        assert!(a.grad().unwrap().iter().all(|&g| g == 1.0));
        assert!(b.grad().unwrap().iter().all(|&g| g == 1.0));
    }

    #[test]
    fn concat_single_is_identity_and_errors() {
        let a = t(&[1., 2., 3., 4.], &[1, 1, 2, 2]);
        assert_eq!(concat_channels(std::slice::from_ref(&a)).unwrap().to_vec(), a.to_vec());
        assert!(concat_channels::<f64>(&[]).is_err());
        let b = t(&[1., 2.], &[1, 1, 2, 1]);
        assert!(concat_channels(&[a, b]).is_err());
    }

    #[test]
    fn concat_interleaves_batches() {
        let a = t(&[1., 2.], &[2, 1, 1]);
        let b = t(&[3., 4., 5., 6.], &[2, 2, 1]);
        let c = concat_channels(&[a, b]).unwrap();
        assert_eq!(c.to_vec(), vec![1., 3., 4., 2., 5., 6.]);
    }
}
