use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::real::Real;

/// Softmax over axis 1 of `(N, K, ...)`, max-subtracted.
pub fn softmax_channels<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.ndim() < 2 || x.shape()[1] < 2 {
        return Err(Error::InvalidShape(format!(
            "softmax_channels expects (N, K >= 2, ...), got {:?}",
            x.shape()
        )));
    }
    let (n, k) = (x.shape()[0], x.shape()[1]);
    let m: usize = x.shape()[2..].iter().product();
    let xd = x.data();
    let mut out = vec![T::zero(); xd.len()];
    for b in 0..n {
        let base = b * k * m;
        for p in 0..m {
            let at = |c: usize| base + c * m + p;
            let mx = (0..k).map(|c| xd[at(c)]).fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for c in 0..k {
                let e = (xd[at(c)] - mx).exp();
                out[at(c)] = e;
                z += e;
            }
            for c in 0..k {
                out[at(c)] = out[at(c)] / z;
            }
        }
    }
    drop(xd);
    let probs = out.clone();
    Ok(Tensor::from_op(
        out,
        x.shape().to_vec(),
        "softmax_channels",
        vec![x.clone()],
        Box::new(move |g, _| {
            let mut gx = vec![T::zero(); g.len()];
            for b in 0..n {
                let base = b * k * m;
                for p in 0..m {
                    let at = |c: usize| base + c * m + p;
                    let dot: T = (0..k).map(|c| g[at(c)] * probs[at(c)]).sum();
                    for c in 0..k {
                        gx[at(c)] = probs[at(c)] * (g[at(c)] - dot);
                    }
                }
            }
            vec![Some(gx)]
        }),
    ))
}
