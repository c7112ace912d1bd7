use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::real::Real;

/// Per-sample, per-channel normalization over the spatial extent followed by
/// a learnable scale and shift.
#[derive(Debug, Clone)]
pub struct InstanceNorm<T: Real = f32> {
    pub scale: Tensor<T>,
    pub shift: Tensor<T>,
    pub eps: f64,
}

impl<T: Real> InstanceNorm<T> {
    pub const DEFAULT_EPS: f64 = 1e-6;

    pub fn new(channels: usize) -> Result<Self> {
        Ok(InstanceNorm {
            scale: Tensor::param(vec![T::one(); channels], &[channels])?,
            shift: Tensor::param(vec![T::zero(); channels], &[channels])?,
            eps: Self::DEFAULT_EPS,
        })
    }

    pub fn channels(&self) -> usize {
        self.scale.numel()
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        norm_layer(x, &self.scale, &self.shift, self.eps)
    }

    pub fn parameters(&self) -> Vec<Tensor<T>> {
        vec![self.scale.clone(), self.shift.clone()]
    }
}

/// `scale[c] * (x - mean) / sqrt(var + eps) + shift[c]`, statistics taken per
/// `(sample, channel)` plane with the population variance.
pub fn norm_layer<T: Real>(x: &Tensor<T>, scale: &Tensor<T>, shift: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
    if x.ndim() < 3 {
        return Err(Error::InvalidShape(format!(
            "norm_layer expects (N, C, ...), got {:?}",
            x.shape()
        )));
    }
    let (n, c) = (x.shape()[0], x.shape()[1]);
    if scale.shape() != [c] || shift.shape() != [c] {
        return Err(Error::shape("norm_layer channels", &[c], scale.shape()));
    }
    let m: usize = x.shape()[2..].iter().product();
    let mf = m as f64;
    let xd = x.data();
    let gamma = scale.to_vec();
    let beta = shift.to_vec();

    let mut xhat = vec![T::zero(); n * c * m];
    let mut inv_std = vec![T::zero(); n * c];
    let mut out = vec![T::zero(); n * c * m];
    for plane in 0..n * c {
        let ch = plane % c;
        let src = &xd[plane * m..(plane + 1) * m];
        let mean = src.iter().map(|v| v.f64()).sum::<f64>() / mf;
        let var = src.iter().map(|v| (v.f64() - mean).powi(2)).sum::<f64>() / mf;
        let is = 1.0 / (var + eps).sqrt();
        inv_std[plane] = T::of(is);
        let mean = T::of(mean);
        let is = T::of(is);
        for i in 0..m {
            let xh = (src[i] - mean) * is;
            xhat[plane * m + i] = xh;
            out[plane * m + i] = gamma[ch] * xh + beta[ch];
        }
    }
    drop(xd);
    Ok(Tensor::from_op(
        out,
        x.shape().to_vec(),
        "norm_layer",
        vec![x.clone(), scale.clone(), shift.clone()],
        Box::new(move |g, needs| {
            let mut gx = needs[0].then(|| vec![T::zero(); n * c * m]);
            let mut gg = vec![T::zero(); c];
            let mut gb = vec![T::zero(); c];
            let mt = T::of(mf);
            for plane in 0..n * c {
                let ch = plane % c;
                let gs = &g[plane * m..(plane + 1) * m];
                let xs = &xhat[plane * m..(plane + 1) * m];
                let sum_g: T = gs.iter().copied().sum();
                let sum_gx: T = gs.iter().zip(xs).map(|(&a, &b)| a * b).sum();
                gb[ch] += sum_g;
                gg[ch] += sum_gx;
                if let Some(gx) = gx.as_mut() {
                    // dx = gamma * inv_std / m * (m g - sum g - xhat sum(g xhat))
                    let k = gamma[ch] * inv_std[plane] / mt;
                    let dst = &mut gx[plane * m..(plane + 1) * m];
                    for i in 0..m {
                        dst[i] = k * (mt * gs[i] - sum_g - xs[i] * sum_gx);
                    }
                }
            }
            vec![gx, needs[1].then_some(gg), needs[2].then_some(gb)]
        }),
    ))
}
