//! Max pooling and the blur-pooled (anti-aliased) downsampler.

use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::real::Real;

fn dims4<T: Real>(x: &Tensor<T>, what: &str) -> Result<[usize; 4]> {
    x.shape().try_into().map_err(|_| {
        Error::InvalidShape(format!("{what} expects (N, C, H, W), got {:?}", x.shape()))
    })
}

/// Max over `k x k` windows at the given stride. The backward pass routes
/// each output gradient to the first maximal element in row-major window
/// order.
pub fn maxpool2d<T: Real>(x: &Tensor<T>, k: usize, stride: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = dims4(x, "maxpool2d")?;
    if k == 0 || stride == 0 {
        return Err(Error::invalid("maxpool2d kernel and stride must be positive"));
    }
    if k > h || k > w {
        return Err(Error::InvalidShape(format!(
            "maxpool2d window {k} larger than input {h}x{w}"
        )));
    }
    let ho = (h - k) / stride + 1;
    let wo = (w - k) / stride + 1;
    let xd = x.data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut argmax = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let base = plane * h * w;
        for i in 0..ho {
            for j in 0..wo {
                let mut best = base + i * stride * w + j * stride;
                for a in 0..k {
                    for b in 0..k {
                        let idx = base + (i * stride + a) * w + j * stride + b;
                        if xd[idx] > xd[best] {
                            best = idx;
                        }
                    }
                }
                out.push(xd[best]);
                argmax.push(best);
            }
        }
    }
    drop(xd);
    let len = n * c * h * w;
    Ok(Tensor::from_op(
        out,
        vec![n, c, ho, wo],
        "maxpool2d",
        vec![x.clone()],
        Box::new(move |g, _| {
            let mut gx = vec![T::zero(); len];
            for (&src, &gv) in argmax.iter().zip(g) {
                gx[src] += gv;
            }
            vec![Some(gx)]
        }),
    ))
}

/// Fixed, normalized 2D Gaussian: the outer product of a normalized 1D
/// profile sampled at integer offsets from the centre.
#[derive(Debug, Clone)]
pub struct GaussianKernel<T: Real = f32> {
    size: usize,
    sigma: f64,
    weights: Tensor<T>,
}

impl<T: Real> GaussianKernel<T> {
    pub const DEFAULT_SIZE: usize = 5;
    pub const DEFAULT_SIGMA: f64 = 1.25;

    pub fn new(size: usize, sigma: f64) -> Result<Self> {
        if size.is_multiple_of(2) {
            return Err(Error::invalid(format!("gaussian kernel size {size} must be odd")));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!("gaussian sigma {sigma} must be positive")));
        }
        let profile = Self::profile(size, sigma);
        let w: Vec<T> = profile
            .iter()
            .flat_map(|&a| profile.iter().map(move |&b| T::of(a * b)))
            .collect();
        // constant: never handed to the optimizer
        let weights = Tensor::from_vec(w, &[size, size])?;
        Ok(GaussianKernel { size, sigma, weights })
    }

    /// Normalized 1D profile `exp(-d^2 / 2 sigma^2) / Z`, `d = -r..=r`.
    pub fn profile(size: usize, sigma: f64) -> Vec<f64> {
        let r = (size / 2) as f64;
        let raw: Vec<f64> = (0..size)
            .map(|i| {
                let d = i as f64 - r;
                (-d * d / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        let z: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / z).collect()
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// `size x size` weights, row-major.
    pub fn weights(&self) -> &Tensor<T> {
        &self.weights
    }
}

impl<T: Real> Default for GaussianKernel<T> {
    fn default() -> Self {
        Self::new(Self::DEFAULT_SIZE, Self::DEFAULT_SIGMA).expect("default kernel is valid")
    }
}

fn reflect(i: isize, len: usize) -> usize {
    let len = len as isize;
    let i = if i < 0 { -i } else { i };
    let i = if i >= len { 2 * (len - 1) - i } else { i };
    i as usize
}

/// Depthwise convolution with one fixed kernel shared by every channel, over
/// a reflection-padded input; differentiable with respect to `x` only.
pub fn depthwise_fixed<T: Real>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = dims4(x, "depthwise_fixed")?;
    let [kh, kw]: [usize; 2] = kernel
        .shape()
        .try_into()
        .map_err(|_| Error::InvalidShape(format!("kernel must be 2D, got {:?}", kernel.shape())))?;
    if stride == 0 {
        return Err(Error::invalid("stride must be at least 1"));
    }
    if pad >= h || pad >= w {
        return Err(Error::InvalidShape(format!(
            "reflection padding {pad} needs extents above it, got {h}x{w}"
        )));
    }
    if h + 2 * pad < kh || w + 2 * pad < kw {
        return Err(Error::InvalidShape(format!(
            "kernel {kh}x{kw} larger than padded input {}x{}",
            h + 2 * pad,
            w + 2 * pad
        )));
    }
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (w + 2 * pad - kw) / stride + 1;
    let k = kernel.to_vec();
    let xd = x.data();

    // (output index, input index, kernel index) taps of one plane
    let mut taps: Vec<(usize, usize, usize)> = Vec::with_capacity(ho * wo * kh * kw);
    for i in 0..ho {
        for j in 0..wo {
            for a in 0..kh {
                let ii = reflect((i * stride + a) as isize - pad as isize, h);
                for b in 0..kw {
                    let jj = reflect((j * stride + b) as isize - pad as isize, w);
                    taps.push((i * wo + j, ii * w + jj, a * kw + b));
                }
            }
        }
    }
    let mut out = vec![T::zero(); n * c * ho * wo];
    for plane in 0..n * c {
        let src = &xd[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * ho * wo..(plane + 1) * ho * wo];
        for &(o, i, t) in &taps {
            dst[o] += k[t] * src[i];
        }
    }
    drop(xd);
    Ok(Tensor::from_op(
        out,
        vec![n, c, ho, wo],
        "depthwise_fixed",
        vec![x.clone()],
        Box::new(move |g, _| {
            let mut gx = vec![T::zero(); n * c * h * w];
            for plane in 0..n * c {
                let gsrc = &g[plane * ho * wo..(plane + 1) * ho * wo];
                let dst = &mut gx[plane * h * w..(plane + 1) * h * w];
                for &(o, i, t) in &taps {
                    dst[i] += k[t] * gsrc[o];
                }
            }
            vec![Some(gx)]
        }),
    ))
}

/// Anti-aliased downsampling: max pool (k 2, stride 1) followed by the
/// Gaussian filter at stride 2, reflection padding `size / 2`. An even `H x W` map
/// becomes `H/2 x W/2`; channel count is unchanged.
pub fn gaussian_blurpool<T: Real>(x: &Tensor<T>, g: &GaussianKernel<T>) -> Result<Tensor<T>> {
    let [_, _, h, w] = dims4(x, "gaussian_blurpool")?;
    let min = g.size() + 1;
    if h < min || w < min {
        return Err(Error::InvalidShape(format!(
            "gaussian_blurpool needs spatial extents >= {min}, got {h}x{w}"
        )));
    }
    let pooled = maxpool2d(x, 2, 1)?;
    depthwise_fixed(&pooled, g.weights(), 2, g.size() / 2)
}

/// Spatial downsampling used between DLA scales.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DownsamplerKind {
    /// Strided 2x2 max pooling.
    Pool,
    /// Max pool stride 1, then Gaussian filter stride 2.
    #[default]
    Gconv,
}

impl std::str::FromStr for DownsamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pool" => Ok(DownsamplerKind::Pool),
            "gconv" => Ok(DownsamplerKind::Gconv),
            other => Err(Error::Config(format!("unknown downsampler {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Downsampler<T: Real = f32> {
    kind: DownsamplerKind,
    kernel: Option<GaussianKernel<T>>,
}

impl<T: Real> Downsampler<T> {
    pub fn new(kind: DownsamplerKind) -> Self {
        let kernel = (kind == DownsamplerKind::Gconv).then(GaussianKernel::default);
        Downsampler { kind, kernel }
    }

    pub fn kind(&self) -> DownsamplerKind {
        self.kind
    }

    pub fn kernel(&self) -> Option<&GaussianKernel<T>> {
        self.kernel.as_ref()
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match &self.kernel {
            Some(g) => gaussian_blurpool(x, g),
            None => maxpool2d(x, 2, 2),
        }
    }
}
