//! Layers: convolutions, pooling, the anti-aliased downsampler,
//! normalization, spatial dropout and channel softmax.

mod conv;
mod dropout;
mod norm;
mod pool;
mod softmax;

pub use conv::{conv2d, transpose_conv2d, Conv2DParams};
pub use dropout::spatial_dropout;
pub use norm::{norm_layer, InstanceNorm};
pub use pool::{
    depthwise_fixed, gaussian_blurpool, maxpool2d, Downsampler, DownsamplerKind, GaussianKernel,
};
pub use softmax::softmax_channels;

use crate::autograd::Tensor;
use crate::error::Result;
use crate::real::Real;
use crate::Rng;

/// The operational block: 3x3 convolution, instance norm, ReLU.
#[derive(Debug, Clone)]
pub struct ConvBlock<T: Real = f32> {
    pub conv: Conv2DParams<T>,
    pub norm: InstanceNorm<T>,
}

impl<T: Real> ConvBlock<T> {
    pub fn new(in_ch: usize, out_ch: usize, rng: &mut Rng) -> Result<Self> {
        Ok(ConvBlock {
            // bias is redundant ahead of the norm's shift
            conv: Conv2DParams::init(in_ch, out_ch, 3, 1, 1, false, rng)?,
            norm: InstanceNorm::new(out_ch)?,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.conv.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.conv.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.norm.forward(&conv2d(x, &self.conv)?)?.relu()
    }

    pub fn named_parameters(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        out.push((format!("{prefix}.conv.weight"), self.conv.weight.clone()));
        out.push((format!("{prefix}.norm.scale"), self.norm.scale.clone()));
        out.push((format!("{prefix}.norm.shift"), self.norm.shift.clone()));
    }
}
