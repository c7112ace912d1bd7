//! 2D convolution and transpose convolution via im2col + GEMM.

use rand_distr::{Distribution, Normal};

use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::Rng;

/// Weights and geometry of a (transpose) convolution.
///
/// `weight` is `(out_ch, in_ch, kh, kw)` for [`conv2d`]. [`transpose_conv2d`]
/// uses the same tensor as the adjoint map, so it consumes `out_ch` channels
/// and produces `in_ch`.
#[derive(Debug, Clone)]
pub struct Conv2DParams<T: Real = f32> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub stride: usize,
    pub padding: usize,
    pub output_padding: usize,
}

impl<T: Real> Conv2DParams<T> {
    pub fn new(weight: Tensor<T>, bias: Option<Tensor<T>>, stride: usize, padding: usize) -> Result<Self> {
        if weight.ndim() != 4 {
            return Err(Error::InvalidShape(format!(
                "conv weight must be rank 4, got {:?}",
                weight.shape()
            )));
        }
        if stride == 0 {
            return Err(Error::invalid("stride must be at least 1"));
        }
        if let Some(b) = &bias {
            let want = [weight.shape()[0]];
            if b.shape() != want {
                return Err(Error::shape("conv bias", b.shape(), &want));
            }
        }
        Ok(Conv2DParams {
            weight,
            bias,
            stride,
            padding,
            output_padding: 0,
        })
    }

    /// He-normal initialized trainable convolution with zero bias.
    pub fn init(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        let fan_in = in_ch * kernel * kernel;
        let w = he_normal(out_ch * fan_in, fan_in, rng);
        let weight = Tensor::param(w, &[out_ch, in_ch, kernel, kernel])?;
        let bias = if bias {
            Some(Tensor::param(vec![T::zero(); out_ch], &[out_ch])?)
        } else {
            None
        };
        Self::new(weight, bias, stride, padding)
    }

    /// Trainable upsampler producing `out_ch` channels from `in_ch`, with
    /// kernel 3, stride 2, padding 1 and output padding 1: `H x W` becomes
    /// exactly `2H x 2W`.
    pub fn init_upsample(in_ch: usize, out_ch: usize, rng: &mut Rng) -> Result<Self> {
        // the adjoint of a conv2d mapping out_ch -> in_ch
        let fan_in = in_ch * 9 / 4;
        let w = he_normal(in_ch * out_ch * 9, fan_in.max(1), rng);
        let weight = Tensor::param(w, &[in_ch, out_ch, 3, 3])?;
        let mut p = Self::new(weight, None, 2, 1)?;
        p.bias = Some(Tensor::param(vec![T::zero(); out_ch], &[out_ch])?);
        p.output_padding = 1;
        Ok(p)
    }

    pub fn kernel(&self) -> (usize, usize) {
        let s = self.weight.shape();
        (s[2], s[3])
    }

    pub fn parameters(&self) -> Vec<Tensor<T>> {
        let mut v = vec![self.weight.clone()];
        v.extend(self.bias.clone());
        v
    }
}

fn he_normal<T: Real>(n: usize, fan_in: usize, rng: &mut Rng) -> Vec<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("finite std");
    (0..n).map(|_| T::of(dist.sample(rng))).collect()
}

/// Geometry of a forward convolution from a `c x h x w` plane stack.
#[derive(Debug, Clone, Copy)]
struct Geom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geom {
    fn new(c: usize, h: usize, w: usize, kh: usize, kw: usize, stride: usize, pad: usize) -> Result<Self> {
        let hp = h + 2 * pad;
        let wp = w + 2 * pad;
        if hp < kh || wp < kw {
            return Err(Error::InvalidShape(format!(
                "kernel {kh}x{kw} larger than padded input {hp}x{wp}"
            )));
        }
        Ok(Geom {
            c,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            ho: (hp - kh) / stride + 1,
            wo: (wp - kw) / stride + 1,
        })
    }

    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }
}

/// Unfolds one sample `x (c, h, w)` into `cols (c*kh*kw, ho*wo)`.
fn im2col<T: Real>(x: &[T], g: &Geom, cols: &mut [T]) {
    let p = g.cols();
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oi in 0..g.ho {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oi * g.wo..(oi + 1) * g.wo];
                    if ii < 0 || ii >= g.h as isize {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[ii as usize * g.w..(ii as usize + 1) * g.w];
                    for (oj, v) in line.iter_mut().enumerate() {
                        let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                        *v = if jj < 0 || jj >= g.w as isize {
                            T::zero()
                        } else {
                            src[jj as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds `cols` back into `x (c, h, w)`.
fn col2im<T: Real>(cols: &[T], g: &Geom, x: &mut [T]) {
    let p = g.cols();
    for c in 0..g.c {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oi in 0..g.ho {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    if ii < 0 || ii >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[ii as usize * g.w..(ii as usize + 1) * g.w];
                    for oj in 0..g.wo {
                        let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                        if jj >= 0 && (jj as usize) < g.w {
                            dst[jj as usize] += src[oi * g.wo + oj];
                        }
                    }
                }
            }
        }
    }
}

fn dims4<T: Real>(x: &Tensor<T>, what: &str) -> Result<[usize; 4]> {
    x.shape().try_into().map_err(|_| {
        Error::InvalidShape(format!("{what} expects (N, C, H, W), got {:?}", x.shape()))
    })
}

fn add_bias<T: Real>(out: &mut [T], bias: &[T], n: usize, plane: usize) {
    let c = bias.len();
    for b in 0..n {
        for (o, &bv) in bias.iter().enumerate() {
            let base = (b * c + o) * plane;
            out[base..base + plane].iter_mut().for_each(|v| *v += bv);
        }
    }
}

fn bias_grad<T: Real>(g: &[T], n: usize, c: usize, plane: usize) -> Vec<T> {
    let mut gb = vec![T::zero(); c];
    for b in 0..n {
        for (o, acc) in gb.iter_mut().enumerate() {
            let base = (b * c + o) * plane;
            *acc += g[base..base + plane].iter().copied().sum::<T>();
        }
    }
    gb
}

/// `x (N, C, H, W)` convolved with `weight (O, C, kh, kw)`:
/// `H' = (H + 2 pad - kh) / stride + 1`.
pub fn conv2d<T: Real>(x: &Tensor<T>, p: &Conv2DParams<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = dims4(x, "conv2d")?;
    let [o, ci, kh, kw] = dims4(&p.weight, "conv2d weight")?;
    if ci != c {
        return Err(Error::shape("conv2d channels", &[c], &[ci]));
    }
    let g = Geom::new(c, h, w, kh, kw, p.stride, p.padding)?;
    let (rows, cols) = (g.rows(), g.cols());

    let xd = x.data();
    let wd = p.weight.data();
    let mut saved = vec![T::zero(); n * rows * cols];
    let mut out = vec![T::zero(); n * o * cols];
    for b in 0..n {
        let col = &mut saved[b * rows * cols..(b + 1) * rows * cols];
        im2col(&xd[b * c * h * w..(b + 1) * c * h * w], &g, col);
        T::gemm(o, rows, cols, &wd, false, col, false, &mut out[b * o * cols..(b + 1) * o * cols], false);
    }
    drop((xd, wd));
    if let Some(bias) = &p.bias {
        add_bias(&mut out, &bias.data(), n, cols);
    }

    let mut inputs = vec![x.clone(), p.weight.clone()];
    inputs.extend(p.bias.clone());
    let weight = p.weight.clone();
    Ok(Tensor::from_op(
        out,
        vec![n, o, g.ho, g.wo],
        "conv2d",
        inputs,
        Box::new(move |grad, needs| {
            let wd = weight.data();
            let mut gx = needs[0].then(|| vec![T::zero(); n * c * h * w]);
            let mut gw = needs[1].then(|| vec![T::zero(); o * rows]);
            let mut dcol = vec![T::zero(); rows * cols];
            for b in 0..n {
                let gb = &grad[b * o * cols..(b + 1) * o * cols];
                if let Some(gw) = gw.as_mut() {
                    let col = &saved[b * rows * cols..(b + 1) * rows * cols];
                    T::gemm(o, cols, rows, gb, false, col, true, gw, true);
                }
                if let Some(gx) = gx.as_mut() {
                    T::gemm(rows, o, cols, &wd, true, gb, false, &mut dcol, false);
                    col2im(&dcol, &g, &mut gx[b * c * h * w..(b + 1) * c * h * w]);
                }
            }
            let mut grads = vec![gx, gw];
            if needs.len() > 2 {
                grads.push(needs[2].then(|| bias_grad(grad, n, o, cols)));
            }
            grads
        }),
    ))
}

/// Transpose convolution: the adjoint of [`conv2d`] with the same weight,
/// mapping `weight.shape()[0]` channels to `weight.shape()[1]`. Output extent
/// `(H - 1) stride - 2 pad + kh + output_padding`.
pub fn transpose_conv2d<T: Real>(x: &Tensor<T>, p: &Conv2DParams<T>) -> Result<Tensor<T>> {
    let [n, ci, hi, wi] = dims4(x, "transpose_conv2d")?;
    let [wi_ch, co, kh, kw] = dims4(&p.weight, "transpose_conv2d weight")?;
    if wi_ch != ci {
        return Err(Error::shape("transpose_conv2d channels", &[ci], &[wi_ch]));
    }
    if p.output_padding >= p.stride {
        return Err(Error::invalid(format!(
            "output_padding {} must be below stride {}",
            p.output_padding, p.stride
        )));
    }
    let extent = |i: usize, k: usize| -> Result<usize> {
        let full = (i - 1) * p.stride + k + p.output_padding;
        full.checked_sub(2 * p.padding)
            .filter(|&e| e > 0)
            .ok_or_else(|| Error::InvalidShape("transpose_conv2d output extent is not positive".into()))
    };
    let (ho, wo) = (extent(hi, kh)?, extent(wi, kw)?);
    // the forward convolution that maps the output back onto the input grid
    let g = Geom::new(co, ho, wo, kh, kw, p.stride, p.padding)?;
    debug_assert_eq!((g.ho, g.wo), (hi, wi));
    let (rows, cols) = (g.rows(), g.cols());

    let xd = x.data();
    let wd = p.weight.data();
    let mut out = vec![T::zero(); n * co * ho * wo];
    let mut col = vec![T::zero(); rows * cols];
    for b in 0..n {
        T::gemm(rows, ci, cols, &wd, true, &xd[b * ci * cols..(b + 1) * ci * cols], false, &mut col, false);
        col2im(&col, &g, &mut out[b * co * ho * wo..(b + 1) * co * ho * wo]);
    }
    drop((xd, wd));
    if let Some(bias) = &p.bias {
        if bias.shape() != [co] {
            return Err(Error::shape("transpose_conv2d bias", bias.shape(), &[co]));
        }
        add_bias(&mut out, &bias.data(), n, ho * wo);
    }

    let mut inputs = vec![x.clone(), p.weight.clone()];
    inputs.extend(p.bias.clone());
    let weight = p.weight.clone();
    let input = x.clone();
    Ok(Tensor::from_op(
        out,
        vec![n, co, ho, wo],
        "transpose_conv2d",
        inputs,
        Box::new(move |grad, needs| {
            let wd = weight.data();
            let xd = input.data();
            let mut gx = needs[0].then(|| vec![T::zero(); n * ci * cols]);
            let mut gw = needs[1].then(|| vec![T::zero(); ci * rows]);
            let mut gcol = vec![T::zero(); rows * cols];
            for b in 0..n {
                im2col(&grad[b * co * ho * wo..(b + 1) * co * ho * wo], &g, &mut gcol);
                if let Some(gx) = gx.as_mut() {
                    T::gemm(ci, rows, cols, &wd, false, &gcol, false, &mut gx[b * ci * cols..(b + 1) * ci * cols], false);
                }
                if let Some(gw) = gw.as_mut() {
                    T::gemm(ci, cols, rows, &xd[b * ci * cols..(b + 1) * ci * cols], false, &gcol, true, gw, true);
                }
            }
            let mut grads = vec![gx, gw];
            if needs.len() > 2 {
                grads.push(needs[2].then(|| bias_grad(grad, n, co, ho * wo)));
            }
            grads
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: Vec<f64>, s: &[usize]) -> Tensor<f64> {
        Tensor::from_vec(v, s).unwrap()
    }

    #[test]
    fn identity_kernel() {
        let x = t((0..18).map(|v| v as f64).collect(), &[1, 2, 3, 3]);
        let mut w = vec![0.0; 4];
        w[0] = 1.0;
        w[3] = 1.0;
        let p = Conv2DParams::new(t(w, &[2, 2, 1, 1]), None, 1, 0).unwrap();
        assert_eq!(conv2d(&x, &p).unwrap().to_vec(), x.to_vec());
    }

    #[test]
    fn ones_kernel_on_constant() {
        let x = t(vec![2.5; 36], &[1, 1, 6, 6]);
        let p = Conv2DParams::new(t(vec![1.0; 9], &[1, 1, 3, 3]), None, 1, 0).unwrap();
        let y = conv2d(&x, &p).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        assert!(y.to_vec().iter().all(|&v| v == 22.5));
    }

    #[test]
    fn output_extent_formula() {
        let x = t(vec![0.0; 2 * 3 * 11 * 9], &[2, 3, 11, 9]);
        let p = Conv2DParams::new(t(vec![0.0; 4 * 3 * 3 * 3], &[4, 3, 3, 3]), None, 2, 1).unwrap();
        assert_eq!(conv2d(&x, &p).unwrap().shape(), &[2, 4, 6, 5]);
    }

    #[test]
    fn channel_mismatch_and_tiny_input() {
        let x = t(vec![0.0; 16], &[1, 1, 4, 4]);
        let p = Conv2DParams::new(t(vec![0.0; 18], &[1, 2, 3, 3]), None, 1, 0).unwrap();
        assert!(conv2d(&x, &p).is_err());
        let p = Conv2DParams::new(t(vec![0.0; 25], &[1, 1, 5, 5]), None, 1, 0).unwrap();
        assert!(conv2d(&x, &p).is_err());
    }

    #[test]
    fn transpose_identity_and_doubling() {
        let x = t((0..9).map(|v| v as f64).collect(), &[1, 1, 3, 3]);
        let p = Conv2DParams::new(t(vec![1.0], &[1, 1, 1, 1]), None, 1, 0).unwrap();
        assert_eq!(transpose_conv2d(&x, &p).unwrap().to_vec(), x.to_vec());

        let mut rng = <Rng as rand::SeedableRng>::seed_from_u64(1);
        let up = Conv2DParams::<f64>::init_upsample(3, 2, &mut rng).unwrap();
        let x = t(vec![0.5; 3 * 64], &[1, 3, 8, 8]);
        assert_eq!(transpose_conv2d(&x, &up).unwrap().shape(), &[1, 2, 16, 16]);
    }

    #[test]
    fn transpose_rejects_bad_output_padding() {
        let x = t(vec![0.0; 4], &[1, 1, 2, 2]);
        let mut p = Conv2DParams::new(t(vec![1.0; 9], &[1, 1, 3, 3]), None, 2, 1).unwrap();
        p.output_padding = 2;
        assert!(transpose_conv2d(&x, &p).is_err());
    }
}
