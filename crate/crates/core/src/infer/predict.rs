use crate::autograd::{no_grad, Tensor};
use crate::data::{normalize, Volume};
use crate::error::{Error, Result};
use crate::model::{CascadeNet, Phase};
use crate::real::Real;

/// Per-voxel class probabilities, `K x D x H x W`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVolume {
    pub classes: usize,
    pub dims: [usize; 3],
    pub data: Vec<f64>,
}

impl ProbVolume {
    pub fn voxels(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn class(&self, k: usize) -> &[f64] {
        let n = self.voxels();
        &self.data[k * n..(k + 1) * n]
    }

    /// Arg-max class per voxel (first maximum on ties). Voxels outside
    /// `mask` are background.
    pub fn argmax(&self, mask: Option<&[bool]>) -> Vec<u8> {
        let n = self.voxels();
        (0..n)
            .map(|i| {
                if mask.is_some_and(|m| !m[i]) {
                    return 0;
                }
                let mut best = 0;
                for k in 1..self.classes {
                    if self.data[k * n + i] > self.data[best * n + i] {
                        best = k;
                    }
                }
                best as u8
            })
            .collect()
    }
}

/// Window origins along an axis of length `n`: stride `extent / 2`, the last
/// window clamped to end at `n`.
pub fn tile_origins(n: usize, extent: usize) -> Vec<usize> {
    let stride = (extent / 2).max(1);
    let mut out: Vec<usize> = (0..=n - extent).step_by(stride).collect();
    if *out.last().unwrap() != n - extent {
        out.push(n - extent);
    }
    out
}

/// Accumulates overlapping tile probabilities of one `H x W` slice and
/// averages them.
#[derive(Debug, Clone)]
pub struct Stitcher {
    classes: usize,
    h: usize,
    w: usize,
    sums: Vec<f64>,
    counts: Vec<u32>,
}

impl Stitcher {
    pub fn new(classes: usize, h: usize, w: usize) -> Self {
        Stitcher {
            classes,
            h,
            w,
            sums: vec![0.0; classes * h * w],
            counts: vec![0; h * w],
        }
    }

    /// Adds a `K x P x P` tile whose top-left corner is `(r0, c0)`.
    pub fn add(&mut self, r0: usize, c0: usize, extent: usize, tile: &[f64]) {
        let m = extent * extent;
        let plane = self.h * self.w;
        for r in 0..extent {
            for c in 0..extent {
                let dst = (r0 + r) * self.w + c0 + c;
                self.counts[dst] += 1;
                for k in 0..self.classes {
                    self.sums[k * plane + dst] += tile[k * m + r * extent + c];
                }
            }
        }
    }

    /// Mean probabilities, `K x H x W`. Every pixel must be covered.
    pub fn finish(self) -> Vec<f64> {
        let plane = self.h * self.w;
        let mut out = self.sums;
        for k in 0..self.classes {
            for (v, &n) in out[k * plane..(k + 1) * plane].iter_mut().zip(&self.counts) {
                *v /= n as f64;
            }
        }
        out
    }
}

/// Stage-3 probabilities over the whole volume, slice by slice, from
/// half-overlapping `extent x extent` tiles. The volume is normalized first.
pub fn predict_volume<T: Real>(vol: &Volume, net: &CascadeNet<T>, extent: usize) -> Result<ProbVolume> {
    let cfg = net.config();
    if vol.channels != cfg.mri_channels {
        return Err(Error::shape("predict_volume channels", &[cfg.mri_channels], &[vol.channels]));
    }
    let [d, h, w] = vol.dims;
    if extent == 0 || h < extent || w < extent {
        return Err(Error::invalid(format!("patch extent {extent} does not fit {h} x {w}")));
    }
    if !extent.is_multiple_of(cfg.extent_multiple()) {
        return Err(Error::invalid(format!(
            "patch extent {extent} must be a multiple of {}",
            cfg.extent_multiple()
        )));
    }
    let vol = normalize(vol)?;
    let k = cfg.num_classes;
    let c = vol.channels;
    let n = vol.voxels();
    let plane = h * w;
    let m = extent * extent;
    let rows = tile_origins(h, extent);
    let cols = tile_origins(w, extent);
    let origins: Vec<(usize, usize)> = rows.iter().flat_map(|&r| cols.iter().map(move |&c| (r, c))).collect();

    let _guard = no_grad();
    let mut data = vec![0.0; k * n];
    for z in 0..d {
        let mut image = Vec::with_capacity(origins.len() * c * m);
        for &(r0, c0) in &origins {
            for ch in 0..c {
                for r in r0..r0 + extent {
                    let s = ch * n + vol.index(z, r, c0);
                    image.extend(vol.data[s..s + extent].iter().map(|&v| T::of(v as f64)));
                }
            }
        }
        let x = Tensor::from_vec(image, &[origins.len(), c, extent, extent])?;
        let outputs = net.forward(&x, &mut Phase::Inference)?;
        let probs = outputs.last().expect("cascade has stages").probs.to_vec();
        let mut st = Stitcher::new(k, h, w);
        for (t, &(r0, c0)) in origins.iter().enumerate() {
            let tile: Vec<f64> = probs[t * k * m..(t + 1) * k * m].iter().map(|v| v.f64()).collect();
            st.add(r0, c0, extent, &tile);
        }
        let slice = st.finish();
        for kk in 0..k {
            data[kk * n + z * plane..kk * n + (z + 1) * plane].copy_from_slice(&slice[kk * plane..(kk + 1) * plane]);
        }
    }
    Ok(ProbVolume {
        classes: k,
        dims: vol.dims,
        data,
    })
}

/// Voxel-wise mean of the members' probability volumes, accumulated as a
/// running mean so one member, or unanimous members, reproduce it exactly.
pub fn ensemble_predict<T: Real>(vol: &Volume, members: &[CascadeNet<T>], extent: usize) -> Result<ProbVolume> {
    let first = members.first().ok_or_else(|| Error::invalid("ensemble has no members"))?;
    for (i, m) in members.iter().enumerate().skip(1) {
        let (a, b) = (first.config(), m.config());
        if a.mri_channels != b.mri_channels || a.num_classes != b.num_classes {
            return Err(Error::Config(format!(
                "member {i} expects {} channels and {} classes, member 0 {} and {}",
                b.mri_channels, b.num_classes, a.mri_channels, a.num_classes
            )));
        }
    }
    let mut mean = predict_volume(vol, first, extent)?;
    for (i, m) in members.iter().enumerate().skip(1) {
        let p = predict_volume(vol, m, extent)?;
        running_mean(&mut mean.data, &p.data, i + 1);
    }
    Ok(mean)
}

/// `mean <- mean + (x - mean) / count`, the count-th term of a running mean.
pub fn running_mean(mean: &mut [f64], x: &[f64], count: usize) {
    let inv = 1.0 / count as f64;
    for (m, &v) in mean.iter_mut().zip(x) {
        *m += (v - *m) * inv;
    }
}
