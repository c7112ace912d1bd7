use serde::{Deserialize, Serialize};

use crate::data::phantom::{ENHANCING, NECROTIC_CORE};
use crate::error::{Error, Result};

use super::stats::percentile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Region {
    WT,
    TC,
    ET,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::WT, Region::TC, Region::ET];

    pub fn name(self) -> &'static str {
        match self {
            Region::WT => "WT",
            Region::TC => "TC",
            Region::ET => "ET",
        }
    }

    /// Whether a voxel with class `label` belongs to the region.
    pub fn contains(self, label: u8) -> bool {
        match self {
            Region::WT => label != 0,
            Region::TC => label == NECROTIC_CORE || label == ENHANCING,
            Region::ET => label == ENHANCING,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask {
    pub region: Region,
    pub voxels: Vec<bool>,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
}

/// Whole tumor (every lesion class), tumor core (lesion minus edema) and
/// enhancing tumor, in that order.
pub fn region_masks(labels: &[u8], dims: [usize; 3], spacing: [f64; 3]) -> Result<[RegionMask; 3]> {
    if labels.len() != dims.iter().product::<usize>() {
        return Err(Error::shape("region_masks", &dims, &[labels.len()]));
    }
    Ok(Region::ALL.map(|region| RegionMask {
        region,
        voxels: labels.iter().map(|&l| region.contains(l)).collect(),
        dims,
        spacing,
    }))
}

/// `2|A and B| / (|A| + |B|)`; two empty masks score 1.
pub fn dice(a: &[bool], b: &[bool]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("dice", &[a.len()], &[b.len()]));
    }
    let (mut na, mut nb, mut both) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        na += x as usize;
        nb += y as usize;
        both += (x && y) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (na + nb) as f64)
}

/// Mask voxels with at least one face neighbour outside the mask; voxels on
/// the volume border count as boundary.
pub fn boundary(mask: &[bool], dims: [usize; 3]) -> Vec<bool> {
    let [d, h, w] = dims;
    let mut out = vec![false; mask.len()];
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let i = (z * h + y) * w + x;
                if !mask[i] {
                    continue;
                }
                let edge = z == 0 || y == 0 || x == 0 || z + 1 == d || y + 1 == h || x + 1 == w;
                out[i] = edge
                    || !mask[i - h * w]
                    || !mask[i + h * w]
                    || !mask[i - w]
                    || !mask[i + w]
                    || !mask[i - 1]
                    || !mask[i + 1];
            }
        }
    }
    out
}

/// Exact 1D squared distance transform of a sampled function (lower
/// envelope of parabolas) with sample spacing `step`.
fn edt_1d(f: &[f64], step: f64, out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let pos = |i: usize| i as f64 * step;
    let mut k = 0usize;
    let first = f.iter().position(|x| x.is_finite());
    let Some(first) = first else {
        out.fill(f64::INFINITY);
        return;
    };
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in first + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            let p = v[k];
            let s = ((f[q] + pos(q) * pos(q)) - (f[p] + pos(p) * pos(p))) / (2.0 * (pos(q) - pos(p)));
            if s <= z[k] {
                // k == 0 cannot happen since z[0] is -inf
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    k = 0;
    for q in 0..n {
        while z[k + 1] < pos(q) {
            k += 1;
        }
        let dq = pos(q) - pos(v[k]);
        out[q] = dq * dq + f[v[k]];
    }
}

/// Squared Euclidean distance in millimetres from every voxel to the
/// nearest `true` voxel of `seeds`.
pub fn squared_distance_transform(seeds: &[bool], dims: [usize; 3], spacing: [f64; 3]) -> Vec<f64> {
    let mut g: Vec<f64> = seeds.iter().map(|&s| if s { 0.0 } else { f64::INFINITY }).collect();
    let strides = [dims[1] * dims[2], dims[2], 1];
    let longest = *dims.iter().max().unwrap();
    let (mut f, mut out) = (vec![0.0; longest], vec![0.0; longest]);
    let (mut v, mut z) = (vec![0usize; longest], vec![0.0; longest + 1]);
    for axis in 0..3 {
        let n = dims[axis];
        let stride = strides[axis];
        for start in 0..g.len() {
            // visit each line once, from its first element
            if !(start / stride).is_multiple_of(n) {
                continue;
            }
            for i in 0..n {
                f[i] = g[start + i * stride];
            }
            edt_1d(&f[..n], spacing[axis], &mut out[..n], &mut v, &mut z);
            for i in 0..n {
                g[start + i * stride] = out[i];
            }
        }
    }
    g
}

/// 95th-percentile symmetric Hausdorff distance between the boundaries of
/// `a` and `b`, in millimetres. `None` when either mask is empty.
pub fn hd95(a: &[bool], b: &[bool], dims: [usize; 3], spacing: [f64; 3]) -> Result<Option<f64>> {
    let n: usize = dims.iter().product();
    if a.len() != n || b.len() != n {
        return Err(Error::shape("hd95", &[a.len(), b.len()], &[n, n]));
    }
    if !a.iter().any(|&v| v) || !b.iter().any(|&v| v) {
        return Ok(None);
    }
    let ba = boundary(a, dims);
    let bb = boundary(b, dims);
    let directed = |from: &[bool], to: &[bool]| {
        let dt = squared_distance_transform(to, dims, spacing);
        let mut d: Vec<f64> = from.iter().zip(&dt).filter(|(&f, _)| f).map(|(_, &s)| s.sqrt()).collect();
        percentile(&mut d, 95.0).expect("nonempty boundary")
    };
    Ok(Some(directed(&ba, &bb).max(directed(&bb, &ba))))
}
