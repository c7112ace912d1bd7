//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::VecDeque;

/// Direct nested-loop 2D convolution, `(N, C, H, W)` input and
/// `(O, C, K, K)` weight.
pub fn naive_conv2d(
    x: &[f64],
    xs: [usize; 4],
    w: &[f64],
    ws: [usize; 4],
    bias: Option<&[f64]>,
    stride: usize,
    pad: usize,
) -> (Vec<f64>, [usize; 4]) {
    let [n, c, h, wd] = xs;
    let [o, _, k, _] = ws;
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; n * o * oh * ow];
    for b in 0..n {
        for oc in 0..o {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = bias.map_or(0.0, |bb| bb[oc]);
                    for ic in 0..c {
                        for ki in 0..k {
                            for kj in 0..k {
                                let r = (i * stride + ki) as isize - pad as isize;
                                let s = (j * stride + kj) as isize - pad as isize;
                                if r < 0 || s < 0 || r >= h as isize || s >= wd as isize {
                                    continue;
                                }
                                acc += x[((b * c + ic) * h + r as usize) * wd + s as usize]
                                    * w[((oc * c + ic) * k + ki) * k + kj];
                            }
                        }
                    }
                    out[((b * o + oc) * oh + i) * ow + j] = acc;
                }
            }
        }
    }
    (out, [n, o, oh, ow])
}

/// Neighbour offsets with at most `max_nonzero` nonzero coordinates
/// (1 for 6-, 2 for 18-, 3 for 26-connectivity).
pub fn neighbours(max_nonzero: usize) -> Vec<[isize; 3]> {
    let mut v = Vec::new();
    for a in -1..=1isize {
        for b in -1..=1isize {
            for c in -1..=1isize {
                let nz = [a, b, c].iter().filter(|&&t| t != 0).count();
                if nz >= 1 && nz <= max_nonzero {
                    v.push([a, b, c]);
                }
            }
        }
    }
    v
}

/// Component id per voxel by breadth-first flood fill (0 = outside).
pub fn flood_fill(mask: &[bool], dims: [usize; 3], max_nonzero: usize) -> Vec<usize> {
    let [d, h, w] = dims;
    let offs = neighbours(max_nonzero);
    let mut ids = vec![0usize; mask.len()];
    let mut next = 0;
    for start in 0..mask.len() {
        if !mask[start] || ids[start] != 0 {
            continue;
        }
        next += 1;
        ids[start] = next;
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            let (z, y, x) = (i / (h * w), (i / w) % h, i % w);
            for o in &offs {
                let (nz, ny, nx) = (z as isize + o[0], y as isize + o[1], x as isize + o[2]);
                if nz < 0 || ny < 0 || nx < 0 || nz >= d as isize || ny >= h as isize || nx >= w as isize {
                    continue;
                }
                let j = (nz as usize * h + ny as usize) * w + nx as usize;
                if mask[j] && ids[j] == 0 {
                    ids[j] = next;
                    queue.push_back(j);
                }
            }
        }
    }
    ids
}

/// Sizes of flood-fill components.
pub fn component_sizes(ids: &[usize]) -> Vec<usize> {
    let n = ids.iter().copied().max().unwrap_or(0);
    let mut sizes = vec![0; n];
    for &i in ids.iter().filter(|&&i| i > 0) {
        sizes[i - 1] += 1;
    }
    sizes
}

/// Surviving voxel set after dropping flood-fill components below `min`.
pub fn filter_small(mask: &[bool], dims: [usize; 3], max_nonzero: usize, min: usize) -> Vec<bool> {
    let ids = flood_fill(mask, dims, max_nonzero);
    let sizes = component_sizes(&ids);
    ids.iter().map(|&i| i > 0 && sizes[i - 1] >= min).collect()
}

/// Linear-interpolation percentile over a sorted copy.
pub fn sorted_percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

fn boundary_points(mask: &[bool], dims: [usize; 3]) -> Vec<[usize; 3]> {
    let [d, h, w] = dims;
    let at = |z: isize, y: isize, x: isize| {
        z >= 0
            && y >= 0
            && x >= 0
            && (z as usize) < d
            && (y as usize) < h
            && (x as usize) < w
            && mask[(z as usize * h + y as usize) * w + x as usize]
    };
    let mut pts = Vec::new();
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                if !mask[(z * h + y) * w + x] {
                    continue;
                }
                let (zi, yi, xi) = (z as isize, y as isize, x as isize);
                let interior = neighbours(1).iter().all(|o| at(zi + o[0], yi + o[1], xi + o[2]));
                if !interior {
                    pts.push([z, y, x]);
                }
            }
        }
    }
    pts
}

/// HD95 by exhaustive boundary-to-boundary distances.
pub fn brute_hd95(a: &[bool], b: &[bool], dims: [usize; 3], spacing: [f64; 3]) -> Option<f64> {
    if !a.contains(&true) || !b.contains(&true) {
        return None;
    }
    let pa = boundary_points(a, dims);
    let pb = boundary_points(b, dims);
    let dist = |p: &[usize; 3], q: &[usize; 3]| {
        (0..3)
            .map(|i| ((p[i] as f64 - q[i] as f64) * spacing[i]).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let directed = |from: &[[usize; 3]], to: &[[usize; 3]]| {
        let d: Vec<f64> = from
            .iter()
            .map(|p| to.iter().map(|q| dist(p, q)).fold(f64::INFINITY, f64::min))
            .collect();
        sorted_percentile(&d, 95.0)
    };
    Some(directed(&pa, &pb).max(directed(&pb, &pa)))
}

/// Scalar AdamW with decoupled decay, returning the parameter after each
/// step.
pub fn scalar_adamw(theta0: f64, grads: &[f64], lr: f64, wd: f64) -> Vec<f64> {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let (mut m, mut v, mut theta) = (0.0, 0.0, theta0);
    let mut out = Vec::new();
    for (t, &g) in grads.iter().enumerate() {
        let t = t as i32 + 1;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t));
        let vh = v / (1.0 - b2.powi(t));
        theta = theta - lr * mh / (vh.sqrt() + eps) - wd * theta;
        out.push(theta);
    }
    out
}

/// Mean of `-ln(clamp(p_true))` over masked voxels, one voxel at a time.
pub fn loop_cross_entropy(probs: &[f64], shape: [usize; 4], labels: &[u8], mask: &[bool]) -> f64 {
    let [n, k, h, w] = shape;
    let (mut total, mut count) = (0.0, 0usize);
    for b in 0..n {
        for y in 0..h {
            for x in 0..w {
                let v = (b * h + y) * w + x;
                if !mask[v] {
                    continue;
                }
                let p = probs[((b * k + labels[v] as usize) * h + y) * w + x];
                total += -p.clamp(1e-7, 1.0).ln();
                count += 1;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// `exp(-d^2 / 2 sigma^2)` on the integer grid, normalized.
pub fn gaussian_profile(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let raw: Vec<f64> = (0..size).map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

/// Period-`block` checkerboard of side `n`, values 0 and 1.
pub fn checkerboard(n: usize, block: usize) -> Vec<f64> {
    (0..n * n)
        .map(|i| (((i / n) / block + (i % n) / block) % 2) as f64)
        .collect()
}

/// `n x n` window of a `side`-wide square image starting at `(r0, c0)`.
pub fn window(img: &[f64], side: usize, r0: usize, c0: usize, n: usize) -> Vec<f64> {
    (0..n * n).map(|i| img[(r0 + i / n) * side + c0 + i % n]).collect()
}
