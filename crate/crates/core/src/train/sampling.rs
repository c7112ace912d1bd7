use rand::Rng as _;

use crate::data::Volume;
use crate::error::{Error, Result};
use crate::Rng;

use super::augment::Patch;

/// A sampled patch and whether it had to fall back to uniform placement
/// because the volume holds no tumor.
#[derive(Debug, Clone)]
pub struct SampledPatch {
    pub patch: Patch,
    pub fallback: bool,
}

/// Axial patch of side `extent` that contains at least one tumor voxel.
///
/// A tumor voxel is drawn uniformly and the window is placed uniformly among
/// the in-bounds positions that still cover it. The mask is the brain region.
pub fn sample_patch(vol: &Volume, extent: usize, rng: &mut Rng) -> Result<SampledPatch> {
    let [d, h, w] = vol.dims;
    if extent == 0 || h < extent || w < extent {
        return Err(Error::invalid(format!(
            "patch extent {extent} does not fit in-plane extents {h} x {w}"
        )));
    }
    let labels = vol.labels()?;
    let tumor: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != 0).collect();
    let fallback = tumor.is_empty();
    let (z, r0, c0) = if fallback {
        (
            rng.random_range(0..d),
            rng.random_range(0..=h - extent),
            rng.random_range(0..=w - extent),
        )
    } else {
        let v = tumor[rng.random_range(0..tumor.len())];
        let (z, r, c) = (v / (h * w), (v / w) % h, v % w);
        let lo = |x: usize, n: usize| x.saturating_sub(extent - 1).min(n - extent);
        let hi = |x: usize, n: usize| x.min(n - extent);
        (
            z,
            rng.random_range(lo(r, h)..=hi(r, h)),
            rng.random_range(lo(c, w)..=hi(c, w)),
        )
    };
    Ok(SampledPatch {
        patch: crop(vol, z, r0, c0, extent),
        fallback,
    })
}

/// Window `[r0, r0+extent) x [c0, c0+extent)` of axial slice `z`.
pub fn crop(vol: &Volume, z: usize, r0: usize, c0: usize, extent: usize) -> Patch {
    let n = vol.voxels();
    let mut image = Vec::with_capacity(vol.channels * extent * extent);
    for c in 0..vol.channels {
        for r in r0..r0 + extent {
            let s = c * n + vol.index(z, r, c0);
            image.extend_from_slice(&vol.data[s..s + extent]);
        }
    }
    let mut labels = Vec::with_capacity(extent * extent);
    let mut mask = Vec::with_capacity(extent * extent);
    for r in r0..r0 + extent {
        for col in c0..c0 + extent {
            let i = vol.index(z, r, col);
            labels.push(vol.labels.as_ref().map_or(0, |l| l[i]));
            mask.push((0..vol.channels).any(|c| vol.data[c * n + i] != 0.0));
        }
    }
    Patch {
        channels: vol.channels,
        extent,
        image,
        labels,
        mask,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_phantom, PhantomSpec};
    use rand::SeedableRng;

    #[test]
    fn every_patch_has_tumor() {
        let vol = generate_phantom(&PhantomSpec { seed: 3, ..Default::default() }, "a").unwrap();
        let mut rng = Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let s = sample_patch(&vol, 24, &mut rng).unwrap();
            assert!(!s.fallback);
            assert_eq!(s.patch.labels.len(), 24 * 24);
            assert!(s.patch.labels.iter().any(|&l| l != 0));
        }
    }

    #[test]
    fn single_voxel_tumor_always_covered() {
        let dims = [3, 10, 12];
        let n = 360;
        let mut labels = vec![0u8; n];
        let target = (2 * 10 + 9) * 12;
        labels[target] = 3;
        let vol = Volume::new("a", 1, dims, [1.0; 3], vec![1.0; n], Some(labels)).unwrap();
        let mut rng = Rng::seed_from_u64(1);
        for _ in 0..200 {
            let s = sample_patch(&vol, 4, &mut rng).unwrap();
            assert_eq!(s.patch.labels.iter().filter(|&&l| l == 3).count(), 1);
        }
    }

    #[test]
    fn tumor_free_volume_falls_back() {
        let vol = Volume::new("a", 1, [2, 6, 6], [1.0; 3], vec![1.0; 72], Some(vec![0; 72])).unwrap();
        let s = sample_patch(&vol, 6, &mut Rng::seed_from_u64(0)).unwrap();
        assert!(s.fallback);
        assert!(sample_patch(&vol, 7, &mut Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn crop_reads_the_right_window() {
        let data: Vec<f32> = (0..2 * 4 * 5).map(|i| i as f32 + 1.0).collect();
        let vol = Volume::new("a", 1, [2, 4, 5], [1.0; 3], data, None).unwrap();
        let p = crop(&vol, 1, 1, 2, 2);
        assert_eq!(p.image, vec![28.0, 29.0, 33.0, 34.0]);
        assert!(p.mask.iter().all(|&m| m));
    }
}
