use rand::Rng as _;

use crate::error::{Error, Result};
use crate::Rng;

/// One square training patch: `C x P x P` image, `P x P` labels and loss
/// mask, all row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub channels: usize,
    pub extent: usize,
    pub image: Vec<f32>,
    pub labels: Vec<u8>,
    pub mask: Vec<bool>,
}

impl Patch {
    pub fn validate(&self) -> Result<()> {
        let m = self.extent * self.extent;
        if self.image.len() != self.channels * m || self.labels.len() != m || self.mask.len() != m {
            return Err(Error::InvalidShape(format!(
                "patch of {} x {}^2 has image {}, labels {}, mask {}",
                self.channels,
                self.extent,
                self.image.len(),
                self.labels.len(),
                self.mask.len()
            )));
        }
        Ok(())
    }
}

/// Ranges the augmentation draws from.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub shift: f64,
    pub scale: [f64; 2],
    pub rotations: Vec<u32>,
    pub cutout_max_fraction: f64,
}

impl AugmentConfig {
    pub fn identity() -> Self {
        AugmentConfig {
            shift: 0.0,
            scale: [1.0, 1.0],
            rotations: vec![0],
            cutout_max_fraction: 0.0,
        }
    }
}

fn draw(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Rotates a square `P x P` plane counter-clockwise by `quarter` turns.
pub fn rotate_plane<V: Copy>(plane: &[V], extent: usize, quarter: u32) -> Vec<V> {
    let p = extent;
    let mut out = plane.to_vec();
    for (i, o) in out.iter_mut().enumerate() {
        let (r, c) = (i / p, i % p);
        let (sr, sc) = match quarter % 4 {
            0 => (r, c),
            1 => (c, p - 1 - r),
            2 => (p - 1 - r, p - 1 - c),
            _ => (p - 1 - c, r),
        };
        *o = plane[sr * p + sc];
    }
    out
}

/// Per-channel `x * s + t` on brain voxels, one shared rotation of image,
/// labels and mask, then a zeroed square in the image channels.
///
/// Background stays exactly zero so the brain mask keeps its meaning.
pub fn augment_patch(patch: &Patch, cfg: &AugmentConfig, rng: &mut Rng) -> Result<Patch> {
    patch.validate()?;
    if !(0.0..1.0).contains(&cfg.cutout_max_fraction) {
        return Err(Error::invalid(format!(
            "cutout fraction {} must be in [0, 1)",
            cfg.cutout_max_fraction
        )));
    }
    if cfg.rotations.is_empty() || cfg.rotations.iter().any(|r| r % 90 != 0) {
        return Err(Error::invalid(format!("rotations {:?} must be multiples of 90", cfg.rotations)));
    }
    let p = patch.extent;
    let m = p * p;
    let mut image = patch.image.clone();
    for plane in image.chunks_mut(m) {
        let s = draw(rng, cfg.scale[0], cfg.scale[1]) as f32;
        let t = draw(rng, -cfg.shift, cfg.shift) as f32;
        for (v, &inside) in plane.iter_mut().zip(&patch.mask) {
            if inside {
                *v = *v * s + t;
            }
        }
    }

    let quarter = cfg.rotations[rng.random_range(0..cfg.rotations.len())] / 90;
    let image: Vec<f32> = image
        .chunks(m)
        .flat_map(|plane| rotate_plane(plane, p, quarter))
        .collect();
    let labels = rotate_plane(&patch.labels, p, quarter);
    let mask = rotate_plane(&patch.mask, p, quarter);

    let mut image = image;
    let max_side = (cfg.cutout_max_fraction * p as f64).floor() as usize;
    if max_side > 0 {
        let side = rng.random_range(1..=max_side);
        let r0 = rng.random_range(0..=p - side);
        let c0 = rng.random_range(0..=p - side);
        for plane in image.chunks_mut(m) {
            for r in r0..r0 + side {
                plane[r * p + c0..r * p + c0 + side].fill(0.0);
            }
        }
    }

    Ok(Patch {
        channels: patch.channels,
        extent: p,
        image,
        labels,
        mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn patch(seed: u64) -> Patch {
        let mut rng = Rng::seed_from_u64(seed);
        let p = 8;
        Patch {
            channels: 2,
            extent: p,
            image: (0..2 * p * p).map(|_| rng.random_range(-2.0..2.0)).collect(),
            labels: (0..p * p).map(|_| rng.random_range(0..4)).collect(),
            mask: (0..p * p).map(|i| i % 7 != 0).collect(),
        }
    }

    #[test]
    fn identity_configuration() {
        let p = patch(1);
        let out = augment_patch(&p, &AugmentConfig::identity(), &mut Rng::seed_from_u64(2)).unwrap();
        assert_eq!(out, p);
    }

    #[test]
    fn half_turn_is_an_involution() {
        let p = patch(3);
        let twice = rotate_plane(&rotate_plane(&p.labels, 8, 2), 8, 2);
        assert_eq!(twice, p.labels);
        let four = (0..4).fold(p.labels.clone(), |acc, _| rotate_plane(&acc, 8, 1));
        assert_eq!(four, p.labels);
        assert_ne!(rotate_plane(&p.labels, 8, 1), p.labels);
    }

    #[test]
    fn quarter_turn_moves_corners() {
        let plane: Vec<u8> = (0..4).collect();
        // [[0, 1], [2, 3]] counter-clockwise -> [[1, 3], [0, 2]]
        assert_eq!(rotate_plane(&plane, 2, 1), vec![1, 3, 0, 2]);
    }

    #[test]
    fn labels_untouched_without_rotation() {
        let cfg = AugmentConfig {
            shift: 0.1,
            scale: [0.9, 1.1],
            rotations: vec![0],
            cutout_max_fraction: 0.25,
        };
        let p = patch(5);
        let mut rng = Rng::seed_from_u64(6);
        for _ in 0..100 {
            let out = augment_patch(&p, &cfg, &mut rng).unwrap();
            assert_eq!(out.labels, p.labels);
            assert_eq!(out.mask, p.mask);
        }
    }

    #[test]
    fn background_stays_zero() {
        let mut p = patch(7);
        for (i, v) in p.image.iter_mut().enumerate() {
            if !p.mask[i % 64] {
                *v = 0.0;
            }
        }
        let cfg = AugmentConfig {
            shift: 0.1,
            scale: [0.9, 1.1],
            rotations: vec![0, 90, 180, 270],
            cutout_max_fraction: 0.0,
        };
        let out = augment_patch(&p, &cfg, &mut Rng::seed_from_u64(8)).unwrap();
        for (i, &v) in out.image.iter().enumerate() {
            assert_eq!(v == 0.0, !out.mask[i % 64]);
        }
    }

    #[test]
    fn rejects_full_cutout() {
        let cfg = AugmentConfig {
            cutout_max_fraction: 1.0,
            ..AugmentConfig::identity()
        };
        assert!(augment_patch(&patch(1), &cfg, &mut Rng::seed_from_u64(0)).is_err());
    }
}
