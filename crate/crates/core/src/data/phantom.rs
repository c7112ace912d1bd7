//! Synthetic multi-channel brain phantoms with nested ellipsoidal lesions.

use rand::{Rng as _, SeedableRng};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Rng;

use super::Volume;

pub const BACKGROUND: u8 = 0;
pub const NECROTIC_CORE: u8 = 1;
pub const EDEMA: u8 = 2;
pub const ENHANCING: u8 = 3;
pub const NUM_CLASSES: usize = 4;

/// Tissue intensities per channel, indexed `[healthy, necrotic core, edema,
/// enhancing]`, for T1-, T1ce-, T2- and FLAIR-like channels.
pub const DEFAULT_CONTRAST: [[f64; 4]; 4] = [
    [1.0, 0.5, 0.85, 0.9],
    [1.0, 0.6, 0.9, 2.0],
    [1.0, 1.7, 1.5, 1.3],
    [1.0, 1.3, 1.8, 1.4],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub channels: usize,
    /// `[D, H, W]`
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub lesions: usize,
    /// Small edema-only foci scattered through the brain.
    pub satellites: usize,
    /// Semi-axis range of a satellite, in voxels.
    pub satellite_radius: [f64; 2],
    /// Semi-axis range of the edema ellipsoid, in voxels.
    pub edema_radius: [f64; 2],
    /// Core semi-axes as a fraction of the edema's.
    pub core_fraction: [f64; 2],
    /// Enhancing semi-axes as a fraction of the core's.
    pub enhancing_fraction: [f64; 2],
    /// Per channel `[healthy, core, edema, enhancing]` intensity; channels
    /// beyond the table reuse it cyclically.
    pub contrast: Vec<[f64; 4]>,
    pub noise: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            channels: 4,
            dims: [32, 48, 48],
            spacing: [1.0; 3],
            lesions: 1,
            satellites: 3,
            satellite_radius: [1.0, 2.0],
            edema_radius: [6.0, 10.0],
            core_fraction: [0.45, 0.7],
            enhancing_fraction: [0.4, 0.7],
            contrast: DEFAULT_CONTRAST.to_vec(),
            noise: 0.15,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.channels == 0 || self.dims.iter().any(|&d| d < 4) {
            return bad(format!("bad extents {} x {:?}", self.channels, self.dims));
        }
        if self.contrast.is_empty() {
            return bad("empty contrast table".into());
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise {} must be >= 0", self.noise));
        }
        for (name, [lo, hi]) in [("edema", self.edema_radius), ("satellite", self.satellite_radius)] {
            if !(lo > 0.0 && lo <= hi) {
                return bad(format!("{name} radius range [{lo}, {hi}]"));
            }
        }
        for (name, [lo, hi]) in [("core", self.core_fraction), ("enhancing", self.enhancing_fraction)] {
            // strictly nested
            if !(lo > 0.0 && lo <= hi && hi < 1.0) {
                return bad(format!("{name} fraction range [{lo}, {hi}] must lie in (0, 1)"));
            }
        }
        for row in &self.contrast {
            if row.iter().any(|&v| !(v > 0.0)) {
                return bad("tissue intensities must be positive".into());
            }
        }
        Ok(())
    }

    fn intensity(&self, channel: usize, tissue: usize) -> f64 {
        self.contrast[channel % self.contrast.len()][tissue]
    }
}

struct Ellipsoid {
    center: [f64; 3],
    radii: [f64; 3],
}

impl Ellipsoid {
    fn contains(&self, p: [f64; 3]) -> bool {
        (0..3)
            .map(|i| ((p[i] - self.center[i]) / self.radii[i]).powi(2))
            .sum::<f64>()
            <= 1.0
    }
}

fn uniform(rng: &mut Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Centre of an ellipsoid with semi-axes `radii` drawn so that it lies
/// inside `brain`: offsets with `|c / B| + max(r / B) <= 1` suffice.
fn place_inside(brain: &Ellipsoid, radii: [f64; 3], dims: [usize; 3], rng: &mut Rng) -> Result<[f64; 3]> {
    let fit = (0..3).map(|i| radii[i] / brain.radii[i]).fold(0.0, f64::max);
    if fit >= 1.0 {
        return Err(Error::Config(format!("lesion radii {radii:?} do not fit the brain in {dims:?}")));
    }
    let slack = 1.0 - fit;
    loop {
        let u: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= 1.0 {
            return Ok(std::array::from_fn(|i| brain.center[i] + u[i] * slack * brain.radii[i]));
        }
    }
}

/// Renders one phantom. Deterministic in `spec` (including its seed).
pub fn generate_phantom(spec: &PhantomSpec, subject: &str) -> Result<Volume> {
    spec.validate()?;
    let mut rng = Rng::seed_from_u64(spec.seed);
    let [d, h, w] = spec.dims;
    let brain = Ellipsoid {
        center: [(d as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0],
        radii: [0.45 * d as f64, 0.45 * h as f64, 0.45 * w as f64],
    };

    // (edema, core, enhancing) per lesion
    let mut lesions = Vec::with_capacity(spec.lesions);
    for _ in 0..spec.lesions {
        let radii = [
            uniform(&mut rng, spec.edema_radius),
            uniform(&mut rng, spec.edema_radius),
            uniform(&mut rng, spec.edema_radius),
        ];
        let center = place_inside(&brain, radii, spec.dims, &mut rng)?;
        let fc = uniform(&mut rng, spec.core_fraction);
        let fe = uniform(&mut rng, spec.enhancing_fraction);
        let core = radii.map(|r| r * fc);
        let enh = core.map(|r| r * fe);
        lesions.push((
            Ellipsoid { center, radii },
            Ellipsoid { center, radii: core },
            Ellipsoid { center, radii: enh },
        ));
    }

    let satellites = (0..spec.satellites)
        .map(|_| {
            let radii = std::array::from_fn(|_| uniform(&mut rng, spec.satellite_radius));
            place_inside(&brain, radii, spec.dims, &mut rng).map(|center| Ellipsoid { center, radii })
        })
        .collect::<Result<Vec<_>>>()?;

    let n = d * h * w;
    let mut labels = vec![BACKGROUND; n];
    let mut tissue = vec![None::<usize>; n];
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let p = [z as f64, y as f64, x as f64];
                if !brain.contains(p) {
                    continue;
                }
                let i = (z * h + y) * w + x;
                let label = if lesions.iter().any(|l| l.2.contains(p)) {
                    ENHANCING
                } else if lesions.iter().any(|l| l.1.contains(p)) {
                    NECROTIC_CORE
                } else if lesions.iter().any(|l| l.0.contains(p)) || satellites.iter().any(|e| e.contains(p)) {
                    EDEMA
                } else {
                    BACKGROUND
                };
                labels[i] = label;
                tissue[i] = Some(label as usize);
            }
        }
    }

    let noise = Normal::new(0.0, spec.noise.max(f64::MIN_POSITIVE)).expect("finite noise");
    let mut data = vec![0.0f32; spec.channels * n];
    for c in 0..spec.channels {
        for (i, t) in tissue.iter().enumerate() {
            let Some(t) = *t else { continue };
            let mut v = spec.intensity(c, t);
            if spec.noise > 0.0 {
                v += noise.sample(&mut rng);
            }
            let v = v as f32;
            // zero is reserved for background
            data[c * n + i] = if v == 0.0 { f32::MIN_POSITIVE } else { v };
        }
    }
    Volume::new(subject, spec.channels, spec.dims, spec.spacing, data, Some(labels))
}

/// `count` phantoms named `phantom_000`, ... with per-subject seeds derived
/// from `seed`.
pub fn generate_dataset(template: &PhantomSpec, count: usize, seed: u64) -> Result<Vec<Volume>> {
    (0..count)
        .map(|i| {
            let spec = PhantomSpec {
                seed: subject_seed(seed, i),
                ..template.clone()
            };
            generate_phantom(&spec, &format!("phantom_{i:03}"))
        })
        .collect()
}

fn subject_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64 + 1)
}
