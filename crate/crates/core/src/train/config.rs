use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CascadeConfig, LOSS_WEIGHTS, NUM_STAGES};
use crate::nn::DownsamplerKind;

/// Training hyper-parameters and the architecture they apply to, stored as a
/// flat TOML document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub warm_epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub patch_extent: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub wd_start: f64,
    pub wd_end: f64,
    pub dropout_p: f64,
    pub loss_weights: [f64; NUM_STAGES],
    /// Per-channel additive shift drawn from `[-shift, shift]`.
    pub shift: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    /// Allowed in-plane rotations in degrees, multiples of 90.
    pub rotations: Vec<u32>,
    /// Largest cutout side as a fraction of the patch side.
    pub cutout_max_fraction: f64,
    pub seed: u64,

    pub mri_channels: usize,
    pub base_width: usize,
    pub num_scales: usize,
    pub hda_depth: usize,
    pub num_classes: usize,
    pub downsampler: DownsamplerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let arch = CascadeConfig::default();
        TrainConfig {
            epochs: 20,
            warm_epochs: 6,
            steps_per_epoch: 50,
            batch_size: 4,
            patch_extent: 24,
            lr_start: 1e-4,
            lr_end: 5e-5,
            wd_start: 1e-3,
            wd_end: 1e-6,
            dropout_p: 0.25,
            loss_weights: LOSS_WEIGHTS,
            shift: 0.1,
            scale_min: 0.9,
            scale_max: 1.1,
            rotations: vec![0, 90, 180, 270],
            cutout_max_fraction: 0.25,
            seed: 0,
            mri_channels: arch.mri_channels,
            base_width: arch.base_width,
            num_scales: arch.num_scales,
            hda_depth: arch.hda_depth,
            num_classes: arch.num_classes,
            downsampler: arch.downsampler,
        }
    }
}

impl TrainConfig {
    pub fn cascade_config(&self) -> CascadeConfig {
        CascadeConfig {
            mri_channels: self.mri_channels,
            base_width: self.base_width,
            num_scales: self.num_scales,
            hda_depth: self.hda_depth,
            num_classes: self.num_classes,
            downsampler: self.downsampler,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr_end > 0.0 && self.lr_end <= self.lr_start) {
            return bad(format!("need 0 < lr_end <= lr_start, got {} and {}", self.lr_end, self.lr_start));
        }
        if !(self.wd_end > 0.0 && self.wd_end <= self.wd_start) {
            return bad(format!("need 0 < wd_end <= wd_start, got {} and {}", self.wd_end, self.wd_start));
        }
        if self.warm_epochs >= self.epochs {
            return bad(format!("warm_epochs {} must be below epochs {}", self.warm_epochs, self.epochs));
        }
        if self.steps_per_epoch == 0 || self.batch_size == 0 {
            return bad("steps_per_epoch and batch_size must be positive".into());
        }
        if self.loss_weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return bad(format!("loss weights must be positive, got {:?}", self.loss_weights));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p {} outside [0, 1)", self.dropout_p));
        }
        if !(self.shift >= 0.0 && self.scale_min > 0.0 && self.scale_min <= self.scale_max) {
            return bad("intensity augmentation ranges are inverted or negative".into());
        }
        if self.rotations.is_empty() || self.rotations.iter().any(|r| r % 90 != 0 || *r >= 360) {
            return bad(format!("rotations must be distinct multiples of 90 below 360, got {:?}", self.rotations));
        }
        if !(0.0..1.0).contains(&self.cutout_max_fraction) {
            return bad(format!("cutout_max_fraction {} outside [0, 1)", self.cutout_max_fraction));
        }
        let arch = self.cascade_config();
        if self.patch_extent == 0 || !self.patch_extent.is_multiple_of(arch.extent_multiple()) {
            return bad(format!(
                "patch_extent {} must be a positive multiple of {}",
                self.patch_extent,
                arch.extent_multiple()
            ));
        }
        arch.stage_config(0).validate()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml())?;
        Ok(())
    }
}
