//! Three DLA stages in series. Stage `s > 1` sees the MRI channels, the
//! previous stage's features and its softmax probabilities.

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::autograd::{concat_channels, Tensor};
use crate::error::{Error, Result};
use crate::nn::{softmax_channels, DownsamplerKind, GaussianKernel};
use crate::real::Real;
use crate::Rng;

use super::dla::{DlaStage, DlaStageConfig};
use super::Phase;

pub const NUM_STAGES: usize = 3;

/// Per-stage loss weights of the combined objective.
pub const LOSS_WEIGHTS: [f64; NUM_STAGES] = [0.3, 0.4, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CascadeConfig {
    pub mri_channels: usize,
    pub base_width: usize,
    pub num_scales: usize,
    pub hda_depth: usize,
    pub num_classes: usize,
    pub downsampler: DownsamplerKind,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        CascadeConfig {
            mri_channels: 4,
            base_width: 8,
            num_scales: 3,
            hda_depth: 2,
            num_classes: 4,
            downsampler: DownsamplerKind::Gconv,
        }
    }
}

impl CascadeConfig {
    /// Input width of stage `s` (0-based): `C` for the first stage,
    /// `C + F + K` after it.
    pub fn stage_in_channels(&self, s: usize) -> usize {
        if s == 0 {
            self.mri_channels
        } else {
            self.mri_channels + self.feature_width() + self.num_classes
        }
    }

    pub fn feature_width(&self) -> usize {
        self.stage_config(0).feature_width()
    }

    pub fn stage_config(&self, s: usize) -> DlaStageConfig {
        DlaStageConfig {
            in_channels: if s == 0 {
                self.mri_channels
            } else {
                self.mri_channels + self.base_width + self.num_classes
            },
            base_width: self.base_width,
            num_scales: self.num_scales,
            hda_depth: self.hda_depth,
            num_classes: self.num_classes,
            downsampler: self.downsampler,
        }
    }

    pub fn extent_multiple(&self) -> usize {
        1 << self.num_scales.saturating_sub(1)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Logits, probabilities and features of one cascade stage.
#[derive(Debug, Clone)]
pub struct CascadeOutput<T: Real = f32> {
    pub logits: Tensor<T>,
    pub probs: Tensor<T>,
    pub features: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct CascadeNet<T: Real = f32> {
    config: CascadeConfig,
    stages: Vec<DlaStage<T>>,
}

impl<T: Real> CascadeNet<T> {
    pub fn new(config: CascadeConfig, rng: &mut Rng) -> Result<Self> {
        let stages = (0..NUM_STAGES)
            .map(|s| DlaStage::new(config.stage_config(s), rng))
            .collect::<Result<Vec<_>>>()?;
        Self::from_stages(config, stages)
    }

    /// Network whose weights are drawn from a generator seeded with `seed`.
    pub fn seeded(config: CascadeConfig, seed: u64) -> Result<Self> {
        Self::new(config, &mut Rng::seed_from_u64(seed))
    }

    /// Assembles a cascade, checking the channel bookkeeping of every stage.
    pub fn from_stages(config: CascadeConfig, stages: Vec<DlaStage<T>>) -> Result<Self> {
        if stages.len() != NUM_STAGES {
            return Err(Error::Config(format!(
                "a cascade has {NUM_STAGES} stages, got {}",
                stages.len()
            )));
        }
        for (s, stage) in stages.iter().enumerate() {
            let want = config.stage_in_channels(s);
            if stage.in_channels() != want {
                return Err(Error::Config(format!(
                    "stage {} takes {} channels, wiring needs {want}",
                    s + 1,
                    stage.in_channels()
                )));
            }
            let sc = stage.config();
            if sc.num_classes != config.num_classes || sc.feature_width() != config.feature_width() {
                return Err(Error::Config(format!(
                    "stage {} disagrees with the cascade on classes or feature width",
                    s + 1
                )));
            }
        }
        Ok(CascadeNet { config, stages })
    }

    pub fn config(&self) -> &CascadeConfig {
        &self.config
    }

    pub fn stages(&self) -> &[DlaStage<T>] {
        &self.stages
    }

    pub fn forward(&self, mri: &Tensor<T>, phase: &mut Phase<'_>) -> Result<Vec<CascadeOutput<T>>> {
        cascade_forward(mri, self, phase)
    }

    /// Trainable tensors keyed by a stable hierarchical name.
    pub fn named_parameters(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        for (s, stage) in self.stages.iter().enumerate() {
            stage.named_parameters(&format!("stage{}", s + 1), &mut out);
        }
        out
    }

    pub fn parameters(&self) -> Vec<Tensor<T>> {
        self.named_parameters().into_iter().map(|(_, t)| t).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(Tensor::numel).sum()
    }

    pub fn zero_grad(&self) {
        self.parameters().iter().for_each(Tensor::zero_grad);
    }

    /// Fixed blur kernels of every stage (empty for the pooling variant).
    pub fn gaussian_kernels(&self) -> Vec<&GaussianKernel<T>> {
        self.stages
            .iter()
            .filter_map(|s| s.downsampler().kernel())
            .collect()
    }
}

pub fn cascade_forward<T: Real>(
    mri: &Tensor<T>,
    net: &CascadeNet<T>,
    phase: &mut Phase<'_>,
) -> Result<Vec<CascadeOutput<T>>> {
    if mri.ndim() != 4 || mri.shape()[1] != net.config.mri_channels {
        return Err(Error::InvalidShape(format!(
            "cascade expects (N, {}, H, W), got {:?}",
            net.config.mri_channels,
            mri.shape()
        )));
    }
    let mut outputs: Vec<CascadeOutput<T>> = Vec::with_capacity(NUM_STAGES);
    for stage in &net.stages {
        let input = match outputs.last() {
            None => mri.clone(),
            Some(prev) => concat_channels(&[mri.clone(), prev.features.clone(), prev.probs.clone()])?,
        };
        let out = stage.forward(&input, phase)?;
        let probs = softmax_channels(&out.logits)?;
        outputs.push(CascadeOutput {
            logits: out.logits,
            probs,
            features: out.features,
        });
    }
    Ok(outputs)
}
