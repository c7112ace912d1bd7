use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::data::{normalize, Volume};
use crate::error::{Error, Result};
use crate::model::{CascadeNet, Checkpoint, Phase};
use crate::real::Real;
use crate::Rng;

use super::adamw::{adamw_step, OptimizerState};
use super::augment::{augment_patch, AugmentConfig, Patch};
use super::config::TrainConfig;
use super::loss::cascade_loss;
use super::sampling::sample_patch;
use super::schedule::schedule_value;

/// Epoch means of the combined and per-stage losses with the schedule values
/// used in that epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub lr: f64,
    pub wd: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn first(&self) -> Option<&EpochRecord> {
        self.epochs.first()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    /// CSV with header `epoch,L,L1,L2,L3,lr,wd`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "L", "L1", "L2", "L3", "lr", "wd"])?;
        for r in &self.epochs {
            w.write_record([
                r.epoch.to_string(),
                r.loss.to_string(),
                r.l1.to_string(),
                r.l2.to_string(),
                r.l3.to_string(),
                r.lr.to_string(),
                r.wd.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

impl TrainConfig {
    pub fn augment_config(&self) -> AugmentConfig {
        AugmentConfig {
            shift: self.shift,
            scale: [self.scale_min, self.scale_max],
            rotations: self.rotations.clone(),
            cutout_max_fraction: self.cutout_max_fraction,
        }
    }
}

/// Stacks patches into an `(N, C, P, P)` tensor plus flat labels and mask.
pub fn batch_tensor<T: Real>(patches: &[Patch]) -> Result<(Tensor<T>, Vec<u8>, Vec<bool>)> {
    let first = patches.first().ok_or_else(|| Error::invalid("empty batch"))?;
    let (c, p) = (first.channels, first.extent);
    let mut image = Vec::with_capacity(patches.len() * c * p * p);
    let mut labels = Vec::with_capacity(patches.len() * p * p);
    let mut mask = Vec::with_capacity(patches.len() * p * p);
    for patch in patches {
        patch.validate()?;
        if (patch.channels, patch.extent) != (c, p) {
            return Err(Error::shape("batch_tensor", &[c, p], &[patch.channels, patch.extent]));
        }
        image.extend(patch.image.iter().map(|&v| T::of(v as f64)));
        labels.extend_from_slice(&patch.labels);
        mask.extend_from_slice(&patch.mask);
    }
    let x = Tensor::from_vec(image, &[patches.len(), c, p, p])?;
    Ok((x, labels, mask))
}

/// Stream used for sampling, augmentation and dropout; distinct from the
/// weight initialisation stream derived from the same seed.
fn data_rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed ^ 0xD1A5_CA5C_ADE0_0001)
}

/// Trains `net` in place on normalized copies of `dataset`:
/// sample, augment, forward, weighted loss, backward, AdamW with scheduled
/// learning rate and decay. Deterministic in `cfg.seed`.
pub fn train<T: Real>(dataset: &[Volume], net: CascadeNet<T>, cfg: &TrainConfig) -> Result<(CascadeNet<T>, History)> {
    train_with_progress(dataset, net, cfg, |_| {})
}

pub fn train_with_progress<T: Real>(
    dataset: &[Volume],
    net: CascadeNet<T>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(CascadeNet<T>, History)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if net.config() != &cfg.cascade_config() {
        return Err(Error::Config("network architecture differs from the training config".into()));
    }
    let volumes: Vec<Volume> = dataset.iter().map(normalize).collect::<Result<_>>()?;
    for v in &volumes {
        if v.channels != cfg.mri_channels {
            return Err(Error::shape("train", &[cfg.mri_channels], &[v.channels]));
        }
    }

    let params = net.parameters();
    let mut state = OptimizerState::<T>::new();
    let mut rng = data_rng(cfg.seed);
    let aug = cfg.augment_config();
    let mut history = History::default();

    for epoch in 0..cfg.epochs {
        let lr = schedule_value(epoch, cfg.lr_start, cfg.lr_end, cfg.warm_epochs, cfg.epochs)?;
        let wd = schedule_value(epoch, cfg.wd_start, cfg.wd_end, cfg.warm_epochs, cfg.epochs)?;
        let mut sums = [0.0f64; 4];
        for _ in 0..cfg.steps_per_epoch {
            let patches = (0..cfg.batch_size)
                .map(|_| {
                    let v = &volumes[rand::Rng::random_range(&mut rng, 0..volumes.len())];
                    let s = sample_patch(v, cfg.patch_extent, &mut rng)?;
                    augment_patch(&s.patch, &aug, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            let (x, labels, mask) = batch_tensor::<T>(&patches)?;

            net.zero_grad();
            let outputs = net.forward(
                &x,
                &mut Phase::Train {
                    dropout_p: cfg.dropout_p,
                    rng: &mut rng,
                },
            )?;
            let probs: Vec<Tensor<T>> = outputs.iter().map(|o| o.probs.clone()).collect();
            let loss = cascade_loss(&probs, &labels, &mask, &cfg.loss_weights)?;
            let (total, parts) = loss.values()?;
            if !total.is_finite() {
                return Err(Error::Diverged { epoch, loss: total });
            }
            loss.total.backward()?;
            adamw_step(&params, &mut state, lr, wd)?;

            sums[0] += total;
            for (s, p) in sums[1..].iter_mut().zip(parts) {
                *s += p;
            }
        }
        let k = cfg.steps_per_epoch as f64;
        let record = EpochRecord {
            epoch,
            loss: sums[0] / k,
            l1: sums[1] / k,
            l2: sums[2] / k,
            l3: sums[3] / k,
            lr,
            wd,
        };
        on_epoch(&record);
        history.epochs.push(record);
    }
    Ok((net, history))
}

/// Builds a fresh network from `cfg` (weights seeded by `cfg.seed`) and
/// trains it.
pub fn train_from_scratch<T: Real>(dataset: &[Volume], cfg: &TrainConfig) -> Result<(CascadeNet<T>, History)> {
    cfg.validate()?;
    let net = CascadeNet::seeded(cfg.cascade_config(), cfg.seed)?;
    train(dataset, net, cfg)
}

/// Indices held out by member `member` when `len` subjects are split into
/// `folds` contiguous folds.
pub fn fold_holdout(len: usize, folds: usize, member: usize) -> std::ops::Range<usize> {
    let start = member * len / folds;
    let end = (member + 1) * len / folds;
    start..end
}

/// Seed of ensemble member `member`.
pub fn member_seed(seed: u64, member: usize) -> u64 {
    seed.wrapping_add(1_000_003 * member as u64)
}

/// One member per fold: member `i` skips fold `i` and uses its own seed.
/// Members train concurrently, each on its own thread with its own network.
pub fn train_ensemble<T: Real>(
    dataset: &[Volume],
    cfg: &TrainConfig,
    members: usize,
) -> Result<Vec<(Checkpoint<T>, History)>> {
    cfg.validate()?;
    if members == 0 {
        return Err(Error::invalid("an ensemble needs at least one member"));
    }
    if members > 1 && dataset.len() < members {
        return Err(Error::invalid(format!(
            "{members} folds need at least {members} subjects, got {}",
            dataset.len()
        )));
    }
    let jobs: Vec<(Vec<Volume>, TrainConfig)> = (0..members)
        .map(|i| {
            let held = if members > 1 {
                fold_holdout(dataset.len(), members, i)
            } else {
                0..0
            };
            let subset = dataset
                .iter()
                .enumerate()
                .filter(|(j, _)| !held.contains(j))
                .map(|(_, v)| v.clone())
                .collect();
            let member_cfg = TrainConfig {
                seed: member_seed(cfg.seed, i),
                ..cfg.clone()
            };
            (subset, member_cfg)
        })
        .collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|(subset, member_cfg)| {
                scope.spawn(move || {
                    train_from_scratch::<T>(subset, member_cfg).map(|(net, h)| (Checkpoint::from_net(&net), h))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("training thread panicked"))
            .collect()
    })
}
