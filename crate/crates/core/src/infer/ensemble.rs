use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::model::{CascadeNet, Checkpoint};
use crate::real::Real;

/// Members of a fold ensemble: member `i` was trained without fold `i`,
/// from its own seed.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleConfig {
    pub folds: usize,
    pub seed: u64,
    pub members: Vec<PathBuf>,
}

impl EnsembleConfig {
    pub const DEFAULT_FOLDS: usize = 5;

    pub fn new(members: Vec<PathBuf>) -> Self {
        EnsembleConfig {
            folds: members.len().max(1),
            seed: 0,
            members,
        }
    }

    /// Reads every member checkpoint and checks they agree on input
    /// channels and classes.
    pub fn load<T: Real>(&self) -> Result<Vec<CascadeNet<T>>> {
        if self.members.is_empty() {
            return Err(Error::Config("ensemble has no members".into()));
        }
        let nets = self
            .members
            .iter()
            .map(|p| {
                Checkpoint::<T>::read(p)
                    .and_then(|c| c.to_net())
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))
            })
            .collect::<Result<Vec<_>>>()?;
        let first = nets[0].config();
        for (p, n) in self.members.iter().zip(&nets).skip(1) {
            let c = n.config();
            if (c.mri_channels, c.num_classes) != (first.mri_channels, first.num_classes) {
                return Err(Error::Config(format!(
                    "{} disagrees with the first member on channels or classes",
                    p.display()
                )));
            }
        }
        Ok(nets)
    }
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            folds: Self::DEFAULT_FOLDS,
            seed: 0,
            members: Vec::new(),
        }
    }
}
