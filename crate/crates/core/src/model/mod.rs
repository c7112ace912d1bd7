//! The DLA stage and the three-stage cascade built from it.

mod cascade;
mod checkpoint;
mod dla;

pub use cascade::{cascade_forward, CascadeConfig, CascadeNet, CascadeOutput, LOSS_WEIGHTS, NUM_STAGES};
pub use checkpoint::Checkpoint;
pub use dla::{
    aggregate, build_hda, build_ida, dla_forward, Aggregation, DlaStage, DlaStageConfig, HdaTree, Ida,
    StageOutput,
};

use crate::Rng;

/// Forward-pass mode. Training enables spatial dropout drawn from `rng`.
pub enum Phase<'a> {
    Inference,
    Train { dropout_p: f64, rng: &'a mut Rng },
}
