//! Whole-volume prediction, ensembling and small-cluster removal.

mod ensemble;
mod postproc;
mod predict;

pub use ensemble::EnsembleConfig;
pub use postproc::{
    connected_components, derive_threshold, postprocess, postprocess_volume, Connectivity, PostprocConfig,
    DEFAULT_THRESHOLD_PERCENTILE,
};
pub use predict::{ensemble_predict, predict_volume, running_mean, tile_origins, ProbVolume, Stitcher};
