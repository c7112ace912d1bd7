//! Tumor regions, Dice, HD95 and per-region summaries.

mod metrics;
mod report;
mod stats;

pub use metrics::{boundary, dice, hd95, region_masks, squared_distance_transform, Region, RegionMask};
pub use report::{evaluate, MetricsReport, RegionSummary, SubjectMetrics};
pub use stats::{percentile, Summary};
