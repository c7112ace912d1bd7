use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Two-phase schedule: `start` for epochs below `warm_epochs`, then cosine
/// annealing that reaches exactly `end` on the last epoch `total - 1`.
pub fn schedule_value(epoch: usize, start: f64, end: f64, warm_epochs: usize, total: usize) -> Result<f64> {
    if warm_epochs >= total {
        return Err(Error::Config(format!(
            "warm epochs {warm_epochs} must be below total epochs {total}"
        )));
    }
    if epoch >= total {
        return Err(Error::invalid(format!("epoch {epoch} outside 0..{total}")));
    }
    if epoch < warm_epochs {
        return Ok(start);
    }
    let span = total - 1 - warm_epochs;
    if span == 0 {
        return Ok(end);
    }
    let t = (epoch - warm_epochs) as f64 / span as f64;
    Ok(end + 0.5 * (start - end) * (1.0 + (PI * t).cos()))
}
