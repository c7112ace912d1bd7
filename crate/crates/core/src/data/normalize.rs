use crate::error::{Error, Result};

use super::Volume;

/// Channels whose brain-region variance is below this are treated as
/// constant: they are centred but not scaled.
pub const MIN_VARIANCE: f64 = 1e-12;

/// Per-channel z-scoring over brain voxels (any channel nonzero), using the
/// volume's own statistics. Background stays exactly zero.
pub fn normalize(vol: &Volume) -> Result<Volume> {
    normalize_with_report(vol).map(|(v, _)| v)
}

/// As [`normalize`], also returning the indices of constant channels.
pub fn normalize_with_report(vol: &Volume) -> Result<(Volume, Vec<usize>)> {
    let mask = vol.brain_mask();
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::invalid(format!("volume {} has an empty brain region", vol.subject)));
    }
    let mut out = vol.clone();
    let mut degenerate = Vec::new();
    for c in 0..vol.channels {
        let src = vol.channel(c);
        let values = || src.iter().zip(&mask).filter(|(_, &m)| m).map(|(&v, _)| v as f64);
        let mean = values().sum::<f64>() / count as f64;
        let var = values().map(|v| (v - mean).powi(2)).sum::<f64>() / count as f64;
        let inv_std = if var < MIN_VARIANCE {
            degenerate.push(c);
            1.0
        } else {
            1.0 / var.sqrt()
        };
        for ((dst, &v), &m) in out.channel_mut(c).iter_mut().zip(src).zip(&mask) {
            *dst = if m { ((v as f64 - mean) * inv_std) as f32 } else { 0.0 };
        }
    }
    Ok((out, degenerate))
}
