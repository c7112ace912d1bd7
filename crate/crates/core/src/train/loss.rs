//! Masked categorical cross-entropy and the weighted three-stage objective.

use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::model::NUM_STAGES;
use crate::real::Real;

/// Probabilities are clamped into `[PROB_FLOOR, 1]` before the logarithm.
pub const PROB_FLOOR: f64 = 1e-7;

/// Loss value plus a flag raised when the mask selected no voxel (the loss
/// is then zero).
#[derive(Debug, Clone)]
pub struct MaskedLoss<T: Real = f32> {
    pub loss: Tensor<T>,
    pub empty_mask: bool,
}

/// Mean over masked voxels of `-log p[true class]`.
///
/// `probs` is `(N, K, H, W)`; `labels` and `mask` are `N*H*W` row-major.
pub fn cross_entropy_masked<T: Real>(probs: &Tensor<T>, labels: &[u8], mask: &[bool]) -> Result<MaskedLoss<T>> {
    let [n, k, h, w]: [usize; 4] = probs
        .shape()
        .try_into()
        .map_err(|_| Error::InvalidShape(format!("probs must be (N, K, H, W), got {:?}", probs.shape())))?;
    let m = h * w;
    if labels.len() != n * m || mask.len() != n * m {
        return Err(Error::shape("cross_entropy_masked labels", &[n, h, w], &[labels.len(), mask.len()]));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= k) {
        return Err(Error::invalid(format!("label {bad} out of range for {k} classes")));
    }
    let count = mask.iter().filter(|&&v| v).count();
    let floor = T::of(PROB_FLOOR);
    let pd = probs.data();
    let idx = |v: usize| {
        let (b, p) = (v / m, v % m);
        (b * k + labels[v] as usize) * m + p
    };
    let mut total = 0.0f64;
    for v in (0..n * m).filter(|&v| mask[v]) {
        total -= pd[idx(v)].max(floor).min(T::one()).f64().ln();
    }
    drop(pd);
    let value = if count == 0 { 0.0 } else { total / count as f64 };

    let labels = labels.to_vec();
    let mask = mask.to_vec();
    let src = probs.clone();
    let loss = Tensor::from_op(
        vec![T::of(value)],
        Vec::new(),
        "cross_entropy_masked",
        vec![probs.clone()],
        Box::new(move |g, _| {
            let pd = src.data();
            let mut gp = vec![T::zero(); pd.len()];
            if count > 0 {
                let scale = g[0] / T::of(count as f64);
                for v in (0..n * m).filter(|&v| mask[v]) {
                    let (b, p) = (v / m, v % m);
                    let i = (b * k + labels[v] as usize) * m + p;
                    let pv = pd[i];
                    // the clamp is flat outside (floor, 1)
                    if pv > floor && pv < T::one() {
                        gp[i] -= scale / pv;
                    }
                }
            }
            vec![Some(gp)]
        }),
    );
    Ok(MaskedLoss {
        loss,
        empty_mask: count == 0,
    })
}

/// Weighted sum of the per-stage losses and the parts themselves.
#[derive(Debug, Clone)]
pub struct CascadeLoss<T: Real = f32> {
    pub total: Tensor<T>,
    pub parts: [Tensor<T>; NUM_STAGES],
}

impl<T: Real> CascadeLoss<T> {
    pub fn values(&self) -> Result<(f64, [f64; NUM_STAGES])> {
        let parts = [
            self.parts[0].item()?.f64(),
            self.parts[1].item()?.f64(),
            self.parts[2].item()?.f64(),
        ];
        Ok((self.total.item()?.f64(), parts))
    }
}

/// `total = w1 L1 + w2 L2 + w3 L3` from precomputed per-stage losses.
pub fn weighted_total<T: Real>(parts: &[Tensor<T>], weights: &[f64]) -> Result<Tensor<T>> {
    if parts.len() != NUM_STAGES || weights.len() != NUM_STAGES {
        return Err(Error::invalid(format!(
            "cascade loss needs {NUM_STAGES} stages and weights, got {} and {}",
            parts.len(),
            weights.len()
        )));
    }
    let mut total = parts[0].scale(T::of(weights[0]));
    for (p, &w) in parts.iter().zip(weights).skip(1) {
        total = total.add(&p.scale(T::of(w)))?;
    }
    Ok(total)
}

/// Masked cross-entropy per stage, combined with `weights`.
pub fn cascade_loss<T: Real>(
    stage_probs: &[Tensor<T>],
    labels: &[u8],
    mask: &[bool],
    weights: &[f64],
) -> Result<CascadeLoss<T>> {
    if stage_probs.len() != NUM_STAGES {
        return Err(Error::invalid(format!(
            "cascade loss needs {NUM_STAGES} stages, got {}",
            stage_probs.len()
        )));
    }
    let parts: Vec<Tensor<T>> = stage_probs
        .iter()
        .map(|p| cross_entropy_masked(p, labels, mask).map(|l| l.loss))
        .collect::<Result<_>>()?;
    let total = weighted_total(&parts, weights)?;
    let parts: [Tensor<T>; NUM_STAGES] = parts.try_into().expect("three stages");
    Ok(CascadeLoss { total, parts })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probs(v: Vec<f64>, s: &[usize]) -> Tensor<f64> {
        Tensor::from_vec(v, s).unwrap()
    }

    #[test]
    fn uniform_prediction_is_ln_k() {
        let p = probs(vec![0.25; 4 * 6], &[1, 4, 2, 3]);
        let l = cross_entropy_masked(&p, &[0, 1, 2, 3, 0, 1], &[true; 6]).unwrap();
        assert!((l.loss.item().unwrap() - 4f64.ln()).abs() < 1e-12);
        assert!(!l.empty_mask);
    }

    #[test]
    fn perfect_prediction_is_near_zero() {
        let mut v = vec![0.0; 2 * 4];
        // labels [1, 0, 0, 1] over 4 voxels
        for (i, &l) in [1usize, 0, 0, 1].iter().enumerate() {
            v[l * 4 + i] = 1.0;
        }
        let l = cross_entropy_masked(&probs(v, &[1, 2, 2, 2]), &[1, 0, 0, 1], &[true; 4]).unwrap();
        assert!(l.loss.item().unwrap() <= -(1.0f64 - 1e-7).ln() + 1e-15);
    }

    #[test]
    fn empty_mask_flags_and_returns_zero() {
        let p = probs(vec![0.5; 8], &[1, 2, 2, 2]).to_param();
        let l = cross_entropy_masked(&p, &[0; 4], &[false; 4]).unwrap();
        assert!(l.empty_mask);
        assert_eq!(l.loss.item().unwrap(), 0.0);
        l.loss.backward().unwrap();
        assert!(p.grad().unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn label_out_of_range() {
        let p = probs(vec![0.5; 8], &[1, 2, 2, 2]);
        assert!(cross_entropy_masked(&p, &[0, 1, 2, 0], &[true; 4]).is_err());
    }

    #[test]
    fn weighted_sum_substitution() {
        let one = Tensor::<f64>::scalar(1.0);
        let t = weighted_total(&[one.clone(), one.clone(), one.clone()], &[0.3, 0.4, 1.0]).unwrap();
        assert!((t.item().unwrap() - 1.7).abs() < 1e-15);
        let z = Tensor::<f64>::scalar(0.0);
        let x = Tensor::<f64>::scalar(0.8125);
        let t = weighted_total(&[z.clone(), z, x], &[0.3, 0.4, 1.0]).unwrap();
        assert_eq!(t.item().unwrap(), 0.8125);
        assert!(weighted_total(&[one.clone(), one], &[0.3, 0.4]).is_err());
    }
}
