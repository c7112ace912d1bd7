use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::real::Real;

/// Moment accumulators of AdamW, one slot per parameter in the order the
/// parameters are passed to [`adamw_step`].
#[derive(Debug, Clone)]
pub struct OptimizerState<T: Real = f32> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Real> Default for OptimizerState<T> {
    fn default() -> Self {
        OptimizerState {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }
}

impl<T: Real> OptimizerState<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn first_moment(&self, i: usize) -> Option<&[T]> {
        self.first.get(i).map(Vec::as_slice)
    }

    pub fn second_moment(&self, i: usize) -> Option<&[T]> {
        self.second.get(i).map(Vec::as_slice)
    }
}

/// One AdamW step with decoupled weight decay:
/// `theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) - wd * theta`.
///
/// Tensors that do not require grad (such as the fixed blur kernels) and
/// tensors without a gradient are left untouched.
pub fn adamw_step<T: Real>(params: &[Tensor<T>], state: &mut OptimizerState<T>, lr: f64, wd: f64) -> Result<()> {
    if !(lr >= 0.0 && wd >= 0.0) {
        return Err(Error::invalid(format!("lr {lr} and wd {wd} must be non-negative")));
    }
    if state.first.is_empty() {
        state.first = params.iter().map(|p| vec![T::zero(); p.numel()]).collect();
        state.second = state.first.clone();
    }
    if state.first.len() != params.len() {
        return Err(Error::invalid(format!(
            "optimizer tracks {} tensors, given {}",
            state.first.len(),
            params.len()
        )));
    }
    for (i, p) in params.iter().enumerate() {
        if state.first[i].len() != p.numel() {
            return Err(Error::shape("adamw_step", &[state.first[i].len()], p.shape()));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let (b1t, b2t) = (T::of(b1), T::of(b2));
    let (nb1, nb2) = (T::of(1.0 - b1), T::of(1.0 - b2));
    let (lr_t, wd_t, eps) = (T::of(lr), T::of(wd), T::of(state.eps));
    let (c1, c2) = (T::of(c1), T::of(c2));

    for (i, p) in params.iter().enumerate() {
        if !p.requires_grad() {
            continue;
        }
        let grad = p.grad_ref();
        let Some(g) = grad.as_ref() else { continue };
        let m = &mut state.first[i];
        let v = &mut state.second[i];
        let mut data = p.data_mut();
        for j in 0..data.len() {
            m[j] = b1t * m[j] + nb1 * g[j];
            v[j] = b2t * v[j] + nb2 * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            let theta = data[j];
            data[j] = theta - lr_t * m_hat / (v_hat.sqrt() + eps) - wd_t * theta;
        }
    }
    Ok(())
}
