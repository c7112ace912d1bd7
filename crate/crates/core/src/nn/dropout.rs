use rand::Rng as _;

use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::Rng;

/// Zeroes whole `(sample, channel)` planes with probability `p` and scales
/// the survivors by `1 / (1 - p)`. Outside training it returns `x` itself.
pub fn spatial_dropout<T: Real>(x: &Tensor<T>, p: f64, training: bool, rng: &mut Rng) -> Result<Tensor<T>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::invalid(format!("dropout probability {p} outside [0, 1)")));
    }
    if !training || p == 0.0 {
        return Ok(x.clone());
    }
    if x.ndim() < 2 {
        return Err(Error::InvalidShape(format!(
            "spatial_dropout expects (N, C, ...), got {:?}",
            x.shape()
        )));
    }
    let planes = x.shape()[0] * x.shape()[1];
    let m: usize = x.shape()[2..].iter().product();
    let keep = T::of(1.0 / (1.0 - p));
    let factors: Vec<T> = (0..planes)
        .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
        .collect();
    let out = x
        .data()
        .chunks(m)
        .zip(&factors)
        .flat_map(|(plane, &f)| plane.iter().map(move |&v| v * f))
        .collect();
    Ok(Tensor::from_op(
        out,
        x.shape().to_vec(),
        "spatial_dropout",
        vec![x.clone()],
        Box::new(move |g, _| {
            let gx = g
                .chunks(m)
                .zip(&factors)
                .flat_map(|(plane, &f)| plane.iter().map(move |&v| v * f))
                .collect();
            vec![Some(gx)]
        }),
    ))
}
