use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Real;

/// Warmup then step schedule, scaled linearly by `base_lr / 0.1`.
pub fn lr_schedule(epoch: usize, base_lr: f64) -> f64 {
    let lr = match epoch {
        t if t < 10 => (t as f64 + 1.0) / 100.0,
        t if t < 20 => 0.1,
        t if t < 50 => 0.01,
        _ => 0.001,
    };
    lr * (base_lr / 0.1)
}

/// Momentum buffers, one per parameter, flattened.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState<T> {
    pub buffers: Vec<Vec<T>>,
}

impl<T: Real> OptimizerState<T> {
    /// Zero buffers for parameters of the given lengths.
    pub fn new(lens: impl IntoIterator<Item = usize>) -> Self {
        Self {
            buffers: lens.into_iter().map(|n| vec![T::zero(); n]).collect(),
        }
    }
}

/// `buffer = momentum * buffer + grad; param -= lr * buffer`.
pub fn sgd_step<T: Real>(
    params: &mut [&mut [T]],
    grads: &[Vec<T>],
    lr: f64,
    momentum: f64,
    state: &mut OptimizerState<T>,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.buffers.len() {
        return Err(Error::invalid(format!(
            "sgd_step: {} params, {} grads, {} buffers",
            params.len(),
            grads.len(),
            state.buffers.len()
        )));
    }
    for (i, ((p, gr), buf)) in params.iter().zip(grads).zip(&state.buffers).enumerate() {
        if p.len() != gr.len() || p.len() != buf.len() {
            return Err(Error::Shape {
                op: "sgd_step",
                left: vec![i, p.len()],
                right: vec![gr.len(), buf.len()],
            });
        }
    }
    let (lr, m) = (T::of(lr), T::of(momentum));
    for ((p, gr), buf) in params.iter_mut().zip(grads).zip(&mut state.buffers) {
        for ((x, &g), b) in p.iter_mut().zip(gr).zip(buf.iter_mut()) {
            *b = m * *b + g;
            *x = *x - lr * *b;
        }
    }
    Ok(())
}
