use serde::{Deserialize, Serialize};

use super::NetError;

/// AdaDelta accumulators: running means of squared gradients and squared updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub mean_sq_grad: Vec<f64>,
    pub mean_sq_update: Vec<f64>,
    pub rho: f64,
    pub epsilon: f64,
}

impl OptimizerState {
    pub fn new(len: usize, rho: f64, epsilon: f64) -> Self {
        Self {
            mean_sq_grad: vec![0.0; len],
            mean_sq_update: vec![0.0; len],
            rho,
            epsilon,
        }
    }
}

/// One AdaDelta update, in place.
pub fn adadelta_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut OptimizerState,
) -> Result<(), NetError> {
    let n = params.len();
    for len in [grads.len(), state.mean_sq_grad.len(), state.mean_sq_update.len()] {
        if len != n {
            return Err(NetError::ShapeMismatch {
                expected: n,
                actual: len,
            });
        }
    }
    let (rho, eps) = (state.rho, state.epsilon);
    for (((p, &g), eg), ex) in params
        .iter_mut()
        .zip(grads)
        .zip(state.mean_sq_grad.iter_mut())
        .zip(state.mean_sq_update.iter_mut())
    {
        *eg = rho * *eg + (1.0 - rho) * g * g;
        let delta = -((*ex + eps).sqrt() / (*eg + eps).sqrt()) * g;
        *ex = rho * *ex + (1.0 - rho) * delta * delta;
        *p += delta;
    }
    Ok(())
}
