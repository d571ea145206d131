//! Leaky integrate-and-fire dynamics with soft reset, and the rectangular
//! surrogate gradient used in backward passes.
//!
//! The state update is
//!
//! ```text
//! u' = tau * u + synaptic_input - theta * s
//! s' = step(u' - u_th)        step(x) = 1 for x > 0, else 0
//! ```
//!
//! so a spike at the previous step subtracts `theta` instead of clearing the
//! potential. The surrogate derivative of the step is a rectangle of width
//! `a` and height `1/a` centered on the threshold.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LifParams {
    /// Leak constant: multiplicative decay per step, in [0, 1].
    pub tau: f64,
    /// Threshold potential; a neuron fires when its potential exceeds this.
    pub u_th: f64,
    /// Soft-reset constant subtracted after a spike.
    pub theta: f64,
    /// Width of the surrogate gradient's non-zero region.
    pub a: f64,
}

impl LifParams {
    /// Parameters with `theta = u_th`, the default coupling.
    pub fn with_threshold(tau: f64, u_th: f64, a: f64) -> Self {
        LifParams {
            tau,
            u_th,
            theta: u_th,
            a,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) || !self.tau.is_finite() {
            return Err(Error::Config(format!(
                "leak constant tau must be in [0, 1], got {}",
                self.tau
            )));
        }
        if !(self.u_th > 0.0) {
            return Err(Error::Config(format!(
                "threshold u_th must be positive, got {}",
                self.u_th
            )));
        }
        if !(self.a > 0.0) {
            return Err(Error::Config(format!(
                "surrogate width a must be positive, got {}",
                self.a
            )));
        }
        if !self.theta.is_finite() {
            return Err(Error::Config("reset constant theta must be finite".into()));
        }
        Ok(())
    }
}

impl Default for LifParams {
    fn default() -> Self {
        // Desk-scale defaults tuned on the bundled synthetic task: a wide
        // surrogate keeps gradients alive in small randomly-initialized
        // nets. Dataset-specific values belong in the train config.
        LifParams::with_threshold(0.5, 0.3, 2.0)
    }
}

/// Membrane potentials and spikes for one layer. `u` and `s` always share a
/// shape, and every element of `s` is exactly 0.0 or 1.0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerState {
    pub u: Tensor,
    pub s: Tensor,
}

/// All-zero state for a fresh layer.
pub fn reset_state(shape: &[usize]) -> LayerState {
    LayerState {
        u: Tensor::zeros(shape),
        s: Tensor::zeros(shape),
    }
}

/// One LIF step. Pure: the previous state is untouched.
pub fn lif_step(prev: &LayerState, synaptic_input: &Tensor, params: &LifParams) -> Result<LayerState> {
    if !prev.u.same_shape(&prev.s) || !prev.u.same_shape(synaptic_input) {
        return Err(Error::ShapeMismatch {
            context: "lif_step".into(),
            expected: prev.u.shape().to_vec(),
            got: synaptic_input.shape().to_vec(),
        });
    }
    let n = prev.u.len();
    let mut u = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    let (pu, ps, inp) = (prev.u.data(), prev.s.data(), synaptic_input.data());
    for i in 0..n {
        let next_u = params.tau * pu[i] + inp[i] - params.theta * ps[i];
        u.push(next_u);
        // Fire strictly above threshold: step(0) = 0.
        s.push(if next_u > params.u_th { 1.0 } else { 0.0 });
    }
    Ok(LayerState {
        u: Tensor::from_vec(prev.u.shape(), u)?,
        s: Tensor::from_vec(prev.u.shape(), s)?,
    })
}

/// Rectangular surrogate of the step derivative, evaluated elementwise:
/// `1/a` where `|u - u_th| < a/2`, else 0 (strict inequality at the edges).
pub fn surrogate_grad(u: &Tensor, params: &LifParams) -> Result<Tensor> {
    if !(params.a > 0.0) {
        return Err(Error::Config(format!(
            "surrogate width a must be positive, got {}",
            params.a
        )));
    }
    let half = params.a / 2.0;
    let height = 1.0 / params.a;
    Ok(u.map(|x| {
        if (x - params.u_th).abs() < half {
            height
        } else {
            0.0
        }
    }))
}

/// Scalar form of [`surrogate_grad`], used by the backward recursions.
#[inline]
pub fn surrogate_grad_scalar(u: f64, params: &LifParams) -> f64 {
    if (u - params.u_th).abs() < params.a / 2.0 {
        1.0 / params.a
    } else {
        0.0
    }
}
