//! Adam with bias correction and an exponential warm-up/decay learning-rate
//! schedule.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Learning-rate schedule: exponential ramp from `base/100` to `base` over
/// `warmup_steps`, then continuous exponential decay by `decay_rate` every
/// `decay_every` steps. Continuous at the junction.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub decay_rate: f64,
    pub decay_every: u64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            base_lr: 1e-3,
            warmup_steps: 200,
            decay_rate: 0.9,
            decay_every: 1000,
        }
    }
}

impl LrSchedule {
    pub fn lr_at(&self, step: u64) -> f64 {
        if step < self.warmup_steps {
            let frac = step as f64 / self.warmup_steps as f64;
            // base/100 at step 0, base at the end of warm-up
            self.base_lr * 100f64.powf(frac - 1.0)
        } else {
            let past = (step - self.warmup_steps) as f64 / self.decay_every as f64;
            self.base_lr * self.decay_rate.powf(past)
        }
    }
}

/// Per-parameter first/second moment accumulators plus the step counter.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub schedule: LrSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl OptimizerState {
    /// Moments are allocated to match the given parameter shapes.
    pub fn new(params: &[&Tensor], schedule: LrSchedule) -> Self {
        OptimizerState {
            schedule,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: params.iter().map(|p| p.zeros_like()).collect(),
            v: params.iter().map(|p| p.zeros_like()).collect(),
        }
    }

    pub fn lr_at_step(&self) -> f64 {
        self.schedule.lr_at(self.step)
    }
}

/// One Adam step over a parameter group.
///
/// `params` and `grads` must align with the shapes the state was built from.
/// A non-finite gradient aborts the step and reports the offending tensor.
pub fn adam_update(
    params: &mut [&mut Tensor],
    grads: &[&Tensor],
    state: &mut OptimizerState,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape("optimizer group size mismatch"));
    }
    for (i, g) in grads.iter().enumerate() {
        if !g.is_finite() {
            return Err(Error::NonFinite {
                context: format!("gradient tensor {i}"),
                step: state.step,
            });
        }
    }
    let lr = state.lr_at_step();
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - state.beta1.powf(t);
    let bc2 = 1.0 - state.beta2.powf(t);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);

    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads.iter())
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        if p.shape() != g.shape() {
            return Err(Error::shape("param/grad shape mismatch"));
        }
        let pd = p.data_mut();
        let gd = g.data();
        let md = m.data_mut();
        let vd = v.data_mut();
        for i in 0..pd.len() {
            md[i] = b1 * md[i] + (1.0 - b1) * gd[i];
            vd[i] = b2 * vd[i] + (1.0 - b2) * gd[i] * gd[i];
            let m_hat = md[i] / bc1;
            let v_hat = vd[i] / bc2;
            pd[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
