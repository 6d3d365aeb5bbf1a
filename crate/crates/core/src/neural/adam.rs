use super::params::ParamSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 coefficient folded into the gradient (`g + wd·θ`) before the
    /// moment updates.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 5e-4,
        }
    }
}

/// Moment accumulators for one parameter container.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step_count: u64,
}

impl AdamState {
    pub fn new<P: ParamSet>(config: AdamConfig, params: &P) -> Self {
        let n = params.num_params();
        Self {
            config,
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.first_moment
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step<P: ParamSet>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let g = grads.flatten();
        if g.len() != self.first_moment.len() || params.num_params() != g.len() {
            return Err(Error::ShapeMismatch(format!(
                "optimizer tracks {} parameters, gradients have {}",
                self.first_moment.len(),
                g.len()
            )));
        }
        let c = self.config;
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let m = &mut self.first_moment;
        let v = &mut self.second_moment;
        let mut offset = 0;
        params.visit_mut(&mut |_, _, theta| {
            for (k, p) in theta.iter_mut().enumerate() {
                let idx = offset + k;
                let grad = g[idx] + c.weight_decay * *p;
                m[idx] = c.beta1 * m[idx] + (1.0 - c.beta1) * grad;
                v[idx] = c.beta2 * v[idx] + (1.0 - c.beta2) * grad * grad;
                let m_hat = m[idx] / bc1;
                let v_hat = v[idx] / bc2;
                *p -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
            }
            offset += theta.len();
        });
        Ok(())
    }
}
