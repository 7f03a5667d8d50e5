//! Bias-corrected Adam.

use crate::error::{Error, Result};
use crate::params::ModelParameters;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment accumulators, shaped like the parameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    first: ModelParameters,
    second: ModelParameters,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParameters, config: AdamConfig) -> Self {
        Self {
            config,
            first: params.zeros_like(),
            second: params.zeros_like(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &ModelParameters {
        &self.first
    }

    pub fn second_moment(&self) -> &ModelParameters {
        &self.second
    }

    /// Applies one update in place and advances the step counter.
    pub fn step(&mut self, params: &mut ModelParameters, grads: &ModelParameters) -> Result<()> {
        params.check_compatible(grads)?;
        params
            .check_compatible(&self.first)
            .map_err(|e| Error::Shape(format!("optimizer state: {e}")))?;
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in params
            .tensors_mut()
            .zip(grads.tensors())
            .zip(self.first.tensors_mut())
            .zip(self.second.tensors_mut())
        {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                let gv = f64::from(gv);
                let m_new = beta1 * f64::from(*mv) + (1.0 - beta1) * gv;
                let v_new = beta2 * f64::from(*vv) + (1.0 - beta2) * gv * gv;
                *mv = m_new as f32;
                *vv = v_new as f32;
                let update = learning_rate * (m_new / c1) / ((v_new / c2).sqrt() + epsilon);
                *pv = (f64::from(*pv) - update) as f32;
            }
        }
        Ok(())
    }
}
