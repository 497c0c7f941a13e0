//! Adaptive-moment optimizer for student parameters.

use crate::model::ModelParams;
use crate::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First/second moment buffers, one pair per parameter entry. Only student
/// parameters ever get an optimizer state; teachers are EMA-updated.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        AdamState {
            m: params.entries().iter().map(|e| vec![0.0; e.data.len()]).collect(),
            v: params.entries().iter().map(|e| vec![0.0; e.data.len()]).collect(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update with bias-corrected moments.
    pub fn step(&mut self, params: &mut ModelParams, grads: &[Vec<f64>], lr: f64) -> Result<()> {
        if grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer got {} gradient buffers for {} parameters",
                grads.len(),
                self.m.len()
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for (ei, entry) in params.entries_mut().iter_mut().enumerate() {
            let g = &grads[ei];
            if g.len() != entry.data.len() {
                return Err(Error::Shape(format!(
                    "gradient length {} does not match parameter '{}' length {}",
                    g.len(),
                    entry.name,
                    entry.data.len()
                )));
            }
            let m = &mut self.m[ei];
            let v = &mut self.v[ei];
            for i in 0..g.len() {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                entry.data[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }
}

/// Poly learning-rate schedule: eta0 * (1 - iter/max_iter)^0.9.
pub fn lr_schedule(eta0: f64, iter: usize, max_iter: usize) -> Result<f64> {
    if iter > max_iter {
        return Err(Error::Domain(format!(
            "iteration {iter} beyond max_iter {max_iter}"
        )));
    }
    Ok(eta0 * (1.0 - iter as f64 / max_iter as f64).powf(0.9))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ArchitectureKind, ModelParams};

    #[test]
    fn lr_schedule_endpoints_and_midpoint() {
        let eta0 = 1e-3;
        assert_eq!(lr_schedule(eta0, 0, 100).unwrap(), eta0);
        assert_eq!(lr_schedule(eta0, 100, 100).unwrap(), 0.0);
        let mid = lr_schedule(eta0, 50, 100).unwrap();
        assert!((mid - eta0 * 0.5f64.powf(0.9)).abs() < 1e-15);
        assert!((mid / eta0 - 0.5358867312681466).abs() < 1e-12);
        assert!(lr_schedule(eta0, 101, 100).is_err());
    }

    #[test]
    fn adam_descends_a_quadratic() {
        // treat one small parameter tensor as x and minimize sum(x^2)
        let mut params = ModelParams::init(ArchitectureKind::PlainConvNet, 2, 4, 3).unwrap();
        let mut state = AdamState::new(&params);
        let loss = |p: &ModelParams| -> f64 {
            p.entries().iter().flat_map(|e| &e.data).map(|v| v * v).sum()
        };
        let before = loss(&params);
        for _ in 0..200 {
            let grads: Vec<Vec<f64>> = params
                .entries()
                .iter()
                .map(|e| e.data.iter().map(|v| 2.0 * v).collect())
                .collect();
            state.step(&mut params, &grads, 1e-2).unwrap();
        }
        let after = loss(&params);
        assert!(after < before * 0.05, "{after} vs {before}");
    }
}
