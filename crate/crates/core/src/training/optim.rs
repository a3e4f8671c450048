//! Adaptive-moment optimizer with decoupled weight decay.

use std::collections::HashMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which head matrix a gradient belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamSlot {
    WStart,
    WEnd,
    WRet,
}

/// AdamW hyperparameters. Learning rate and decay default to the retrieval
/// layers' values (1e-3 / 0.01); betas and epsilon are the standard ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWParams {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamWParams {
    fn default() -> Self {
        AdamWParams {
            learning_rate: 1e-3,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamWParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be a non-negative real, got {}",
                self.learning_rate
            )));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(Error::Config(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("betas must lie in [0, 1)".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Moments {
    first: Array2<f64>,
    second: Array2<f64>,
}

/// Optimizer state: hyperparameters, step counter, and per-matrix moment
/// buffers (allocated lazily, shape-checked against the parameter).
#[derive(Debug, Clone)]
pub struct OptState {
    pub params: AdamWParams,
    pub step_count: u64,
    moments: HashMap<ParamSlot, Moments>,
}

impl OptState {
    pub fn new(params: AdamWParams) -> Result<Self> {
        params.validate()?;
        Ok(OptState {
            params,
            step_count: 0,
            moments: HashMap::new(),
        })
    }

    /// Advances the shared step counter; call once per optimization step,
    /// before applying the step's gradients.
    pub fn begin_step(&mut self) {
        self.step_count += 1;
    }

    /// One AdamW update on a single matrix: moment updates, bias-corrected
    /// adaptive step, then decoupled decay `w -= lr * wd * w`.
    pub fn apply(&mut self, slot: ParamSlot, weight: &mut Array2<f64>, grad: &Array2<f64>) -> Result<()> {
        if grad.dim() != weight.dim() {
            return Err(Error::Shape(format!(
                "gradient {:?} does not match parameter {:?}",
                grad.dim(),
                weight.dim()
            )));
        }
        if self.step_count == 0 {
            return Err(Error::InvalidInput(
                "begin_step must run before apply".into(),
            ));
        }
        let m = self.moments.entry(slot).or_insert_with(|| Moments {
            first: Array2::zeros(weight.dim()),
            second: Array2::zeros(weight.dim()),
        });
        if m.first.dim() != weight.dim() {
            return Err(Error::Shape(format!(
                "moment buffer {:?} does not match parameter {:?}",
                m.first.dim(),
                weight.dim()
            )));
        }
        let p = self.params;
        let t = self.step_count as i32;
        let bias1 = 1.0 - p.beta1.powi(t);
        let bias2 = 1.0 - p.beta2.powi(t);

        ndarray::Zip::from(weight)
            .and(&mut m.first)
            .and(&mut m.second)
            .and(grad)
            .for_each(|w, m1, m2, &g| {
                *m1 = p.beta1 * *m1 + (1.0 - p.beta1) * g;
                *m2 = p.beta2 * *m2 + (1.0 - p.beta2) * g * g;
                let m_hat = *m1 / bias1;
                let v_hat = *m2 / bias2;
                *w -= p.learning_rate * (m_hat / (v_hat.sqrt() + p.epsilon) + p.weight_decay * *w);
            });
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_learning_rate_leaves_weights_unchanged() {
        let mut opt = OptState::new(AdamWParams {
            learning_rate: 0.0,
            ..AdamWParams::default()
        })
        .unwrap();
        let mut w = array![[1.0, -2.0], [0.5, 3.0]];
        let original = w.clone();
        let g = array![[0.3, 0.1], [-0.2, 0.9]];
        for _ in 0..5 {
            opt.begin_step();
            opt.apply(ParamSlot::WStart, &mut w, &g).unwrap();
        }
        assert_eq!(w, original);
    }

    #[test]
    fn first_step_moves_against_gradient() {
        let mut opt = OptState::new(AdamWParams {
            weight_decay: 0.0,
            ..AdamWParams::default()
        })
        .unwrap();
        let mut w = array![[0.0, 0.0]];
        let g = array![[1.0, -2.0]];
        opt.begin_step();
        opt.apply(ParamSlot::WEnd, &mut w, &g).unwrap();
        // bias-corrected first step is ~lr * sign(grad)
        assert!(w[[0, 0]] < 0.0 && w[[0, 0]] > -1.1e-3);
        assert!(w[[0, 1]] > 0.0 && w[[0, 1]] < 1.1e-3);
    }

    #[test]
    fn decay_is_decoupled_from_the_adaptive_step() {
        // zero gradient: the only movement is w -= lr * wd * w
        let mut opt = OptState::new(AdamWParams::default()).unwrap();
        let mut w = array![[2.0]];
        let g = array![[0.0]];
        opt.begin_step();
        opt.apply(ParamSlot::WRet, &mut w, &g).unwrap();
        let expected = 2.0 - 1e-3 * 0.01 * 2.0;
        assert!((w[[0, 0]] - expected).abs() < 1e-15);
    }

    #[test]
    fn mismatched_gradient_shape_is_rejected() {
        let mut opt = OptState::new(AdamWParams::default()).unwrap();
        let mut w = array![[1.0, 2.0]];
        let g = array![[1.0], [2.0]];
        opt.begin_step();
        assert!(opt.apply(ParamSlot::WStart, &mut w, &g).is_err());
    }
}
