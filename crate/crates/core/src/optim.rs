//! Momentum SGD and an Adam-style variant.
//!
//! The momentum buffer follows `m <- (1 - beta1) * m + beta1 * grad`, so
//! `beta1` weighs the *new* gradient (the reverse of the usual convention);
//! `beta1 = 1` is plain gradient descent. In Adam mode the same buffer is the
//! first moment, with second-moment decay 0.999, epsilon 1e-8 and bias
//! correction on both moments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamVector;

pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerMode {
    MomentumSgd,
    AdamStyle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub mode: OptimizerMode,
    pub lr: f64,
    pub beta1: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            mode: OptimizerMode::AdamStyle,
            lr: 0.01,
            beta1: 0.1,
            weight_decay: 0.0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("lr must be > 0, got {}", self.lr)));
        }
        // beta1 = 1 is allowed: it reduces momentum SGD to plain SGD.
        if !(self.beta1 > 0.0 && self.beta1 <= 1.0) {
            return Err(Error::InvalidConfig(format!("beta1 must lie in (0, 1], got {}", self.beta1)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig("weight_decay must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    pub momentum: Vec<f64>,
    pub second_moment: Option<Vec<f64>>,
    pub step_count: u64,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, num_params: usize) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            momentum: vec![0.0; num_params],
            second_moment: (config.mode == OptimizerMode::AdamStyle).then(|| vec![0.0; num_params]),
            step_count: 0,
        })
    }

    /// Applies one update in place. A non-finite gradient leaves both the
    /// state and the parameters untouched.
    pub fn step(&mut self, params: &mut ParamVector, grad: &ParamVector) -> Result<()> {
        if grad.len() != self.momentum.len() || params.len() != self.momentum.len() {
            return Err(Error::DimensionMismatch {
                what: "gradient",
                expected: self.momentum.len(),
                actual: grad.len(),
            });
        }
        if !grad.is_finite() {
            return Err(Error::NonFinite("gradient"));
        }
        let c = self.config;
        let w = params.values_mut();
        let g: Vec<f64> = grad
            .values()
            .iter()
            .zip(w.iter())
            .map(|(g, w)| g + c.weight_decay * w)
            .collect();
        for (m, g) in self.momentum.iter_mut().zip(&g) {
            *m = (1.0 - c.beta1) * *m + c.beta1 * g;
        }
        self.step_count += 1;
        match (&mut self.second_moment, c.mode) {
            (Some(v), OptimizerMode::AdamStyle) => {
                let t = self.step_count as i32;
                let bc1 = 1.0 - (1.0 - c.beta1).powi(t);
                let bc2 = 1.0 - ADAM_BETA2.powi(t);
                for ((wi, m), (vi, g)) in w.iter_mut().zip(&self.momentum).zip(v.iter_mut().zip(&g)) {
                    *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * g * g;
                    *wi -= c.lr * (m / bc1) / ((*vi / bc2).sqrt() + ADAM_EPS);
                }
            }
            _ => {
                for (wi, m) in w.iter_mut().zip(&self.momentum) {
                    *wi -= c.lr * m;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EncoderConfig;

    fn params(values: Vec<f64>) -> ParamVector {
        // input_dim 1, one class, embed 1, linear: 1 + 1 + 1 + 1 = 4 params
        let cfg = EncoderConfig {
            input_dim: 1,
            num_classes_max: 1,
            hidden_dim: 0,
            embed_dim: 1,
            seed: 0,
        };
        ParamVector::from_values(cfg, values).unwrap()
    }

    fn sgd(beta1: f64, lr: f64) -> OptimizerConfig {
        OptimizerConfig {
            mode: OptimizerMode::MomentumSgd,
            lr,
            beta1,
            weight_decay: 0.0,
        }
    }

    #[test]
    fn beta_one_is_plain_sgd() {
        let mut st = OptimizerState::new(sgd(1.0, 0.1), 4).unwrap();
        let mut w = params(vec![1.0, 2.0, 3.0, 4.0]);
        let g = params(vec![1.0, -1.0, 0.5, 0.0]);
        st.step(&mut w, &g).unwrap();
        assert_eq!(w.values(), &[0.9, 2.1, 2.95, 4.0]);
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        for mode in [OptimizerMode::MomentumSgd, OptimizerMode::AdamStyle] {
            let mut st = OptimizerState::new(OptimizerConfig { mode, ..sgd(0.5, 0.1) }, 4).unwrap();
            let mut w = params(vec![1.0, 2.0, 3.0, 4.0]);
            st.step(&mut w, &params(vec![0.0; 4])).unwrap();
            assert_eq!(w.values(), &[1.0, 2.0, 3.0, 4.0]);
            assert_eq!(st.step_count, 1);
        }
    }

    #[test]
    fn non_finite_gradient_is_refused() {
        let mut st = OptimizerState::new(sgd(0.5, 0.1), 4).unwrap();
        let mut w = params(vec![1.0; 4]);
        let before = st.clone();
        assert!(matches!(
            st.step(&mut w, &params(vec![f64::NAN, 0.0, 0.0, 0.0])),
            Err(Error::NonFinite(_))
        ));
        assert_eq!(st, before);
        assert_eq!(w.values(), &[1.0; 4]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut st = OptimizerState::new(OptimizerConfig { mode: OptimizerMode::AdamStyle, ..sgd(0.1, 0.01) }, 4).unwrap();
        let mut w = params(vec![0.0; 4]);
        st.step(&mut w, &params(vec![3.0, -0.2, 1e3, 0.0])).unwrap();
        // bias-corrected first step is lr * sign(g) up to epsilon
        for (wi, s) in w.values().iter().zip([-1.0, 1.0, -1.0, 0.0]) {
            assert!((wi - 0.01 * s).abs() < 1e-8);
        }
    }

    #[test]
    fn invalid_configs() {
        assert!(sgd(0.0, 0.1).validate().is_err());
        assert!(sgd(0.5, 0.0).validate().is_err());
        assert!(sgd(1.5, 0.1).validate().is_err());
    }
}
