//! First-order optimizers over flat parameter vectors.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

impl OptimizerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(Error::invalid(format!(
                "unknown optimizer `{other}` (expected adam or sgd)"
            ))),
        }
    }
}

/// Optimizer state. Adam keeps first and second moments and a step count.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, param_count: usize) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        let moments = if kind == OptimizerKind::Adam { param_count } else { 0 };
        Ok(Optimizer {
            kind,
            learning_rate,
            m: vec![0.0; moments],
            v: vec![0.0; moments],
            t: 0,
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Adam => {
                if self.m.len() != params.len() {
                    return Err(Error::shape(format!(
                        "optimizer built for {} parameters, got {}",
                        self.m.len(),
                        params.len()
                    )));
                }
                let c1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
                let c2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
                for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
            }
        }
        Ok(())
    }
}

/// Rescales `grads` in place so its Euclidean norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        for kind in [OptimizerKind::Adam, OptimizerKind::Sgd] {
            let mut opt = Optimizer::new(kind, 0.01, 3).unwrap();
            let mut p = vec![0.5, -1.0, 2.0];
            for _ in 0..5 {
                opt.step(&mut p, &[0.0; 3]).unwrap();
            }
            assert_eq!(p, vec![0.5, -1.0, 2.0]);
        }
    }

    #[test]
    fn sgd_is_plain_descent() {
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.1, 2).unwrap();
        let mut p = vec![1.0, 2.0];
        opt.step(&mut p, &[0.5, -3.0]).unwrap();
        assert_eq!(p, vec![1.0 - 0.1 * 0.5, 2.0 + 0.1 * 3.0]);
    }

    #[test]
    fn adam_first_step_is_sign_like() {
        let lr = 0.005;
        let g = [0.3, -2e-3, 7.0];
        let mut opt = Optimizer::new(OptimizerKind::Adam, lr, 3).unwrap();
        let mut p = vec![0.0; 3];
        opt.step(&mut p, &g).unwrap();
        for (pi, gi) in p.iter().zip(g) {
            let expect = -lr * gi / (gi.abs() + ADAM_EPS);
            assert!((pi - expect).abs() < 1e-15, "{pi} vs {expect}");
        }
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.05, 2).unwrap();
        let mut p = vec![3.0, -2.0];
        for _ in 0..2000 {
            let g = [2.0 * (p[0] - 1.0), 2.0 * (p[1] + 0.5)];
            opt.step(&mut p, &g).unwrap();
        }
        assert!((p[0] - 1.0).abs() < 1e-3 && (p[1] + 0.5).abs() < 1e-3);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(Optimizer::new(OptimizerKind::Adam, 0.0, 1).is_err());
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.1, 2).unwrap();
        assert!(opt.step(&mut [0.0; 2], &[0.0; 3]).is_err());
        assert!(opt.step(&mut [0.0; 3], &[0.0; 3]).is_err());
        assert!("rmsprop".parse::<OptimizerKind>().is_err());
        assert_eq!("SGD".parse::<OptimizerKind>().unwrap(), OptimizerKind::Sgd);
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = vec![3.0, 4.0];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
        let mut small = vec![0.1, 0.1];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small, vec![0.1, 0.1]);
    }
}
