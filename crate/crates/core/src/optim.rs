//! Adadelta and Adam with PyTorch default hyperparameters.

use ndarray::{ArrayD, Zip};
use serde::{Deserialize, Serialize};

use crate::nn::Param;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adadelta,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    /// Adadelta decay; 0.9 when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    /// Adam moment decays; (0.9, 0.999) when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub betas: Option<(f64, f64)>,
    /// 1e-6 for Adadelta, 1e-8 for Adam when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
}

impl OptimizerConfig {
    pub fn adadelta(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Adadelta,
            lr,
            rho: None,
            betas: None,
            eps: None,
        }
    }

    pub fn adam(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr,
            rho: None,
            betas: None,
            eps: None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(format!("learning rate must be finite and non-negative, got {}", self.lr));
        }
        if let Some(rho) = self.rho {
            if !(0.0..1.0).contains(&rho) {
                return Err(format!("rho must be in [0, 1), got {rho}"));
            }
        }
        if let Some((b1, b2)) = self.betas {
            if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
                return Err(format!("betas must be in [0, 1), got ({b1}, {b2})"));
            }
        }
        if let Some(eps) = self.eps {
            if eps.is_nan() || eps <= 0.0 {
                return Err(format!("eps must be positive, got {eps}"));
            }
        }
        Ok(())
    }
}

/// Per-parameter optimizer state; bound to a fixed parameter list order.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    first: Vec<ArrayD<f64>>,
    second: Vec<ArrayD<f64>>,
    steps: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Self {
        Self {
            config,
            first: Vec::new(),
            second: Vec::new(),
            steps: 0,
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update from the accumulated gradients.
    pub fn step(&mut self, params: Vec<&mut Param>) {
        if self.first.is_empty() {
            self.first = params.iter().map(|p| ArrayD::zeros(p.value.raw_dim())).collect();
            self.second = self.first.clone();
        }
        assert_eq!(self.first.len(), params.len(), "optimizer bound to a different parameter list");
        self.steps += 1;
        let lr = self.config.lr;
        match self.config.kind {
            OptimizerKind::Adadelta => {
                let rho = self.config.rho.unwrap_or(0.9);
                let eps = self.config.eps.unwrap_or(1e-6);
                // first: running E[g²]; second: running E[Δx²]
                for ((p, sq_grad), sq_delta) in params.into_iter().zip(&mut self.first).zip(&mut self.second) {
                    Zip::from(&mut p.value)
                        .and(&p.grad)
                        .and(sq_grad)
                        .and(sq_delta)
                        .for_each(|w, &g, eg, ed| {
                            *eg = rho * *eg + (1.0 - rho) * g * g;
                            let delta = (*ed + eps).sqrt() / (*eg + eps).sqrt() * g;
                            *ed = rho * *ed + (1.0 - rho) * delta * delta;
                            *w -= lr * delta;
                        });
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2) = self.config.betas.unwrap_or((0.9, 0.999));
                let eps = self.config.eps.unwrap_or(1e-8);
                let t = self.steps as i32;
                let c1 = 1.0 - b1.powi(t);
                let c2 = 1.0 - b2.powi(t);
                for ((p, m), v) in params.into_iter().zip(&mut self.first).zip(&mut self.second) {
                    Zip::from(&mut p.value)
                        .and(&p.grad)
                        .and(m)
                        .and(v)
                        .for_each(|w, &g, m, v| {
                            *m = b1 * *m + (1.0 - b1) * g;
                            *v = b2 * *v + (1.0 - b2) * g * g;
                            *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                        });
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    fn scalar(v: f64, g: f64) -> Param {
        let mut p = Param::new(ArrayD::from_elem(IxDyn(&[1]), v));
        p.grad.fill(g);
        p
    }

    #[test]
    fn adadelta_first_step_by_hand() {
        // E[g²] = 0.1·4 = 0.4; Δ = sqrt(1e-6)/sqrt(0.4+1e-6)·2
        let mut p = scalar(1.0, 2.0);
        let mut opt = Optimizer::new(OptimizerConfig::adadelta(0.9));
        opt.step(vec![&mut p]);
        let delta = (1e-6f64).sqrt() / (0.4f64 + 1e-6).sqrt() * 2.0;
        assert!((p.value[[0]] - (1.0 - 0.9 * delta)).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // bias-corrected m/sqrt(v) = sign(g) on step one
        let mut p = scalar(0.0, -3.0);
        let mut opt = Optimizer::new(OptimizerConfig::adam(1e-4));
        opt.step(vec![&mut p]);
        assert!((p.value[[0]] - 1e-4).abs() < 1e-10);
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        for cfg in [OptimizerConfig::adadelta(0.0), OptimizerConfig::adam(0.0)] {
            let mut p = scalar(0.7, 1.3);
            let mut opt = Optimizer::new(cfg);
            for _ in 0..5 {
                opt.step(vec![&mut p]);
            }
            assert_eq!(p.value[[0]], 0.7);
        }
    }

    #[test]
    fn both_minimize_a_quadratic() {
        for cfg in [OptimizerConfig::adadelta(1.0), OptimizerConfig::adam(0.05)] {
            let mut p = scalar(3.0, 0.0);
            let mut opt = Optimizer::new(cfg.clone());
            for _ in 0..2000 {
                let x = p.value[[0]];
                p.grad.fill(2.0 * x);
                opt.step(vec![&mut p]);
            }
            assert!(p.value[[0]].abs() < 0.1, "{cfg:?} ended at {}", p.value[[0]]);
        }
    }

    #[test]
    fn rejects_bad_settings() {
        assert!(OptimizerConfig::adam(-1.0).validate().is_err());
        let mut c = OptimizerConfig::adadelta(1.0);
        c.rho = Some(1.0);
        assert!(c.validate().is_err());
    }
}
