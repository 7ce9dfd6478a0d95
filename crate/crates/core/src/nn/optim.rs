use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::NnError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub total_epochs: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            total_epochs: 100,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let ok = self.learning_rate > 0.0
            && self.weight_decay >= 0.0
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.eps > 0.0
            && self.total_epochs > 0;
        if ok {
            Ok(())
        } else {
            Err(NnError::InvalidConfig(format!("{self:?}")))
        }
    }

    /// Cosine-annealed learning rate for `epoch`, decaying to zero at
    /// `total_epochs`.
    pub fn cosine_lr(&self, epoch: usize) -> f64 {
        let progress = epoch as f64 / self.total_epochs as f64;
        0.5 * self.learning_rate * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// One AdamW update with decoupled weight decay. `step` counts from 1 and
/// drives bias correction; `lr` is the scheduled rate for this step.
pub fn adamw_step(params: &mut ParamStore, cfg: &OptimizerConfig, lr: f64, step: u64) {
    assert!(step >= 1, "AdamW step index starts at 1");
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    let decay = 1.0 - lr * cfg.weight_decay;
    for (_, p) in params.iter_mut() {
        for i in 0..p.value.len() {
            let g = p.grad[i];
            p.m[i] = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * g;
            p.v[i] = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = p.m[i] / bc1;
            let v_hat = p.v[i] / bc2;
            p.value[i] = p.value[i] * decay - lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints() {
        let cfg = OptimizerConfig::default();
        assert_eq!(cfg.cosine_lr(0), 1e-3);
        assert!(cfg.cosine_lr(cfg.total_epochs).abs() < 1e-18);
        assert!((cfg.cosine_lr(50) - 5e-4).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_pure_decay() {
        let cfg = OptimizerConfig::default();
        let mut ps = ParamStore::new();
        let id = ps.insert("w", &[3], vec![1.0, -2.0, 0.5]);
        let before = ps.value(id).to_vec();
        adamw_step(&mut ps, &cfg, cfg.learning_rate, 1);
        let k = 1.0 - cfg.learning_rate * cfg.weight_decay;
        for (a, b) in ps.value(id).iter().zip(&before) {
            assert_eq!(*a, b * k);
        }
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = OptimizerConfig {
            beta1: 1.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
