//! Bias-corrected Adam over [`ModelParameters`].

use serde::{Deserialize, Serialize};

use crate::model::{ModelParameters, ParameterGradients};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    m: ModelParameters,
    v: ModelParameters,
    t: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig, like: &ModelParameters) -> Self {
        Self {
            cfg,
            m: ModelParameters::zeros(like.hp),
            v: ModelParameters::zeros(like.hp),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update: `θ -= lr · m̂ / (sqrt(v̂) + eps)`.
    pub fn step(&mut self, params: &mut ModelParameters, grads: &ParameterGradients) {
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut());
        for (((p, g), m), v) in tensors {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, Hyperparams};

    fn hp() -> Hyperparams {
        Hyperparams {
            input_dim: 3,
            hidden_dim: 4,
            layers: 1,
            attn_dim: 2,
            head_dim: 3,
        }
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = init_params(hp(), 1);
        let before = p.clone();
        let mut adam = Adam::new(AdamConfig::default(), &p);
        let zero = ModelParameters::zeros(p.hp);
        for _ in 0..5 {
            adam.step(&mut p, &zero);
        }
        assert_eq!(p, before);
        assert_eq!(adam.steps(), 5);
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        // With bias correction, step one is lr * g / (|g| + eps) ≈ lr * sign(g).
        let mut p = ModelParameters::zeros(hp());
        let mut g = ModelParameters::zeros(hp());
        g.head_b2[0] = 0.5;
        g.head_b2[1] = -2.0;
        let mut adam = Adam::new(AdamConfig::default(), &p);
        adam.step(&mut p, &g);
        assert!((p.head_b2[0] + 1e-3).abs() < 1e-10);
        assert!((p.head_b2[1] - 1e-3).abs() < 1e-10);
        assert_eq!(p.head_b2[2], 0.0);
    }

    #[test]
    fn reference_two_steps() {
        // Scalar trace worked by hand: g1 = 1, g2 = -1, lr = 0.1.
        let cfg = AdamConfig { lr: 0.1, ..AdamConfig::default() };
        let mut p = ModelParameters::zeros(hp());
        let mut adam = Adam::new(cfg, &p);
        let mut g = ModelParameters::zeros(hp());
        g.attn_u[0] = 1.0;
        adam.step(&mut p, &g);
        g.attn_u[0] = -1.0;
        adam.step(&mut p, &g);
        // m2 = 0.9*0.1 - 0.1 = -0.01, m̂ = -0.01/0.19
        // v2 = 0.999*0.001 + 0.001 = 0.001999, v̂ = 0.001999/0.001999 = 1
        let step1 = -0.1 * 1.0 / (1.0 + 1e-8);
        let step2 = -0.1 * (-0.01 / 0.19) / (1.0 + 1e-8);
        assert!((p.attn_u[0] - (step1 + step2)).abs() < 1e-12);
    }

    #[test]
    fn zero_lr_keeps_parameters() {
        let cfg = AdamConfig { lr: 0.0, ..AdamConfig::default() };
        let mut p = init_params(hp(), 2);
        let before = p.clone();
        let mut g = init_params(hp(), 3);
        g.head_b1[0] = 1.0;
        let mut adam = Adam::new(cfg, &p);
        adam.step(&mut p, &g);
        assert_eq!(p, before);
    }
}
