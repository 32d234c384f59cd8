//! Adam with bias correction, global-norm gradient clipping, and linear
//! warmup into a constant learning rate.

use super::{ArrMut, ArrRef, ModelParams};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub clip_norm: f64,
}

impl Adam {
    pub fn new(params: &ModelParams) -> Self {
        let n = params.param_count();
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0, clip_norm: 1.0 }
    }

    /// One update with the given learning rate. `grads` is consumed as-is;
    /// clip it first with [`clip_global_norm`] if desired.
    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        let mut idx = 0usize;
        let garrays = grads.arrays();
        for (dst, src) in params.arrays_mut().into_iter().zip(garrays) {
            let apply = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *p -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
            };
            match (dst, src) {
                (ArrMut::A1(d), ArrRef::A1(s)) => {
                    for (p, &g) in d.iter_mut().zip(s.iter()) {
                        apply(p, g, &mut self.m[idx], &mut self.v[idx]);
                        idx += 1;
                    }
                }
                (ArrMut::A2(d), ArrRef::A2(s)) => {
                    for (p, &g) in d.iter_mut().zip(s.iter()) {
                        apply(p, g, &mut self.m[idx], &mut self.v[idx]);
                        idx += 1;
                    }
                }
                _ => unreachable!("tensor order mismatch"),
            }
        }
    }
}

/// Scale `grads` down when its global L2 norm exceeds `max_norm`.
pub fn clip_global_norm(grads: &mut ModelParams, max_norm: f64) {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
}

/// Linear warmup over the first `warmup_steps` updates, then constant.
pub fn warmup_lr(base_lr: f64, step: u64, warmup_steps: u64) -> f64 {
    if warmup_steps == 0 {
        return base_lr;
    }
    base_lr * (((step + 1) as f64) / warmup_steps as f64).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tiny_config;

    #[test]
    fn adam_reduces_a_quadratic() {
        // Minimize Σ p² over real parameters; gradient is 2p.
        let mut p = ModelParams::init(tiny_config(), 8);
        let mut opt = Adam::new(&p);
        let objective = |p: &ModelParams| {
            p.arrays()
                .iter()
                .map(|a| match a {
                    ArrRef::A1(x) => x.iter().map(|v| v * v).sum::<f64>(),
                    ArrRef::A2(x) => x.iter().map(|v| v * v).sum::<f64>(),
                })
                .sum::<f64>()
        };
        let before = objective(&p);
        for _ in 0..200 {
            let mut g = p.clone();
            g.scale(2.0);
            opt.step(&mut p, &g, 0.01);
        }
        let after = objective(&p);
        assert!(after < before * 0.2, "{before} -> {after}");
    }

    #[test]
    fn clipping_caps_the_norm() {
        let mut g = ModelParams::init(tiny_config(), 3);
        g.scale(100.0);
        assert!(g.global_norm() > 1.0);
        clip_global_norm(&mut g, 1.0);
        assert!((g.global_norm() - 1.0).abs() < 1e-9);
        let mut small = ModelParams::zeros(tiny_config());
        small.tok_emb[[0, 0]] = 0.5;
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small.tok_emb[[0, 0]], 0.5);
    }

    #[test]
    fn warmup_is_linear_then_flat() {
        assert!((warmup_lr(1.0, 0, 10) - 0.1).abs() < 1e-12);
        assert!((warmup_lr(1.0, 4, 10) - 0.5).abs() < 1e-12);
        assert!((warmup_lr(1.0, 9, 10) - 1.0).abs() < 1e-12);
        assert!((warmup_lr(1.0, 50, 10) - 1.0).abs() < 1e-12);
        assert!((warmup_lr(1.0, 0, 0) - 1.0).abs() < 1e-12);
    }
}
