use serde::{Deserialize, Serialize};

use super::{TrainConfig, TrainError};
use crate::tensor::{Float, ParamStore, Tensor};

/// AdamW coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl From<&TrainConfig> for AdamWParams {
    fn from(c: &TrainConfig) -> Self {
        Self {
            beta1: c.beta1,
            beta2: c.beta2,
            eps: c.eps,
            weight_decay: c.weight_decay,
        }
    }
}

/// One AdamW update of `p` in place. `t` is the 1-based step count used for
/// bias correction. Weight decay `p ← p − lr·wd·p` is applied first and
/// separately from the adaptive step.
pub fn adamw_step<T: Float>(
    p: &mut [T],
    g: &[T],
    m: &mut [T],
    v: &mut [T],
    t: u64,
    lr: f64,
    hp: &AdamWParams,
) {
    let (b1, b2) = (T::of(hp.beta1), T::of(hp.beta2));
    let c1 = T::of(1.0 - hp.beta1.powi(t as i32));
    let c2 = T::of(1.0 - hp.beta2.powi(t as i32));
    let (lr_t, decay, eps) = (T::of(lr), T::of(lr * hp.weight_decay), T::of(hp.eps));
    let one = T::one();
    for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
        *p -= decay * *p;
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr_t * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Optimizer state: step count and per-parameter moments.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW<T> {
    pub params: AdamWParams,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Float> AdamW<T> {
    pub fn new(store: &ParamStore<T>, params: AdamWParams) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|p| Tensor::zeros(p.value.shape().to_vec()))
                .collect()
        };
        Self {
            params,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Updates every parameter from its accumulated gradient.
    pub fn update(&mut self, store: &mut ParamStore<T>, lr: f64) {
        self.step += 1;
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            adamw_step(
                p.value.data_mut(),
                p.grad.data(),
                m.data_mut(),
                v.data_mut(),
                self.step,
                lr,
                &self.params,
            );
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheduler {
    /// Linear warmup to the peak, then linear decay to zero.
    #[default]
    Linear,
}

/// Learning rate at `step` of `total`: `W = ⌊ratio·total⌋` warmup steps
/// rising linearly to the peak, then linear decay reaching 0 at `total`.
pub fn lr_at(step: usize, total: usize, cfg: &TrainConfig) -> Result<f64, TrainError> {
    if total == 0 {
        return Err(TrainError::Config("schedule needs at least one step".into()));
    }
    if step > total {
        return Err(TrainError::Config(format!("step {step} beyond total {total}")));
    }
    let peak = cfg.learning_rate;
    let warmup = (cfg.warmup_ratio * total as f64).floor() as usize;
    Ok(match cfg.scheduler {
        Scheduler::Linear if step < warmup => peak * step as f64 / warmup as f64,
        Scheduler::Linear => peak * (total - step) as f64 / (total - warmup) as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hp(wd: f64) -> AdamWParams {
        AdamWParams {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: wd,
        }
    }

    #[test]
    fn scalar_step() {
        let (mut p, mut m, mut v) = ([1.0f64], [0.0], [0.0]);
        adamw_step(&mut p, &[1.0], &mut m, &mut v, 1, 0.1, &hp(0.01));
        // decay 0.001, adaptive step 0.1·1/(1+1e-8)
        let expect = 1.0 - 0.001 - 0.1 / (1.0 + 1e-8);
        assert!((p[0] - expect).abs() < 1e-15);
        assert!((p[0] - 0.899).abs() < 1e-6);
    }

    #[test]
    fn zero_grad_zero_decay_is_noop() {
        let (mut p, mut m, mut v) = ([0.3f64, -2.0], [0.0; 2], [0.0; 2]);
        for t in 1..5 {
            adamw_step(&mut p, &[0.0, 0.0], &mut m, &mut v, t, 0.1, &hp(0.0));
        }
        assert_eq!(p, [0.3, -2.0]);
    }

    #[test]
    fn identical_inputs_evolve_identically() {
        let (mut p, mut m, mut v) = ([0.5f64, 0.5], [0.0; 2], [0.0; 2]);
        for t in 1..20 {
            let g = (t as f64).sin();
            adamw_step(&mut p, &[g, g], &mut m, &mut v, t, 0.01, &hp(0.01));
        }
        assert_eq!(p[0], p[1]);
    }

    /// Textbook Adam on one scalar.
    fn adam_reference(p0: f64, grads: &[f64], lr: f64) -> f64 {
        let (mut p, mut m, mut v) = (p0, 0.0, 0.0);
        for (i, &g) in grads.iter().enumerate() {
            let t = (i + 1) as i32;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            p -= lr * mh / (vh.sqrt() + 1e-8);
        }
        p
    }

    #[test]
    fn no_decay_equals_adam() {
        let grads: Vec<f64> = (0..100).map(|i| ((i * 7) as f64).cos() * 0.3 + 0.05).collect();
        let (mut p, mut m, mut v) = ([0.7f64], [0.0], [0.0]);
        for (i, g) in grads.iter().enumerate() {
            adamw_step(&mut p, &[*g], &mut m, &mut v, i as u64 + 1, 1e-3, &hp(0.0));
        }
        assert!((p[0] - adam_reference(0.7, &grads, 1e-3)).abs() <= 1e-12);
    }

    #[test]
    fn schedule_examples() {
        let cfg = TrainConfig::default();
        let at = |s| lr_at(s, 100, &cfg).unwrap();
        assert!((at(5) - 2.5e-5).abs() < 1e-18);
        assert!((at(10) - 5e-5).abs() < 1e-18);
        assert!((at(55) - 2.5e-5).abs() < 1e-18);
        assert_eq!(at(0), 0.0);
        assert_eq!(at(100), 0.0);
        assert!(lr_at(0, 0, &cfg).is_err());
    }

    proptest! {
        #[test]
        fn schedule_is_continuous(total in 1usize..400) {
            let cfg = TrainConfig::default();
            let peak = cfg.learning_rate;
            let w = (0.1 * total as f64).floor() as usize;
            let slope = peak / w.max(1).min(total - w).max(1) as f64;
            let mut prev = lr_at(0, total, &cfg).unwrap();
            for s in 1..=total {
                let lr = lr_at(s, total, &cfg).unwrap();
                prop_assert!((0.0..=peak * (1.0 + 1e-12)).contains(&lr));
                prop_assert!((lr - prev).abs() <= slope * (1.0 + 1e-9));
                prev = lr;
            }
            prop_assert_eq!(lr_at(total, total, &cfg).unwrap(), 0.0);
            if w > 0 {
                prop_assert!((lr_at(w, total, &cfg).unwrap() - peak).abs() < 1e-18);
            }
        }
    }
}
