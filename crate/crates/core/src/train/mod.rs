//! Fine-tuning: cross-entropy objective, AdamW, the warmup/decay schedule,
//! gradient accumulation with early stopping, and a synthetic sign dataset.

mod optim;
mod runner;
pub mod synth;

pub use optim::{adamw_step, lr_at, AdamW, AdamWParams, Scheduler};
pub use runner::{
    evaluate, loss_curve_csv, parse_loss_curve, train_loop, EpochRecord, Evaluation,
    LabeledClip, TrainOutcome, TrainState, Trainer,
};
pub use synth::{synth_dataset, SynthConfig, SynthDataset};

use serde::{Deserialize, Serialize};

use crate::models::ModelError;
use crate::sampling::SamplingError;
use crate::tensor::{Float, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch} (clips {clips:?})")]
    NonFinite {
        epoch: usize,
        batch: usize,
        clips: Vec<String>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub eval_batch_size: usize,
    pub accumulation_steps: usize,
    /// Peak learning rate.
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_ratio: f64,
    pub scheduler: Scheduler,
    pub epochs: usize,
    /// Epochs without validation-loss improvement tolerated before stopping;
    /// `None` disables early stopping.
    pub patience: Option<usize>,
    pub min_delta: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 2,
            eval_batch_size: 2,
            accumulation_steps: 4,
            learning_rate: 5e-5,
            weight_decay: 0.01,
            warmup_ratio: 0.1,
            scheduler: Scheduler::Linear,
            epochs: 20,
            patience: Some(5),
            min_delta: 0.0,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn effective_batch(&self) -> usize {
        self.batch_size * self.accumulation_steps
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let err = |field: &str, why: &str| Err(TrainError::Config(format!("{field}: {why}")));
        if self.batch_size == 0 {
            return err("batch_size", "must be positive");
        }
        if self.eval_batch_size == 0 {
            return err("eval_batch_size", "must be positive");
        }
        if self.accumulation_steps == 0 {
            return err("accumulation_steps", "must be positive");
        }
        if self.epochs == 0 {
            return err("epochs", "must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return err("learning_rate", "must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return err("weight_decay", "must be non-negative");
        }
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return err("warmup_ratio", "must lie in [0,1)");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return err("beta1/beta2", "must lie in [0,1)");
        }
        if !(self.eps > 0.0) || !(self.min_delta >= 0.0) {
            return err("eps/min_delta", "eps must be positive and min_delta non-negative");
        }
        Ok(())
    }
}

/// `−log softmax(logits)[target]` and its gradient `softmax − onehot`.
pub fn cross_entropy<T: Float>(logits: &[T], target: usize) -> Result<(T, Vec<T>), TrainError> {
    if target >= logits.len() {
        return Err(TrainError::Config(format!(
            "target class {target} out of range for {} logits",
            logits.len()
        )));
    }
    let top = (0..logits.len()).fold(0, |b, i| if logits[i] > logits[b] { i } else { b });
    let max = logits[top];
    // log-sum-exp as max + ln(1 + rest) so tiny losses keep their precision
    let rest: T = (0..logits.len())
        .filter(|&i| i != top)
        .map(|i| (logits[i] - max).exp())
        .sum();
    let sum = T::one() + rest;
    let loss = (max - logits[target]) + rest.ln_1p();
    let mut grad: Vec<T> = logits.iter().map(|&z| (z - max).exp() / sum).collect();
    grad[target] -= T::one();
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Tape, Tensor};

    #[test]
    fn cross_entropy_examples() {
        let (l, g) = cross_entropy(&[0.3f64; 4], 2).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
        assert!(g.iter().sum::<f64>().abs() < 1e-15);
        let (l, _) = cross_entropy(&[10.0f64, -10.0], 0).unwrap();
        // log(1 + e^-20)
        assert!((l - (-20f64).exp().ln_1p()).abs() < 1e-20);
        assert!((l - 2.06e-9).abs() < 1e-11);
        assert!(cross_entropy(&[1.0f64, 2.0], 2).is_err());
    }

    #[test]
    fn matches_tape_op() {
        let logits = [0.5f64, -1.25, 2.0, 0.1];
        let (l, g) = cross_entropy(&logits, 1).unwrap();
        let mut tape = Tape::new();
        let z = tape.input(Tensor::new(vec![1, 4], logits.to_vec()).unwrap());
        let loss = tape.cross_entropy(z, 1).unwrap();
        assert!((tape.value(loss).data()[0] - l).abs() < 1e-14);
        let tg = tape.backward(loss).wrt(z).unwrap().clone();
        for (a, b) in tg.data().iter().zip(&g) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn config_validation() {
        TrainConfig::default().validate().unwrap();
        assert_eq!(TrainConfig::default().effective_batch(), 8);
        let bad = TrainConfig { warmup_ratio: 1.0, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
    }
}
