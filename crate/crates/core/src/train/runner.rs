use rand::seq::SliceRandom;

use super::{lr_at, AdamW, AdamWParams, TrainConfig, TrainError};
use crate::ingest::ClipTensor;
use crate::models::VideoModel;
use crate::sampling::{build_pipeline, SampleMode, SamplerConfig, TransformSpec};
use crate::seed::{derive_n, rng};
use crate::tensor::{ParamStore, Tape, Tensor};

/// A clip with its class index.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledClip {
    pub id: String,
    pub clip: ClipTensor,
    pub label: usize,
}

/// Optimizer state plus early-stopping bookkeeping.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub optimizer: AdamW<f32>,
    /// Micro-batches accumulated since the last optimizer step.
    pub pending: usize,
    pub best_val_loss: Option<f64>,
    pub epochs_since_improvement: usize,
}

impl TrainState {
    pub fn step_count(&self) -> u64 {
        self.optimizer.step
    }
}

/// Model plus optimizer with gradient accumulation.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: VideoModel<f32>,
    pub state: TrainState,
}

impl Trainer {
    pub fn new(mut model: VideoModel<f32>, cfg: &TrainConfig) -> Self {
        model.params.zero_grad();
        let optimizer = AdamW::new(&model.params, AdamWParams::from(cfg));
        Self {
            model,
            state: TrainState {
                optimizer,
                pending: 0,
                best_val_loss: None,
                epochs_since_improvement: 0,
            },
        }
    }

    /// Adds the mean gradient of one micro-batch to the parameter gradients.
    /// Returns the mean loss and the number of correct argmax predictions.
    pub fn accumulate(&mut self, batch: &[(Tensor<f32>, usize)]) -> Result<(f64, usize), TrainError> {
        let scale = 1.0 / batch.len() as f32;
        let mut total = 0.0;
        let mut correct = 0;
        for (frames, label) in batch {
            let mut tape = Tape::new();
            let logits = self.model.forward(&mut tape, frames)?;
            correct += usize::from(argmax(tape.value(logits).data()) == *label);
            let loss = tape.cross_entropy(logits, *label)?;
            total += tape.value(loss).data()[0] as f64;
            let grads = tape.backward(loss);
            self.model.params.accumulate(&grads, scale);
        }
        self.state.pending += 1;
        Ok((total / batch.len() as f64, correct))
    }

    /// Averages the gradients over the pending micro-batches, applies one
    /// AdamW update and clears the gradients.
    pub fn step(&mut self, lr: f64) {
        if self.state.pending == 0 {
            return;
        }
        let inv = 1.0 / self.state.pending as f32;
        for p in self.model.params.iter_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= inv);
        }
        self.state.optimizer.update(&mut self.model.params, lr);
        self.model.params.zero_grad();
        self.state.pending = 0;
    }
}

/// Index of the largest value; ties go to the lower index.
pub(crate) fn argmax(xs: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Per-clip logits with the mean loss and top-1 accuracy.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub logits: Vec<Vec<f32>>,
    pub truths: Vec<usize>,
    pub loss: f64,
    pub accuracy: f64,
}

fn eval_inputs(
    clips: &[LabeledClip],
    sampler: &SamplerConfig,
    transform: &TransformSpec,
) -> Result<Vec<(Tensor<f32>, usize)>, TrainError> {
    let pipe = build_pipeline(SampleMode::Eval, sampler, transform)?;
    clips
        .iter()
        .map(|c| Ok((pipe.apply(&c.clip, 0)?.frames, c.label)))
        .collect()
}

fn evaluate_inputs(
    model: &VideoModel<f32>,
    inputs: &[(Tensor<f32>, usize)],
    batch_size: usize,
) -> Result<Evaluation, TrainError> {
    let mut logits = Vec::with_capacity(inputs.len());
    let mut truths = Vec::with_capacity(inputs.len());
    let mut loss = 0.0;
    let mut correct = 0;
    for batch in inputs.chunks(batch_size.max(1)) {
        for (frames, label) in batch {
            let z = model.predict(frames)?;
            let (l, _) = super::cross_entropy(&z, *label)?;
            loss += l as f64;
            correct += usize::from(argmax(&z) == *label);
            logits.push(z);
            truths.push(*label);
        }
    }
    let n = inputs.len().max(1) as f64;
    Ok(Evaluation {
        logits,
        truths,
        loss: loss / n,
        accuracy: correct as f64 / n,
    })
}

/// Runs the eval pipeline and the model over `clips`.
pub fn evaluate(
    model: &VideoModel<f32>,
    clips: &[LabeledClip],
    sampler: &SamplerConfig,
    transform: &TransformSpec,
    batch_size: usize,
) -> Result<Evaluation, TrainError> {
    let inputs = eval_inputs(clips, sampler, transform)?;
    evaluate_inputs(model, &inputs, batch_size)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    /// Accuracy on the augmented training batches.
    pub train_acc: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
    /// Learning rate of the epoch's last optimizer step.
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the best epoch by validation accuracy (ties: lower
    /// validation loss); the last epoch when there is no validation set.
    pub best: VideoModel<f32>,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
    pub state: TrainState,
}

fn check_labels(clips: &[LabeledClip], k: usize, what: &str) -> Result<(), TrainError> {
    match clips.iter().find(|c| c.label >= k) {
        Some(c) => Err(TrainError::Config(format!(
            "{what} clip {} has label {} but the head has {k} classes",
            c.id, c.label
        ))),
        None => Ok(()),
    }
}

fn is_better(acc: f64, loss: f64, best: Option<(f64, f64)>) -> bool {
    match best {
        None => true,
        Some((best_acc, best_loss)) => acc > best_acc || (acc == best_acc && loss < best_loss),
    }
}

/// Seeded fine-tuning loop. Batch order, augmentation and the schedule are
/// all derived from `cfg.seed`, so a rerun reproduces every number.
pub fn train_loop(
    model: VideoModel<f32>,
    train: &[LabeledClip],
    val: &[LabeledClip],
    cfg: &TrainConfig,
    sampler: &SamplerConfig,
    transform: &TransformSpec,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::Config("training set is empty".into()));
    }
    let k = model.config.num_classes;
    check_labels(train, k, "training")?;
    check_labels(val, k, "validation")?;
    let train_pipe = build_pipeline(SampleMode::Train, sampler, transform)?;
    let val_inputs = eval_inputs(val, sampler, transform)?;

    let micro_per_epoch = train.len().div_ceil(cfg.batch_size);
    let steps_per_epoch = micro_per_epoch.div_ceil(cfg.accumulation_steps);
    let total_steps = steps_per_epoch * cfg.epochs;

    let mut trainer = Trainer::new(model, cfg);
    let mut best: Option<(f64, f64)> = None;
    let mut best_params: Option<(ParamStore<f32>, usize)> = None;
    let mut history = Vec::new();
    let mut stopped_early = false;
    let mut step = 0;
    let mut lr = 0.0;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng(derive_n(cfg.seed, &["train", "shuffle"], epoch as u64)));
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = chunk
                .iter()
                .map(|&i| {
                    let c = &train[i];
                    let seed = derive_n(cfg.seed, &["train", "augment", &c.id], epoch as u64);
                    Ok((train_pipe.apply(&c.clip, seed)?.frames, c.label))
                })
                .collect::<Result<Vec<_>, TrainError>>()?;
            let (loss, ok) = trainer.accumulate(&batch)?;
            if !loss.is_finite() {
                return Err(TrainError::NonFinite {
                    epoch: epoch + 1,
                    batch: b,
                    clips: chunk.iter().map(|&i| train[i].id.clone()).collect(),
                });
            }
            loss_sum += loss * chunk.len() as f64;
            correct += ok;
            if trainer.state.pending == cfg.accumulation_steps || b + 1 == micro_per_epoch {
                lr = lr_at(step, total_steps, cfg)?;
                trainer.step(lr);
                step += 1;
            }
        }
        let (val_loss, val_acc) = if val_inputs.is_empty() {
            (None, None)
        } else {
            let e = evaluate_inputs(&trainer.model, &val_inputs, cfg.eval_batch_size)?;
            (Some(e.loss), Some(e.accuracy))
        };
        let record = EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / train.len() as f64,
            train_acc: correct as f64 / train.len() as f64,
            val_loss,
            val_acc,
            lr,
        };
        log::info!(
            "epoch {} train_loss {:.4} train_acc {:.3} val_loss {} val_acc {}",
            record.epoch,
            record.train_loss,
            record.train_acc,
            val_loss.map_or("-".into(), |v| format!("{v:.4}")),
            val_acc.map_or("-".into(), |v| format!("{v:.3}")),
        );
        history.push(record);

        match (val_loss, val_acc) {
            (Some(loss), Some(acc)) => {
                if is_better(acc, loss, best) {
                    best = Some((acc, loss));
                    best_params = Some((trainer.model.params.clone(), epoch + 1));
                }
                let improved = trainer
                    .state
                    .best_val_loss
                    .map_or(true, |b| loss < b - cfg.min_delta);
                if improved {
                    trainer.state.best_val_loss = Some(loss);
                    trainer.state.epochs_since_improvement = 0;
                } else {
                    trainer.state.epochs_since_improvement += 1;
                }
                if let Some(p) = cfg.patience {
                    if trainer.state.epochs_since_improvement > p {
                        log::info!("early stop after epoch {}", epoch + 1);
                        stopped_early = true;
                        break;
                    }
                }
            }
            _ => best_params = Some((trainer.model.params.clone(), epoch + 1)),
        }
    }

    let (params, best_epoch) = best_params.expect("at least one epoch ran");
    let mut best_model = trainer.model.clone();
    best_model.params = params;
    best_model.params.zero_grad();
    Ok(TrainOutcome {
        best: best_model,
        best_epoch,
        history,
        stopped_early,
        state: trainer.state,
    })
}

const CURVE_HEADER: &str = "epoch,train_loss,val_loss,val_acc";

/// Loss-curve table, one row per epoch; missing validation values are empty.
pub fn loss_curve_csv(history: &[EpochRecord]) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out = format!("{CURVE_HEADER}\n");
    for r in history {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.epoch,
            r.train_loss,
            opt(r.val_loss),
            opt(r.val_acc)
        ));
    }
    out
}

/// Parses [`loss_curve_csv`] output into `(epoch, train_loss, val_loss, val_acc)` rows.
pub fn parse_loss_curve(text: &str) -> Result<Vec<(usize, f64, Option<f64>, Option<f64>)>, String> {
    let mut lines = text.lines();
    if lines.next() != Some(CURVE_HEADER) {
        return Err(format!("expected header {CURVE_HEADER:?}"));
    }
    let opt = |s: &str| -> Result<Option<f64>, String> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| format!("bad number {s:?}"))
        }
    };
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let [e, t, vl, va] = f[..] else {
                return Err(format!("expected 4 fields in {l:?}"));
            };
            Ok((
                e.parse().map_err(|_| format!("bad epoch {e:?}"))?,
                t.parse().map_err(|_| format!("bad loss {t:?}"))?,
                opt(vl)?,
                opt(va)?,
            ))
        })
        .collect()
}
