use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, clip_global_norm, OptimizerState};
use super::evaluate::evaluate;
use super::objective::{batch_loss_and_grads, DecayMode, Objective};
use super::schedule::{lr_at, ScheduleConfig};
use crate::data::Example;
use crate::error::{Error, Result};
use crate::model::Ocn;
use crate::numerics::ParamSet;
use crate::parallel::Parallelism;

const SHUFFLE_SALT: u64 = 0x05ee_d0f5_u64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Examples per optimizer step.
    pub batch_size: usize,
    pub peak_lr: f64,
    pub weight_decay: f64,
    pub decay_mode: DecayMode,
    pub seed: u64,
    /// Global gradient norm limit; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub parallelism: Parallelism,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 3,
            batch_size: 12,
            peak_lr: 3e-5,
            weight_decay: 0.01,
            decay_mode: DecayMode::Decoupled,
            seed: 0,
            clip_norm: Some(1.0),
            parallelism: Parallelism::Rayon,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("train.epochs", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be positive"));
        }
        if !(self.peak_lr.is_finite() && self.peak_lr > 0.0) {
            return Err(Error::config(
                "train.peak_lr",
                "must be positive and finite",
            ));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::config("train.weight_decay", "must be non-negative"));
        }
        if let Some(c) = self.clip_norm {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::config("train.clip_norm", "must be positive"));
            }
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, examples: usize) -> usize {
        examples.div_ceil(self.batch_size)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dev_acc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    /// Training example count.
    pub examples: usize,
    pub gold: Vec<usize>,
    pub log: Vec<StepLog>,
}

impl TrainRecord {
    /// One JSON object per line.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for entry in &self.log {
            out.push_str(&serde_json::to_string(entry)?);
            out.push('\n');
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BestSnapshot {
    pub step: usize,
    pub dev_accuracy: f64,
    pub params: ParamSet,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ParamSet,
    pub steps: usize,
    pub best: Option<BestSnapshot>,
    pub record: TrainRecord,
}

/// Trains a copy of `init` and returns the final and best-dev parameters.
/// `on_step` sees each epoch's log entries once the epoch is evaluated.
pub fn train(
    ocn: &Ocn,
    init: &ParamSet,
    train_set: &[Example],
    dev_set: Option<&[Example]>,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&StepLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::config("data.train", "training set is empty"));
    }
    let k = ocn.config.options;
    for ex in train_set.iter().chain(dev_set.into_iter().flatten()) {
        if ex.num_options() != k {
            return Err(Error::config(
                "model.options",
                format!("model expects {k} options, data has {}", ex.num_options()),
            ));
        }
    }
    let per_epoch = cfg.steps_per_epoch(train_set.len());
    let schedule = ScheduleConfig::new(cfg.peak_lr, cfg.epochs * per_epoch)?;
    let objective = Objective::new(cfg.decay_mode, cfg.weight_decay, cfg.parallelism);
    let decay = match cfg.decay_mode {
        DecayMode::Decoupled => cfg.weight_decay,
        DecayMode::LossPenalty => 0.0,
    };

    let mut params = init.clone();
    let mut state = OptimizerState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_SALT);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::with_capacity(schedule.total_steps);
    let mut best: Option<BestSnapshot> = None;
    let mut step = 0;

    for epoch in 0..cfg.epochs {
        let epoch_start = log.len();
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            step += 1;
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (loss, mut grads) = batch_loss_and_grads(ocn, &params, &batch, &objective)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { step });
            }
            if let Some(c) = cfg.clip_norm {
                clip_global_norm(&mut grads, c);
            }
            let lr = lr_at(step, &schedule)?;
            adam_step(&mut params, &grads, &mut state, lr, decay)?;
            log.push(StepLog {
                step,
                lr,
                loss,
                dev_acc: None,
            });
        }
        if let Some(dev) = dev_set {
            let acc = evaluate(ocn, &params, dev, cfg.parallelism)?.accuracy;
            log::info!("epoch {} step {step} dev_acc {acc:.4}", epoch + 1);
            if best.as_ref().is_none_or(|b| acc > b.dev_accuracy) {
                best = Some(BestSnapshot {
                    step,
                    dev_accuracy: acc,
                    params: params.clone(),
                });
            }
            if let Some(last) = log.last_mut() {
                last.dev_acc = Some(acc);
            }
        }
        for entry in &log[epoch_start..] {
            on_step(entry);
        }
    }

    Ok(TrainOutcome {
        params,
        steps: step,
        best,
        record: TrainRecord {
            examples: train_set.len(),
            gold: train_set.iter().map(|e| e.answer).collect(),
            log,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, Limits, SynthSpec, SynthTask};
    use crate::model::ModelConfig;

    fn setup(count: usize) -> (Ocn, ParamSet, Vec<Example>) {
        let mut spec = SynthSpec::new(SynthTask::LexicalOverlap, 3, count);
        spec.vocab_size = 20;
        spec.article_len = 8;
        let data = synth_generate(&spec).unwrap();
        let limits = Limits {
            article: 8,
            question: 4,
            option: 3,
        };
        let (ocn, params) = Ocn::init(ModelConfig::new(4, 4, 20, limits)).unwrap();
        (ocn, params, data)
    }

    #[test]
    fn step_count() {
        let (ocn, params, data) = setup(4);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 2,
            peak_lr: 1e-3,
            ..TrainConfig::default()
        };
        let mut seen = 0;
        let out = train(&ocn, &params, &data, None, &cfg, |_| seen += 1).unwrap();
        assert_eq!(out.record.log.len(), 4);
        assert_eq!(seen, 4);
        assert_eq!(out.steps, 4);
        assert_eq!(out.record.examples, 4);
        assert_eq!(out.record.log.last().unwrap().lr, 0.0);
    }

    #[test]
    fn deterministic_logs() {
        let (ocn, params, data) = setup(6);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            peak_lr: 1e-2,
            ..TrainConfig::default()
        };
        let a = train(&ocn, &params, &data, Some(&data), &cfg, |_| {}).unwrap();
        let b = train(&ocn, &params, &data, Some(&data), &cfg, |_| {}).unwrap();
        assert_eq!(a.record.to_jsonl().unwrap(), b.record.to_jsonl().unwrap());
        assert_eq!(a.params, b.params);
        let seq = TrainConfig {
            parallelism: Parallelism::Sequential,
            ..cfg
        };
        let c = train(&ocn, &params, &data, Some(&data), &seq, |_| {}).unwrap();
        assert_eq!(a.params, c.params);
    }

    #[test]
    fn dev_accuracy_logged_at_epoch_end() {
        let (ocn, params, data) = setup(5);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 2,
            peak_lr: 1e-3,
            ..TrainConfig::default()
        };
        let out = train(&ocn, &params, &data, Some(&data), &cfg, |_| {}).unwrap();
        let with_acc: Vec<usize> = out
            .record
            .log
            .iter()
            .filter(|l| l.dev_acc.is_some())
            .map(|l| l.step)
            .collect();
        assert_eq!(with_acc, vec![3, 6]);
        let best = out.best.unwrap();
        let max = out
            .record
            .log
            .iter()
            .filter_map(|l| l.dev_acc)
            .fold(0.0, f64::max);
        assert_eq!(best.dev_accuracy, max);
        let first = out
            .record
            .log
            .iter()
            .find(|l| l.dev_acc == Some(max))
            .unwrap();
        assert_eq!(best.step, first.step);
    }

    #[test]
    fn rejects_empty_and_bad_config() {
        let (ocn, params, data) = setup(2);
        assert!(train(&ocn, &params, &[], None, &TrainConfig::default(), |_| {}).is_err());
        let cfg = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(train(&ocn, &params, &data, None, &cfg, |_| {}).is_err());
    }
}
