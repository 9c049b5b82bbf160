//! Run configuration files and dataset preparation.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    load_race_dir, load_race_file, synth_generate, Example, Limits, RawExample, SynthSpec,
    SynthTask, Vocabulary,
};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::parallel::Parallelism;
use crate::training::{DecayMode, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub hidden: usize,
    pub options: usize,
    pub init_scale: f64,
    pub fan_in_init: bool,
    pub ablate_comparison: bool,
    pub decay_mode: DecayMode,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            hidden: 16,
            options: 4,
            init_scale: 0.02,
            fan_in_init: false,
            ablate_comparison: false,
            decay_mode: DecayMode::Decoupled,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub task: SynthTask,
    /// Falls back to `train.seed`.
    #[serde(default)]
    pub seed: Option<u64>,
    pub train_count: usize,
    pub dev_count: usize,
    #[serde(default = "default_synth_vocab")]
    pub vocab_size: usize,
    #[serde(default)]
    pub article_len: Option<usize>,
    #[serde(default)]
    pub question_len: Option<usize>,
    #[serde(default)]
    pub option_len: Option<usize>,
}

fn default_synth_vocab() -> usize {
    50
}

impl SynthSection {
    /// Generator spec for `count` examples from stream `seed`.
    pub fn spec(&self, seed: u64, count: usize, options: usize) -> SynthSpec {
        let mut s = SynthSpec::new(self.task, seed, count);
        s.vocab_size = self.vocab_size;
        s.options = options;
        if let Some(v) = self.article_len {
            s.article_len = v;
        }
        if let Some(v) = self.question_len {
            s.question_len = v;
        }
        if let Some(v) = self.option_len {
            s.option_len = v;
        }
        s
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub synth: Option<SynthSection>,
    pub limits: Limits,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub clip_norm: Option<f64>,
    pub parallelism: Parallelism,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            peak_lr: t.peak_lr,
            weight_decay: t.weight_decay,
            seed: t.seed,
            clip_norm: t.clip_norm,
            parallelism: t.parallelism,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

/// Datasets and configs ready for training.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub vocab: Vocabulary,
    pub train_set: Vec<Example>,
    pub dev_set: Option<Vec<Example>>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config(field_of(&e), e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            peak_lr: t.peak_lr,
            weight_decay: t.weight_decay,
            decay_mode: self.model.decay_mode,
            seed: t.seed,
            clip_norm: t.clip_norm,
            parallelism: t.parallelism,
        }
    }

    /// Checks every field that can be checked without touching data.
    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if m.hidden == 0 {
            return Err(Error::config("model.hidden", "must be positive"));
        }
        if m.options < 2 {
            return Err(Error::config("model.options", "must be at least 2"));
        }
        if !(m.init_scale.is_finite() && m.init_scale > 0.0) {
            return Err(Error::config(
                "model.init_scale",
                "must be positive and finite",
            ));
        }
        self.data.limits.validate()?;
        match (&self.data.synth, &self.data.train) {
            (Some(_), Some(_)) => {
                return Err(Error::config(
                    "data.synth",
                    "give either data.train or data.synth, not both",
                ));
            }
            (None, None) => return Err(Error::config("data.train", "missing training data path")),
            (Some(s), None) => {
                if self.data.dev.is_some() {
                    return Err(Error::config(
                        "data.dev",
                        "synthetic runs generate their own dev split",
                    ));
                }
                if s.train_count == 0 {
                    return Err(Error::config("data.synth.train_count", "must be positive"));
                }
                s.spec(0, 1, m.options)
                    .validate()
                    .map_err(|e| prefix_field("data.synth.", e))?;
            }
            (None, Some(_)) => {}
        }
        self.train_config().validate()
    }

    /// Validates, then loads or generates the datasets.
    pub fn prepare(&self) -> Result<Prepared> {
        self.validate()?;
        let k = self.model.options;
        let (vocab, train_set, dev_set) = match &self.data.synth {
            Some(s) => {
                let seed = s.seed.unwrap_or(self.train.seed);
                let train = synth_generate(&s.spec(seed, s.train_count, k))?;
                let dev = if s.dev_count > 0 {
                    Some(synth_generate(&s.spec(dev_stream(seed), s.dev_count, k))?)
                } else {
                    None
                };
                (Vocabulary::synthetic(s.vocab_size), train, dev)
            }
            None => {
                let train_path = self.data.train.as_ref().expect("validated");
                let raw_train = load_raw(train_path, k)?;
                let raw_dev = match &self.data.dev {
                    Some(p) => Some(load_raw(p, k)?),
                    None => None,
                };
                let vocab = Vocabulary::build(raw_train.iter().flat_map(|r| {
                    std::iter::once(r.article.as_str())
                        .chain(std::iter::once(r.question.as_str()))
                        .chain(r.options.iter().map(String::as_str))
                }));
                let encode =
                    |raw: &[RawExample]| raw.iter().map(|r| r.encode(&vocab)).collect::<Vec<_>>();
                let train = encode(&raw_train);
                let dev = raw_dev.as_deref().map(encode);
                (vocab, train, dev)
            }
        };
        if train_set.is_empty() {
            return Err(Error::config("data.train", "no usable examples"));
        }
        let mut model = ModelConfig::new(self.model.hidden, k, vocab.len(), self.data.limits);
        model.init_scale = self.model.init_scale;
        model.fan_in_init = self.model.fan_in_init;
        model.ablate_comparison = self.model.ablate_comparison;
        model.seed = self.train.seed;
        model.validate()?;
        Ok(Prepared {
            model,
            train: self.train_config(),
            vocab,
            train_set,
            dev_set,
        })
    }
}

/// Seed of the synthetic dev split, kept apart from the training stream.
pub fn dev_stream(seed: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(1)
}

/// Loads a RACE file or directory. A single file must parse; a directory
/// skips malformed files but must yield at least one example.
pub fn load_raw(path: &Path, options: usize) -> Result<Vec<RawExample>> {
    if path.is_file() {
        return load_race_file(path, options);
    }
    let load = load_race_dir(path, options)?;
    if load.examples.is_empty() {
        return Err(Error::data(path, "no examples found"));
    }
    Ok(load.examples)
}

fn prefix_field(prefix: &str, e: Error) -> Error {
    match e {
        Error::Config { field, message } => Error::Config {
            field: format!("{prefix}{field}"),
            message,
        },
        other => other,
    }
}

/// Best-effort field name from a serde error message.
fn field_of(e: &serde_json::Error) -> String {
    let msg = e.to_string();
    for marker in ["unknown field `", "missing field `"] {
        if let Some(start) = msg.find(marker) {
            let rest = &msg[start + marker.len()..];
            if let Some(end) = rest.find('`') {
                return rest[..end].to_string();
            }
        }
    }
    "config".to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    const SYNTH: &str = r#"{
        "model": {"hidden": 4},
        "data": {"synth": {"task": "lexical_overlap", "train_count": 10, "dev_count": 5, "vocab_size": 20},
                 "limits": {"article": 20, "question": 4, "option": 3}},
        "train": {"epochs": 1, "batch_size": 4, "peak_lr": 0.001, "seed": 2},
        "output": "x"
    }"#;

    #[test]
    fn parses_and_prepares_synth() {
        let c = RunConfig::from_json(SYNTH).unwrap();
        let p = c.prepare().unwrap();
        assert_eq!(p.train_set.len(), 10);
        assert_eq!(p.dev_set.unwrap().len(), 5);
        assert_eq!(p.vocab.len(), 20);
        assert_eq!(p.model.seed, 2);
    }

    #[test]
    fn unknown_key_names_field() {
        let err = RunConfig::from_json(r#"{"model": {"hiden": 4}}"#).unwrap_err();
        assert!(
            matches!(err, Error::Config { ref field, .. } if field == "hiden"),
            "{err}"
        );
    }

    #[test]
    fn missing_train_path() {
        let err = RunConfig::from_json("{}").unwrap().validate().unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "data.train"));
    }

    #[test]
    fn defaults_match_published_limits() {
        let c = RunConfig::from_json(r#"{"data": {"train": "t"}}"#).unwrap();
        assert_eq!(
            c.data.limits,
            Limits {
                article: 400,
                question: 30,
                option: 16
            }
        );
        assert_eq!(c.train.weight_decay, 0.01);
        assert_eq!(c.train.batch_size, 12);
    }
}
