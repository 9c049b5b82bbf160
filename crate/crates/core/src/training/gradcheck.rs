//! Finite-difference check of the full model on one tiny synthetic example.

use serde::{Deserialize, Serialize};

use super::objective::{batch_loss, batch_loss_and_grads, DecayMode, Objective};
use crate::data::{synth_generate, Limits, SynthSpec, SynthTask};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Ocn};
use crate::numerics::{finite_difference_check, OpKind, ParamCheck};
use crate::parallel::Parallelism;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCheckConfig {
    pub hidden: usize,
    pub options: usize,
    pub vocab_size: usize,
    pub limits: Limits,
    pub init_scale: f64,
    pub ablate_comparison: bool,
    pub decay_mode: DecayMode,
    /// `λ` when `decay_mode` is `loss_penalty`.
    pub weight_decay: f64,
    pub eps: f64,
    pub tolerance: f64,
    pub seed: u64,
    /// Corrupts one backward rule; used to show the harness catches it.
    pub corrupt_rule: Option<OpKind>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            hidden: 4,
            options: 4,
            vocab_size: 20,
            limits: Limits {
                article: 12,
                question: 4,
                option: 3,
            },
            init_scale: 0.6,
            ablate_comparison: false,
            decay_mode: DecayMode::Decoupled,
            weight_decay: 0.01,
            eps: 1e-5,
            tolerance: 1e-4,
            seed: 1,
            corrupt_rule: None,
        }
    }
}

impl GradCheckConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.hidden > 8 {
            return Err(Error::config("hidden", "gradient checks need 1 ≤ d ≤ 8"));
        }
        if self.limits.max_packed_len() > 24 {
            return Err(Error::config(
                "limits",
                format!("packed length {} exceeds 24", self.limits.max_packed_len()),
            ));
        }
        if !(self.eps > 0.0 && self.tolerance > 0.0) {
            return Err(Error::config("eps", "eps and tolerance must be positive"));
        }
        Ok(())
    }

    fn model_config(&self) -> ModelConfig {
        let mut c = ModelConfig::new(self.hidden, self.options, self.vocab_size, self.limits);
        c.init_scale = self.init_scale;
        c.ablate_comparison = self.ablate_comparison;
        c.seed = self.seed;
        c
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub groups: Vec<ParamCheck>,
    /// Parameters that cannot affect the loss under this config.
    pub skipped: Vec<String>,
    pub tolerance: f64,
    pub max_relative_error: f64,
    pub failed: Vec<String>,
    pub passed: bool,
}

pub fn grad_check_model(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    cfg.validate()?;
    let model_cfg = cfg.model_config();
    let (ocn, params) = Ocn::init(model_cfg)?;

    let mut spec = SynthSpec::new(SynthTask::LexicalOverlap, cfg.seed, 1);
    spec.vocab_size = cfg.vocab_size;
    spec.options = cfg.options;
    spec.article_len = cfg.limits.article;
    spec.question_len = cfg.limits.question;
    spec.option_len = cfg.limits.option;
    let examples = synth_generate(&spec)?;
    let batch: Vec<_> = examples.iter().collect();

    let mut objective = Objective::new(cfg.decay_mode, cfg.weight_decay, Parallelism::Sequential);
    objective.faulty_rule = cfg.corrupt_rule;
    let (_, analytic) = batch_loss_and_grads(&ocn, &params, &batch, &objective)?;
    let clean = Objective {
        faulty_rule: None,
        ..objective
    };
    let live = ocn.live_params(&params);
    let report = finite_difference_check(
        |p| batch_loss(&ocn, p, &batch, &clean),
        &params,
        &analytic,
        cfg.eps,
        &live,
    )?;
    let skipped = params
        .ids()
        .filter(|id| !live.contains(id))
        .map(|id| params.name(id).to_string())
        .collect();
    let failed: Vec<String> = report
        .failures(cfg.tolerance)
        .into_iter()
        .map(|c| c.name.clone())
        .collect();
    Ok(GradCheckReport {
        max_relative_error: report.max_relative_error(),
        passed: failed.is_empty(),
        groups: report.params,
        skipped,
        tolerance: cfg.tolerance,
        failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_passes() {
        let r = grad_check_model(&GradCheckConfig::default()).unwrap();
        assert!(r.passed, "{:?}", r.failed);
        assert_eq!(r.groups.len(), 17);
        assert!(r.skipped.is_empty());
    }

    #[test]
    fn ablated_skips_comparison_params() {
        let cfg = GradCheckConfig {
            ablate_comparison: true,
            ..GradCheckConfig::default()
        };
        let r = grad_check_model(&cfg).unwrap();
        assert!(r.passed, "{:?}", r.failed);
        assert_eq!(r.groups.len(), 11);
        assert_eq!(r.skipped.len(), 6);
    }

    #[test]
    fn loss_penalty_mode_passes() {
        let cfg = GradCheckConfig {
            decay_mode: DecayMode::LossPenalty,
            weight_decay: 0.05,
            ..GradCheckConfig::default()
        };
        assert!(grad_check_model(&cfg).unwrap().passed);
    }

    #[test]
    fn corrupted_rule_is_flagged() {
        let cfg = GradCheckConfig {
            corrupt_rule: Some(OpKind::Tanh),
            ..GradCheckConfig::default()
        };
        let r = grad_check_model(&cfg).unwrap();
        assert!(!r.passed);
    }

    #[test]
    fn oversized_config_rejected() {
        let cfg = GradCheckConfig {
            hidden: 16,
            ..GradCheckConfig::default()
        };
        assert!(grad_check_model(&cfg).is_err());
    }
}
