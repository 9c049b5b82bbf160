//! The option comparison network: parameters, the per-stage operations,
//! and the full forward pass.

mod config;
mod forward;
mod stack;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::ModelConfig;
pub(crate) use forward::forward_example_on;
pub use forward::{forward_example, ForwardPass, OptionNodes, OptionPipelineState};
pub use stack::{
    coattend_reread, fuse_correlations, gate_fuse, loss_value, option_features, pairwise_compare,
    predict, score_option, self_attend_fuse, Gated, LossValue, Reread, SelfAttended,
};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, ParamId, ParamSet};
use crate::skimmer::{uniform, ToySkimmer};

pub(crate) fn lookup(params: &ParamSet, name: &str, shape: (usize, usize)) -> Result<ParamId> {
    let id = params
        .id_of(name)
        .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
    if params.get(id).shape() != shape {
        return Err(Error::Checkpoint(format!(
            "parameter `{name}` has shape {:?}, expected {shape:?}",
            params.get(id).shape()
        )));
    }
    Ok(id)
}

/// Handles to every head parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HeadParams {
    /// `v_o`, `3d × 1`: option-to-option attention.
    pub compare_att: ParamId,
    /// `v_a`, `d × 1`: question pooling.
    pub question_pool: ParamId,
    /// `v_p`, `3d × 1`: shared by both co-attention directions.
    pub reread_att: ParamId,
    /// `v_r`, `3d × 1`: self-attention.
    pub self_att: ParamId,
    /// `W_c`, `d × (d + 2d(K−1))`
    pub correlation_weight: ParamId,
    pub correlation_bias: ParamId,
    /// `W_g`, `d × 3d`
    pub gate_weight: ParamId,
    pub gate_bias: ParamId,
    /// `W_p`, `d × 3d`
    pub reread_weight: ParamId,
    pub reread_bias: ParamId,
    /// `W_f`, `d × 4d`
    pub fusion_weight: ParamId,
    pub fusion_bias: ParamId,
    /// `v_s`, `d × 1`
    pub score: ParamId,
}

struct HeadLayout {
    name: &'static str,
    rows: usize,
    cols: usize,
    /// Weight-like (initialized uniformly, decayed) vs bias (zero, not decayed).
    kind: Kind,
}

#[derive(Clone, Copy, PartialEq)]
enum Kind {
    Weight,
    AttentionVector,
    Bias,
}

fn head_layout(d: usize, k: usize) -> [HeadLayout; 13] {
    let l = |name, rows, cols, kind| HeadLayout {
        name,
        rows,
        cols,
        kind,
    };
    [
        l("head.compare_att", 3 * d, 1, Kind::AttentionVector),
        l("head.question_pool", d, 1, Kind::AttentionVector),
        l("head.reread_att", 3 * d, 1, Kind::AttentionVector),
        l("head.self_att", 3 * d, 1, Kind::AttentionVector),
        l(
            "head.correlation_weight",
            d,
            d + 2 * d * (k - 1),
            Kind::Weight,
        ),
        l("head.correlation_bias", d, 1, Kind::Bias),
        l("head.gate_weight", d, 3 * d, Kind::Weight),
        l("head.gate_bias", d, 1, Kind::Bias),
        l("head.reread_weight", d, 3 * d, Kind::Weight),
        l("head.reread_bias", d, 1, Kind::Bias),
        l("head.fusion_weight", d, 4 * d, Kind::Weight),
        l("head.fusion_bias", d, 1, Kind::Bias),
        l("head.score", d, 1, Kind::Weight),
    ]
}

impl HeadParams {
    fn from_ids(ids: [ParamId; 13]) -> Self {
        Self {
            compare_att: ids[0],
            question_pool: ids[1],
            reread_att: ids[2],
            self_att: ids[3],
            correlation_weight: ids[4],
            correlation_bias: ids[5],
            gate_weight: ids[6],
            gate_bias: ids[7],
            reread_weight: ids[8],
            reread_bias: ids[9],
            fusion_weight: ids[10],
            fusion_bias: ids[11],
            score: ids[12],
        }
    }

    /// Parameters only reached through option comparison and gating.
    pub fn comparison_only(&self) -> [ParamId; 6] {
        [
            self.compare_att,
            self.question_pool,
            self.correlation_weight,
            self.correlation_bias,
            self.gate_weight,
            self.gate_bias,
        ]
    }
}

/// The network's structure: configuration plus parameter handles. Values
/// live in a separate [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Ocn {
    pub config: ModelConfig,
    pub skimmer: ToySkimmer,
    pub head: HeadParams,
}

impl Ocn {
    /// Fresh parameters: uniform in `±init_scale` for weights, embeddings
    /// and attention vectors, zeros for biases, all from `config.seed`.
    /// With `fan_in_init` the weight matrices use [`ModelConfig::weight_scale`].
    pub fn init(config: ModelConfig) -> Result<(Self, ParamSet)> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamSet::new();
        let (d, k, s) = (config.hidden, config.options, config.init_scale);
        let skimmer = ToySkimmer::init(
            &mut params,
            &mut rng,
            d,
            config.vocab_size,
            config.max_len(),
            s,
            config.weight_scale(3 * d),
        );
        let ids = head_layout(d, k).map(|l| {
            let value = match l.kind {
                Kind::Bias => Matrix::zeros(l.rows, l.cols),
                Kind::Weight => uniform(&mut rng, l.rows, l.cols, config.weight_scale(l.cols)),
                Kind::AttentionVector => uniform(&mut rng, l.rows, l.cols, s),
            };
            params.insert(l.name, value, l.kind == Kind::Weight)
        });
        let ocn = Self {
            config,
            skimmer,
            head: HeadParams::from_ids(ids),
        };
        Ok((ocn, params))
    }

    /// Binds to an existing parameter set, checking names and shapes.
    pub fn bind(config: ModelConfig, params: &ParamSet) -> Result<Self> {
        config.validate()?;
        let (d, k) = (config.hidden, config.options);
        let skimmer = ToySkimmer::bind(params, d, config.vocab_size, config.max_len())?;
        let mut ids = [ParamId(0); 13];
        for (slot, l) in ids.iter_mut().zip(head_layout(d, k)) {
            *slot = lookup(params, l.name, (l.rows, l.cols))?;
        }
        let expected = 4 + ids.len();
        if params.len() != expected {
            return Err(Error::Checkpoint(format!(
                "{} parameters, expected {expected}",
                params.len()
            )));
        }
        Ok(Self {
            config,
            skimmer,
            head: HeadParams::from_ids(ids),
        })
    }

    /// Parameters that influence the output under the current config.
    pub fn live_params(&self, params: &ParamSet) -> Vec<ParamId> {
        let dead = if self.config.ablate_comparison {
            self.head.comparison_only().to_vec()
        } else {
            Vec::new()
        };
        params.ids().filter(|id| !dead.contains(id)).collect()
    }
}
