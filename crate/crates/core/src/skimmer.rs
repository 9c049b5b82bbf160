//! The encoder that turns a packed triple into contextual column vectors.
//!
//! [`Skimmer`] is the pluggable interface; [`ToySkimmer`] is a one-layer
//! contextual encoder: each column mixes its own embedding with the
//! sequence mean, so every output column depends on the whole input.

use rand::Rng;

use crate::data::PackedTriple;
use crate::error::{Error, Result};
use crate::numerics::{Mask, Matrix, Node, ParamId, ParamSet, Tape};

pub trait Skimmer: Send + Sync {
    fn hidden(&self) -> usize;

    /// Encodes the whole packed sequence into a `d × L` matrix.
    fn skim(&self, tape: &mut Tape<'_>, packed: &PackedTriple) -> Result<Node>;

    /// Parameters this skimmer reads.
    fn param_ids(&self) -> Vec<ParamId>;
}

/// Segment encodings of one packed triple.
#[derive(Clone, Copy, Debug)]
pub struct EncodedTriple {
    /// `d × L`, separators included.
    pub full: Node,
    /// `d × m`
    pub article: Node,
    /// `d × n`
    pub question: Node,
    /// `d × n_k`
    pub option: Node,
}

/// Runs the skimmer over the full sequence and slices out the three
/// segments, dropping separator columns.
pub fn encode_triple(
    skimmer: &dyn Skimmer,
    tape: &mut Tape<'_>,
    packed: &PackedTriple,
) -> Result<EncodedTriple> {
    let full = skimmer.skim(tape, packed)?;
    let width = tape.shape(full).1;
    let mut slice = |span: crate::data::Span| {
        if span.is_empty() || span.end > width {
            return Err(Error::contract(
                "encode_triple",
                format!("span {}..{} outside {width} columns", span.start, span.end),
            ));
        }
        tape.slice_cols(full, span.start, span.end)
    };
    let article = slice(packed.article)?;
    let question = slice(packed.question)?;
    let option = slice(packed.option)?;
    Ok(EncodedTriple {
        full,
        article,
        question,
        option,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ToySkimmerParams {
    /// `d × vocab`
    pub token_embedding: ParamId,
    /// `d × L_max`
    pub position_embedding: ParamId,
    /// `d × 3d`
    pub mix_weight: ParamId,
    /// `d × 1`
    pub mix_bias: ParamId,
}

#[derive(Clone, Debug)]
pub struct ToySkimmer {
    pub hidden: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub ids: ToySkimmerParams,
}

pub(crate) const TOKEN_EMBEDDING: &str = "skimmer.token_embedding";
pub(crate) const POSITION_EMBEDDING: &str = "skimmer.position_embedding";
pub(crate) const MIX_WEIGHT: &str = "skimmer.mix_weight";
pub(crate) const MIX_BIAS: &str = "skimmer.mix_bias";

pub(crate) fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-scale..=scale))
        .collect();
    Matrix::new(rows, cols, data).expect("positive shape")
}

impl ToySkimmer {
    /// Adds freshly initialized skimmer parameters to `params`.
    pub fn init(
        params: &mut ParamSet,
        rng: &mut impl Rng,
        hidden: usize,
        vocab_size: usize,
        max_len: usize,
        scale: f64,
        mix_scale: f64,
    ) -> Self {
        let d = hidden;
        let ids = ToySkimmerParams {
            token_embedding: params.insert(
                TOKEN_EMBEDDING,
                uniform(rng, d, vocab_size, scale),
                true,
            ),
            position_embedding: params.insert(
                POSITION_EMBEDDING,
                uniform(rng, d, max_len, scale),
                true,
            ),
            mix_weight: params.insert(MIX_WEIGHT, uniform(rng, d, 3 * d, mix_scale), true),
            mix_bias: params.insert(MIX_BIAS, Matrix::zeros(d, 1), false),
        };
        Self {
            hidden,
            vocab_size,
            max_len,
            ids,
        }
    }

    /// Looks up existing parameters by name.
    pub fn bind(
        params: &ParamSet,
        hidden: usize,
        vocab_size: usize,
        max_len: usize,
    ) -> Result<Self> {
        let d = hidden;
        let ids = ToySkimmerParams {
            token_embedding: crate::model::lookup(params, TOKEN_EMBEDDING, (d, vocab_size))?,
            position_embedding: crate::model::lookup(params, POSITION_EMBEDDING, (d, max_len))?,
            mix_weight: crate::model::lookup(params, MIX_WEIGHT, (d, 3 * d))?,
            mix_bias: crate::model::lookup(params, MIX_BIAS, (d, 1))?,
        };
        Ok(Self {
            hidden,
            vocab_size,
            max_len,
            ids,
        })
    }
}

/// `column j = relu(W_m [e_j; c; e_j ∘ c] + b_m)` where `e_j` is the token
/// plus position embedding and `c` the mask-weighted mean of all `e`.
/// Masked columns are zero.
pub fn toy_skim(
    tape: &mut Tape<'_>,
    skimmer: &ToySkimmer,
    ids: &[usize],
    mask: &Mask,
) -> Result<Node> {
    let len = ids.len();
    if len == 0 || len > skimmer.max_len {
        return Err(Error::contract(
            "toy_skim",
            format!("sequence length {len} outside 1..={}", skimmer.max_len),
        ));
    }
    if mask.len() != len {
        return Err(Error::contract(
            "toy_skim",
            "mask length differs from sequence",
        ));
    }
    if let Some(&bad) = ids.iter().find(|&&t| t >= skimmer.vocab_size) {
        return Err(Error::contract(
            "toy_skim",
            format!(
                "token id {bad} outside vocabulary of {}",
                skimmer.vocab_size
            ),
        ));
    }
    let p = &skimmer.ids;
    let tok_table = tape.param(p.token_embedding);
    let pos_table = tape.param(p.position_embedding);
    let tok = tape.gather(tok_table, ids.to_vec())?;
    let pos = tape.gather(pos_table, (0..len).collect())?;
    let emb = tape.add(tok, pos)?;

    let count = mask.count() as f64;
    let weights: Vec<f64> = mask
        .as_slice()
        .iter()
        .map(|&m| if m { 1.0 / count } else { 0.0 })
        .collect();
    let weights = tape.input(Matrix::column(&weights)?);
    let mean = tape.matmul(emb, weights)?;
    let ctx = tape.repeat_cols(mean, len)?;
    let inter = tape.mul(emb, ctx)?;
    let stacked = tape.vcat(&[emb, ctx, inter])?;

    let w = tape.param(p.mix_weight);
    let b = tape.param(p.mix_bias);
    let mixed = tape.matmul(w, stacked)?;
    let mixed = tape.add_bias(mixed, b)?;
    let out = tape.relu(mixed)?;
    if mask.is_full() {
        return Ok(out);
    }
    let keep: Vec<f64> = (0..skimmer.hidden)
        .flat_map(|_| mask.as_slice().iter().map(|&m| if m { 1.0 } else { 0.0 }))
        .collect();
    let keep = tape.input(Matrix::new(skimmer.hidden, len, keep)?);
    tape.mul(out, keep)
}

impl Skimmer for ToySkimmer {
    fn hidden(&self) -> usize {
        self.hidden
    }

    fn skim(&self, tape: &mut Tape<'_>, packed: &PackedTriple) -> Result<Node> {
        toy_skim(tape, self, &packed.ids, &packed.mask)
    }

    fn param_ids(&self) -> Vec<ParamId> {
        let p = &self.ids;
        vec![
            p.token_embedding,
            p.position_embedding,
            p.mix_weight,
            p.mix_bias,
        ]
    }
}
