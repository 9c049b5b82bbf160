//! Per-stage operations of the network, each recorded on a [`Tape`].

use crate::attention::att_weights;
use crate::error::{Error, Result};
use crate::numerics::{softmax, Mask, Matrix, Node, Tape, LOG_CLAMP};

fn hidden(tape: &Tape<'_>, node: Node) -> usize {
    tape.shape(node).0
}

/// `[Q^enc | O^enc]`: question columns then option columns.
pub fn option_features(tape: &mut Tape<'_>, question: Node, option: Node) -> Result<Node> {
    if hidden(tape, question) != hidden(tape, option) {
        return Err(Error::contract("option_features", "hidden sizes differ"));
    }
    tape.hcat(&[question, option])
}

/// What option `k` gathers from option `l`: `[O_k − Ō; O_k ∘ Ō]` with
/// `Ō = O_l · Att(O_l, O_k)`. Shape `2d × n'_k`.
pub fn pairwise_compare(
    tape: &mut Tape<'_>,
    features: &[Node],
    masks: &[Mask],
    k: usize,
    l: usize,
    weights: Node,
) -> Result<Node> {
    if k == l {
        return Err(Error::contract(
            "pairwise_compare",
            format!("option {k} compared with itself"),
        ));
    }
    let (own, other) = (features[k], features[l]);
    let att = att_weights(tape, other, own, weights, &masks[l])?;
    let gathered = tape.matmul(other, att)?;
    let diff = tape.sub(own, gathered)?;
    let prod = tape.mul(own, gathered)?;
    tape.vcat(&[diff, prod])
}

/// `tanh(W_c [O_k; Õ_k^(l1); …] + b_c)` with the pairwise blocks in
/// ascending `l`.
pub fn fuse_correlations(
    tape: &mut Tape<'_>,
    features: Node,
    pairwise: &[Node],
    options: usize,
    weight: Node,
    bias: Node,
) -> Result<Node> {
    if pairwise.len() + 1 != options {
        return Err(Error::contract(
            "fuse_correlations",
            format!("{} pairwise blocks for {options} options", pairwise.len()),
        ));
    }
    let mut parts = Vec::with_capacity(options);
    parts.push(features);
    parts.extend_from_slice(pairwise);
    let stacked = tape.vcat(&parts)?;
    let z = tape.matmul(weight, stacked)?;
    let z = tape.add_bias(z, bias)?;
    tape.tanh(z)
}

#[derive(Clone, Copy, Debug)]
pub struct Gated {
    pub gate: Node,
    pub output: Node,
}

/// Per column: `g = σ(W_g [O_i; Õc_i; Q̃] + b_g)`, output
/// `g ∘ O_i + (1 − g) ∘ Õc_i`.
pub fn gate_fuse(
    tape: &mut Tape<'_>,
    features: Node,
    correlation: Node,
    question_summary: Node,
    weight: Node,
    bias: Node,
) -> Result<Gated> {
    let (d, width) = tape.shape(features);
    if tape.shape(correlation) != (d, width) || tape.shape(question_summary) != (d, 1) {
        return Err(Error::contract(
            "gate_fuse",
            format!(
                "features {:?}, correlation {:?}, question {:?}",
                tape.shape(features),
                tape.shape(correlation),
                tape.shape(question_summary)
            ),
        ));
    }
    let q = tape.repeat_cols(question_summary, width)?;
    let input = tape.vcat(&[features, correlation, q])?;
    let z = tape.matmul(weight, input)?;
    let z = tape.add_bias(z, bias)?;
    let gate = tape.sigmoid(z)?;
    let ones = tape.input(Matrix::ones(d, width));
    let complement = tape.sub(ones, gate)?;
    let kept = tape.mul(gate, features)?;
    let mixed = tape.mul(complement, correlation)?;
    let output = tape.add(kept, mixed)?;
    Ok(Gated { gate, output })
}

#[derive(Clone, Copy, Debug)]
pub struct Reread {
    /// `A^c`, `n' × m`
    pub option_over_article: Node,
    /// `A^p`, `m × n'`
    pub article_over_option: Node,
    /// `Ô^p`, `2d × n'`
    pub attended: Node,
    /// `Õ^p`, `d × n'`
    pub output: Node,
}

/// Co-attention between the article and the option's correlation
/// features, then `relu(W_p [O^c; Ô^p] + b_p)`.
#[allow(clippy::too_many_arguments)]
pub fn coattend_reread(
    tape: &mut Tape<'_>,
    article: Node,
    correlated: Node,
    weights: Node,
    weight: Node,
    bias: Node,
    article_mask: &Mask,
    option_mask: &Mask,
) -> Result<Reread> {
    if hidden(tape, article) != hidden(tape, correlated) {
        return Err(Error::contract("coattend_reread", "hidden sizes differ"));
    }
    let option_over_article = att_weights(tape, correlated, article, weights, option_mask)?;
    let article_over_option = att_weights(tape, article, correlated, weights, article_mask)?;
    let summary = tape.matmul(correlated, option_over_article)?;
    let both = tape.vcat(&[article, summary])?;
    let attended = tape.matmul(both, article_over_option)?;
    let input = tape.vcat(&[correlated, attended])?;
    let z = tape.matmul(weight, input)?;
    let z = tape.add_bias(z, bias)?;
    let output = tape.relu(z)?;
    Ok(Reread {
        option_over_article,
        article_over_option,
        attended,
        output,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct SelfAttended {
    /// `Õ^s`, `d × n'`
    pub attended: Node,
    /// `O^f`, `d × n'`
    pub output: Node,
}

/// Self-attention over the reread option, then
/// `relu(W_f [Õ; Õ^s; Õ − Õ^s; Õ ∘ Õ^s] + b_f)`.
pub fn self_attend_fuse(
    tape: &mut Tape<'_>,
    reread: Node,
    weights: Node,
    weight: Node,
    bias: Node,
    mask: &Mask,
) -> Result<SelfAttended> {
    let att = att_weights(tape, reread, reread, weights, mask)?;
    let attended = tape.matmul(reread, att)?;
    let diff = tape.sub(reread, attended)?;
    let prod = tape.mul(reread, attended)?;
    let full = tape.vcat(&[reread, attended, diff, prod])?;
    let z = tape.matmul(weight, full)?;
    let z = tape.add_bias(z, bias)?;
    let output = tape.relu(z)?;
    Ok(SelfAttended { attended, output })
}

/// `v_sᵀ · rowmax(O^f)`, a `1 × 1` node.
pub fn score_option(tape: &mut Tape<'_>, full_info: Node, score_weights: Node) -> Result<Node> {
    let pooled = tape.rowwise_max_pool(full_info)?;
    let w = tape.transpose(score_weights)?;
    tape.matmul(w, pooled)
}

/// Softmax over option scores.
pub fn predict(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.len() < 2 {
        return Err(Error::contract("predict", "need at least two scores"));
    }
    softmax(scores)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValue {
    pub value: f64,
    /// Some gold probability fell below the log clamp.
    pub clamped: bool,
}

/// Mean negative log-likelihood of the gold options plus
/// `penalty · Σ‖θ‖²` over `penalized`.
pub fn loss_value<'a>(
    batch_probs: &[Vec<f64>],
    gold: &[usize],
    penalized: impl IntoIterator<Item = &'a Matrix>,
    penalty: f64,
) -> Result<LossValue> {
    if batch_probs.len() != gold.len() || gold.is_empty() {
        return Err(Error::contract(
            "loss",
            "batch and gold lengths differ or are empty",
        ));
    }
    if penalty < 0.0 {
        return Err(Error::contract("loss", "negative penalty"));
    }
    let mut clamped = false;
    let mut total = 0.0;
    for (probs, &g) in batch_probs.iter().zip(gold) {
        let p = *probs
            .get(g)
            .ok_or_else(|| Error::contract("loss", format!("gold index {g} out of range")))?;
        if p < LOG_CLAMP {
            clamped = true;
            log::warn!("gold probability {p:e} clamped to {LOG_CLAMP:e}");
        }
        total -= p.max(LOG_CLAMP).ln();
    }
    let reg: f64 = penalized.into_iter().map(Matrix::sum_squares).sum();
    Ok(LossValue {
        value: total / gold.len() as f64 + penalty * reg,
        clamped,
    })
}
