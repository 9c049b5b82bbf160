use super::stack::{
    coattend_reread, fuse_correlations, gate_fuse, option_features, pairwise_compare, score_option,
    self_attend_fuse,
};
use super::Ocn;
use crate::attention::attentive_pool;
use crate::data::{truncate_and_pack, Example};
use crate::error::{Error, Result};
use crate::numerics::{Mask, Matrix, Node, ParamSet, Tape};
use crate::skimmer::{encode_triple, EncodedTriple};

/// Tape handles for every intermediate of one option's pipeline.
#[derive(Clone, Debug)]
pub struct OptionNodes {
    pub encoded: EncodedTriple,
    /// `O^q`, `d × n'`
    pub features: Node,
    /// `(l, Õ^(l))` for every `l ≠ k`, ascending. Empty when ablated.
    pub pairwise: Vec<(usize, Node)>,
    /// `Õ^c`; `None` when ablated.
    pub correlation: Option<Node>,
    /// `Q̃`; `None` when ablated.
    pub question_summary: Option<Node>,
    /// `g`; `None` when ablated.
    pub gate: Option<Node>,
    /// `O^c` (equal to `O^q` when ablated).
    pub correlated: Node,
    pub option_over_article: Node,
    pub article_over_option: Node,
    pub attended: Node,
    pub reread: Node,
    pub self_attended: Node,
    pub full_info: Node,
    pub score: Node,
}

/// Materialized intermediates of one option.
#[derive(Clone, Debug, PartialEq)]
pub struct OptionPipelineState {
    pub article: Matrix,
    pub question: Matrix,
    pub option: Matrix,
    pub features: Matrix,
    pub pairwise: Vec<(usize, Matrix)>,
    pub correlation: Option<Matrix>,
    pub question_summary: Option<Matrix>,
    pub gate: Option<Matrix>,
    pub correlated: Matrix,
    pub option_over_article: Matrix,
    pub article_over_option: Matrix,
    pub attended: Matrix,
    pub reread: Matrix,
    pub self_attended: Matrix,
    pub full_info: Matrix,
    pub score: f64,
}

/// A recorded forward pass over one example.
pub struct ForwardPass<'p> {
    pub tape: Tape<'p>,
    pub options: Vec<OptionNodes>,
    /// `K × 1`
    pub scores: Node,
    /// `K × 1`
    pub probs: Node,
}

impl<'p> ForwardPass<'p> {
    pub fn probabilities(&self) -> Vec<f64> {
        self.tape.value(self.probs).as_slice().to_vec()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.tape.value(self.scores).as_slice().to_vec()
    }

    /// Appends `weight · (−ln P(gold))` and returns its node.
    pub fn nll(&mut self, gold: usize, weight: f64) -> Result<Node> {
        if gold >= self.options.len() {
            return Err(Error::contract(
                "nll",
                format!("gold index {gold} of {} options", self.options.len()),
            ));
        }
        let nll = self.tape.neg_log_pick(self.probs, gold)?;
        self.tape.scale(nll, weight)
    }

    pub fn pipeline_state(&self) -> Vec<OptionPipelineState> {
        let v = |n: Node| self.tape.value(n).clone();
        self.options
            .iter()
            .map(|o| OptionPipelineState {
                article: v(o.encoded.article),
                question: v(o.encoded.question),
                option: v(o.encoded.option),
                features: v(o.features),
                pairwise: o.pairwise.iter().map(|&(l, n)| (l, v(n))).collect(),
                correlation: o.correlation.map(v),
                question_summary: o.question_summary.map(v),
                gate: o.gate.map(v),
                correlated: v(o.correlated),
                option_over_article: v(o.option_over_article),
                article_over_option: v(o.article_over_option),
                attended: v(o.attended),
                reread: v(o.reread),
                self_attended: v(o.self_attended),
                full_info: v(o.full_info),
                score: self.tape.value(o.score).item(),
            })
            .collect()
    }
}

struct Encoded {
    triple: EncodedTriple,
    features: Node,
    feature_mask: Mask,
    article_mask: Mask,
    question_mask: Mask,
}

/// Runs the full network on one example: K skimmer passes, option
/// comparison (unless ablated), rereading, scoring and the softmax over
/// options.
pub fn forward_example<'p>(
    ocn: &Ocn,
    params: &'p ParamSet,
    ex: &Example,
) -> Result<ForwardPass<'p>> {
    forward_example_on(ocn, Tape::new(params), ex)
}

pub(crate) fn forward_example_on<'p>(
    ocn: &Ocn,
    mut tape: Tape<'p>,
    ex: &Example,
) -> Result<ForwardPass<'p>> {
    let cfg = &ocn.config;
    if ex.options.len() != cfg.options {
        return Err(Error::contract(
            "forward_example",
            format!(
                "{} options, model expects {}",
                ex.options.len(),
                cfg.options
            ),
        ));
    }
    let h = &ocn.head;
    let t = &mut tape;

    let mut encoded = Vec::with_capacity(cfg.options);
    for k in 0..cfg.options {
        let packed = truncate_and_pack(ex, cfg.limits, k)?;
        let triple = encode_triple(&ocn.skimmer, t, &packed)?;
        let features = option_features(t, triple.question, triple.option)?;
        let question_mask = packed
            .mask
            .slice(packed.question.start, packed.question.end)?;
        let option_mask = packed.mask.slice(packed.option.start, packed.option.end)?;
        let mut joined = question_mask.as_slice().to_vec();
        joined.extend_from_slice(option_mask.as_slice());
        encoded.push(Encoded {
            triple,
            features,
            feature_mask: Mask::new(joined)?,
            article_mask: packed
                .mask
                .slice(packed.article.start, packed.article.end)?,
            question_mask,
        });
    }
    let all_features: Vec<Node> = encoded.iter().map(|e| e.features).collect();
    let feature_masks: Vec<Mask> = encoded.iter().map(|e| e.feature_mask.clone()).collect();

    let mut options = Vec::with_capacity(cfg.options);
    for (k, enc) in encoded.iter().enumerate() {
        let mut pairwise = Vec::new();
        let (mut correlation, mut question_summary, mut gate) = (None, None, None);
        let correlated = if cfg.ablate_comparison {
            enc.features
        } else {
            let v_o = t.param(h.compare_att);
            for l in (0..cfg.options).filter(|&l| l != k) {
                pairwise.push((
                    l,
                    pairwise_compare(t, &all_features, &feature_masks, k, l, v_o)?,
                ));
            }
            let blocks: Vec<Node> = pairwise.iter().map(|&(_, n)| n).collect();
            let (w_c, b_c) = (t.param(h.correlation_weight), t.param(h.correlation_bias));
            let corr = fuse_correlations(t, enc.features, &blocks, cfg.options, w_c, b_c)?;
            let v_a = t.param(h.question_pool);
            let q = attentive_pool(t, enc.triple.question, v_a, &enc.question_mask)?;
            let (w_g, b_g) = (t.param(h.gate_weight), t.param(h.gate_bias));
            let gated = gate_fuse(t, enc.features, corr, q, w_g, b_g)?;
            correlation = Some(corr);
            question_summary = Some(q);
            gate = Some(gated.gate);
            gated.output
        };

        let v_p = t.param(h.reread_att);
        let (w_p, b_p) = (t.param(h.reread_weight), t.param(h.reread_bias));
        let reread = coattend_reread(
            t,
            enc.triple.article,
            correlated,
            v_p,
            w_p,
            b_p,
            &enc.article_mask,
            &enc.feature_mask,
        )?;
        let v_r = t.param(h.self_att);
        let (w_f, b_f) = (t.param(h.fusion_weight), t.param(h.fusion_bias));
        let fused = self_attend_fuse(t, reread.output, v_r, w_f, b_f, &enc.feature_mask)?;
        let v_s = t.param(h.score);
        let score = score_option(t, fused.output, v_s)?;

        options.push(OptionNodes {
            encoded: enc.triple,
            features: enc.features,
            pairwise,
            correlation,
            question_summary,
            gate,
            correlated,
            option_over_article: reread.option_over_article,
            article_over_option: reread.article_over_option,
            attended: reread.attended,
            reread: reread.output,
            self_attended: fused.attended,
            full_info: fused.output,
            score,
        });
    }

    let score_nodes: Vec<Node> = options.iter().map(|o| o.score).collect();
    let scores = t.vcat(&score_nodes)?;
    let probs = t.masked_column_softmax(scores, Mask::all(cfg.options))?;
    Ok(ForwardPass {
        tape,
        options,
        scores,
        probs,
    })
}
