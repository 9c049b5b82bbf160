//! Batch loss and its gradient.

use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::error::Result;
use crate::model::{forward_example_on, Ocn};
use crate::numerics::{Gradients, Node, OpKind, ParamSet, Tape};
use crate::parallel::{map_ordered, Parallelism};

/// Where weight decay is applied.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayMode {
    /// Shrink parameters inside the optimizer step.
    #[default]
    Decoupled,
    /// Add `λ·Σθ²` to the loss; the optimizer applies no decay.
    LossPenalty,
}

/// What is being minimized for one batch.
#[derive(Clone, Copy, Debug)]
pub struct Objective {
    /// `λ` of the loss penalty; 0 under decoupled decay.
    pub penalty: f64,
    pub parallelism: Parallelism,
    /// Harness self-test hook, see [`Tape::with_faulty_rule`].
    pub faulty_rule: Option<OpKind>,
}

impl Objective {
    pub fn new(mode: DecayMode, weight_decay: f64, parallelism: Parallelism) -> Self {
        Self {
            penalty: match mode {
                DecayMode::Decoupled => 0.0,
                DecayMode::LossPenalty => weight_decay,
            },
            parallelism,
            faulty_rule: None,
        }
    }
}

fn example_term<'p>(
    ocn: &Ocn,
    tape: Tape<'p>,
    ex: &Example,
    weight: f64,
) -> Result<(Tape<'p>, Node)> {
    let mut pass = forward_example_on(ocn, tape, ex)?;
    let node = pass.nll(ex.answer, weight)?;
    Ok((pass.tape, node))
}

fn penalty_term<'p>(
    params: &'p ParamSet,
    penalty: f64,
    faulty: Option<OpKind>,
) -> Result<(Tape<'p>, Option<Node>)> {
    let mut tape = Tape::new(params).with_faulty_rule(faulty);
    let mut total = None;
    for id in params.ids().filter(|&id| params.decays(id)) {
        let p = tape.param(id);
        let sq = tape.sum_squares(p)?;
        total = Some(match total {
            None => sq,
            Some(acc) => tape.add(acc, sq)?,
        });
    }
    let node = match total {
        Some(t) => Some(tape.scale(t, penalty)?),
        None => None,
    };
    Ok((tape, node))
}

/// Mean negative log-likelihood over `batch` plus the loss penalty.
pub fn batch_loss(
    ocn: &Ocn,
    params: &ParamSet,
    batch: &[&Example],
    objective: &Objective,
) -> Result<f64> {
    let weight = 1.0 / batch.len() as f64;
    let terms = map_ordered(batch, objective.parallelism, |ex| -> Result<f64> {
        let (tape, node) = example_term(ocn, Tape::new(params), ex, weight)?;
        Ok(tape.value(node).item())
    });
    let mut total = 0.0;
    for t in terms {
        total += t?;
    }
    if objective.penalty > 0.0 {
        if let (tape, Some(node)) = penalty_term(params, objective.penalty, None)? {
            total += tape.value(node).item();
        }
    }
    Ok(total)
}

/// Loss and exact gradient for `batch`. Per-example gradients are
/// computed independently and summed in batch order.
pub fn batch_loss_and_grads(
    ocn: &Ocn,
    params: &ParamSet,
    batch: &[&Example],
    objective: &Objective,
) -> Result<(f64, Gradients)> {
    let weight = 1.0 / batch.len() as f64;
    let faulty = objective.faulty_rule;
    let terms = map_ordered(
        batch,
        objective.parallelism,
        |ex| -> Result<(f64, Gradients)> {
            let tape = Tape::new(params).with_faulty_rule(faulty);
            let (tape, node) = example_term(ocn, tape, ex, weight)?;
            Ok((tape.value(node).item(), tape.backward(node)?))
        },
    );
    let mut total = 0.0;
    let mut grads = Gradients::zeros_like(params);
    for t in terms {
        let (loss, g) = t?;
        total += loss;
        grads.accumulate(&g);
    }
    if objective.penalty > 0.0 {
        if let (tape, Some(node)) = penalty_term(params, objective.penalty, faulty)? {
            total += tape.value(node).item();
            grads.accumulate(&tape.backward(node)?);
        }
    }
    Ok((total, grads))
}
