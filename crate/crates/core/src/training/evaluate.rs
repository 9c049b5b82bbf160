use serde::Serialize;

use crate::data::Example;
use crate::error::{Error, Result};
use crate::model::{forward_example, Ocn};
use crate::numerics::{argmax, ParamSet};
use crate::parallel::{map_ordered, Parallelism};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Prediction {
    pub probabilities: Vec<f64>,
    /// Argmax of `probabilities`, lowest index on ties.
    pub choice: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub predictions: Vec<Prediction>,
}

pub fn predict_all(
    ocn: &Ocn,
    params: &ParamSet,
    examples: &[Example],
    parallelism: Parallelism,
) -> Result<Vec<Prediction>> {
    map_ordered(examples, parallelism, |ex| {
        let pass = forward_example(ocn, params, ex)?;
        let probabilities = pass.probabilities();
        Ok(Prediction {
            choice: argmax(&probabilities),
            probabilities,
        })
    })
    .into_iter()
    .collect()
}

/// Fraction of examples whose predicted option is the gold one.
pub fn accuracy(predictions: &[usize], gold: &[usize]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != gold.len() {
        return Err(Error::contract(
            "accuracy",
            format!(
                "{} predictions for {} labels",
                predictions.len(),
                gold.len()
            ),
        ));
    }
    let correct = predictions.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(correct as f64 / gold.len() as f64)
}

pub fn evaluate(
    ocn: &Ocn,
    params: &ParamSet,
    examples: &[Example],
    parallelism: Parallelism,
) -> Result<Evaluation> {
    if examples.is_empty() {
        return Err(Error::contract("evaluate", "empty dataset"));
    }
    let predictions = predict_all(ocn, params, examples, parallelism)?;
    let correct = predictions
        .iter()
        .zip(examples)
        .filter(|(p, e)| p.choice == e.answer)
        .count();
    Ok(Evaluation {
        accuracy: correct as f64 / examples.len() as f64,
        correct,
        total: examples.len(),
        predictions,
    })
}
