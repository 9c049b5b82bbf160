use serde::{Deserialize, Serialize};

use super::vocab::SEP;
use super::Example;
use crate::error::{Error, Result};
use crate::numerics::Mask;

/// Per-segment token budgets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Limits {
    pub article: usize,
    pub question: usize,
    pub option: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            article: 400,
            question: 30,
            option: 16,
        }
    }
}

impl Limits {
    /// Longest possible packed sequence: three segments and two separators.
    pub fn max_packed_len(&self) -> usize {
        self.article + self.question + self.option + 2
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("article", self.article),
            ("question", self.question),
            ("option", self.option),
        ] {
            if v == 0 {
                return Err(Error::config(format!("limits.{field}"), "must be positive"));
            }
        }
        Ok(())
    }
}

/// Half-open position range `start..end`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// `article [SEP] question [SEP] option` for one option of an example.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PackedTriple {
    pub ids: Vec<usize>,
    pub article: Span,
    pub question: Span,
    pub option: Span,
    pub mask: Mask,
}

impl PackedTriple {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn segment(&self, span: Span) -> &[usize] {
        &self.ids[span.start..span.end]
    }
}

/// Keeps the first `limits.*` tokens of each segment and joins them with
/// separators.
pub fn truncate_and_pack(ex: &Example, limits: Limits, option: usize) -> Result<PackedTriple> {
    let opt = ex.options.get(option).ok_or_else(|| {
        Error::contract(
            "truncate_and_pack",
            format!("option {option} of {}", ex.options.len()),
        )
    })?;
    let article = &ex.article[..ex.article.len().min(limits.article)];
    let question = &ex.question[..ex.question.len().min(limits.question)];
    let opt = &opt[..opt.len().min(limits.option)];
    if article.is_empty() || question.is_empty() || opt.is_empty() {
        return Err(Error::contract("truncate_and_pack", "empty segment"));
    }

    let mut ids = Vec::with_capacity(article.len() + question.len() + opt.len() + 2);
    ids.extend_from_slice(article);
    ids.push(SEP);
    ids.extend_from_slice(question);
    ids.push(SEP);
    ids.extend_from_slice(opt);

    let a = article.len();
    let q = question.len();
    let len = ids.len();
    Ok(PackedTriple {
        ids,
        article: Span { start: 0, end: a },
        question: Span {
            start: a + 1,
            end: a + 1 + q,
        },
        option: Span {
            start: a + 2 + q,
            end: len,
        },
        mask: Mask::all(len),
    })
}
