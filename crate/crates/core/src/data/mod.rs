//! Examples, tokenization, RACE loading, packing and synthetic corpora.

mod pack;
mod race;
mod synth;
mod vocab;

use serde::{Deserialize, Serialize};

pub use pack::{truncate_and_pack, Limits, PackedTriple, Span};
pub use race::{
    answer_letter, load_race_dir, load_race_file, write_examples, RaceLoad, RaceRecord, RawExample,
};
pub use synth::{synth_generate, SynthSpec, SynthTask};
pub use vocab::{split_tokens, tokenize, Vocabulary, PAD, SEP, UNK};

use crate::error::{Error, Result};

/// One multiple-choice instance as token ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub article: Vec<usize>,
    pub question: Vec<usize>,
    pub options: Vec<Vec<usize>>,
    pub answer: usize,
}

impl Example {
    pub fn num_options(&self) -> usize {
        self.options.len()
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::contract("Example::validate", msg));
        if self.options.len() < 2 {
            return bad(format!("{} options", self.options.len()));
        }
        if self.answer >= self.options.len() {
            return bad(format!(
                "answer {} of {} options",
                self.answer,
                self.options.len()
            ));
        }
        let lists = std::iter::once(&self.article)
            .chain(std::iter::once(&self.question))
            .chain(&self.options);
        for list in lists {
            if list.is_empty() {
                return bad("empty token list".into());
            }
            if let Some(&t) = list
                .iter()
                .find(|&&t| t >= vocab_size || t == SEP || t == PAD)
            {
                return bad(format!(
                    "token id {t} invalid for vocabulary of {vocab_size}"
                ));
            }
        }
        Ok(())
    }
}
