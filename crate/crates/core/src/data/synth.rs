//! Seeded synthetic multiple-choice datasets over a `w3 … wN` vocabulary.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::vocab::SEP;
use super::Example;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthTask {
    /// The answer is a span copied from the article; every distractor
    /// holds at least one token absent from the article.
    LexicalOverlap,
    /// Options share a template and differ in one slot; only the
    /// answer's slot token occurs in the article.
    NearDuplicateDistractors,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub task: SynthTask,
    pub seed: u64,
    pub count: usize,
    #[serde(default = "defaults::vocab_size")]
    pub vocab_size: usize,
    #[serde(default = "defaults::article_len")]
    pub article_len: usize,
    #[serde(default = "defaults::question_len")]
    pub question_len: usize,
    #[serde(default = "defaults::option_len")]
    pub option_len: usize,
    #[serde(default = "defaults::options")]
    pub options: usize,
}

mod defaults {
    pub fn vocab_size() -> usize {
        50
    }
    pub fn article_len() -> usize {
        20
    }
    pub fn question_len() -> usize {
        4
    }
    pub fn option_len() -> usize {
        3
    }
    pub fn options() -> usize {
        4
    }
}

impl SynthSpec {
    pub fn new(task: SynthTask, seed: u64, count: usize) -> Self {
        Self {
            task,
            seed,
            count,
            vocab_size: defaults::vocab_size(),
            article_len: defaults::article_len(),
            question_len: defaults::question_len(),
            option_len: defaults::option_len(),
            options: defaults::options(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let content = self.vocab_size.saturating_sub(SEP + 1);
        if self.vocab_size < 20 {
            return Err(Error::config("vocab_size", "must be at least 20"));
        }
        if self.count == 0 {
            return Err(Error::config("count", "must be at least 1"));
        }
        if self.options < 2 {
            return Err(Error::config("options", "must be at least 2"));
        }
        if self.question_len == 0 || self.option_len == 0 {
            return Err(Error::config("option_len", "lengths must be positive"));
        }
        if self.article_len < self.option_len {
            return Err(Error::config("article_len", "must be at least option_len"));
        }
        if self.options + self.option_len + 1 > content {
            return Err(Error::config(
                "vocab_size",
                "too small for the option layout",
            ));
        }
        Ok(())
    }
}

/// Deterministic dataset for `spec`.
pub fn synth_generate(spec: &SynthSpec) -> Result<Vec<Example>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let content: Vec<usize> = (SEP + 1..spec.vocab_size).collect();
    let examples = (0..spec.count)
        .map(|_| match spec.task {
            SynthTask::LexicalOverlap => lexical_overlap(&mut rng, spec, &content),
            SynthTask::NearDuplicateDistractors => near_duplicate(&mut rng, spec, &content),
        })
        .collect();
    Ok(examples)
}

fn sample(rng: &mut ChaCha8Rng, pool: &[usize], n: usize) -> Vec<usize> {
    (0..n)
        .map(|_| *pool.choose(rng).expect("non-empty pool"))
        .collect()
}

fn lexical_overlap(rng: &mut ChaCha8Rng, spec: &SynthSpec, content: &[usize]) -> Example {
    // One token is kept out of the article so distractors can always be
    // made distinguishable.
    let reserved = *content.choose(rng).expect("content");
    let article_pool: Vec<usize> = content.iter().copied().filter(|&t| t != reserved).collect();
    let article = sample(rng, &article_pool, spec.article_len);
    let in_article: HashSet<usize> = article.iter().copied().collect();
    let absent: Vec<usize> = content
        .iter()
        .copied()
        .filter(|t| !in_article.contains(t))
        .collect();

    let question = sample(rng, content, spec.question_len);
    let start = rng.gen_range(0..=spec.article_len - spec.option_len);
    let correct = article[start..start + spec.option_len].to_vec();
    let answer = rng.gen_range(0..spec.options);

    let options = (0..spec.options)
        .map(|k| {
            if k == answer {
                return correct.clone();
            }
            let mut d = sample(rng, content, spec.option_len);
            if d.iter().all(|t| in_article.contains(t)) {
                let pos = rng.gen_range(0..d.len());
                d[pos] = *absent.choose(rng).expect("reserved token is absent");
            }
            d
        })
        .collect();
    Example {
        article,
        question,
        options,
        answer,
    }
}

fn near_duplicate(rng: &mut ChaCha8Rng, spec: &SynthSpec, content: &[usize]) -> Example {
    let mut shuffled = content.to_vec();
    shuffled.shuffle(rng);
    let candidates = &shuffled[..spec.options];
    let template = sample(rng, &shuffled[spec.options..], spec.option_len);
    let slot = rng.gen_range(0..spec.option_len);
    let answer = rng.gen_range(0..spec.options);

    let article_pool: Vec<usize> = content
        .iter()
        .copied()
        .filter(|t| !candidates.contains(t))
        .collect();
    let mut article = sample(rng, &article_pool, spec.article_len);
    let pos = rng.gen_range(0..spec.article_len);
    article[pos] = candidates[answer];

    let question = sample(rng, content, spec.question_len);
    let options = candidates
        .iter()
        .map(|&c| {
            let mut o = template.clone();
            o[slot] = c;
            o
        })
        .collect();
    Example {
        article,
        question,
        options,
        answer,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        for task in [
            SynthTask::LexicalOverlap,
            SynthTask::NearDuplicateDistractors,
        ] {
            let a = synth_generate(&SynthSpec::new(task, 7, 50)).unwrap();
            let b = synth_generate(&SynthSpec::new(task, 7, 50)).unwrap();
            let c = synth_generate(&SynthSpec::new(task, 8, 50)).unwrap();
            assert_eq!(a, b);
            assert_ne!(a, c);
        }
    }

    #[test]
    fn count_and_single_answer() {
        let ex = synth_generate(&SynthSpec::new(SynthTask::LexicalOverlap, 1, 100)).unwrap();
        assert_eq!(ex.len(), 100);
        for e in &ex {
            assert!(e.answer < 4);
            assert_eq!(e.options.len(), 4);
            e.validate(50).unwrap();
        }
    }

    #[test]
    fn lexical_overlap_answer_inside_article() {
        let ex = synth_generate(&SynthSpec::new(SynthTask::LexicalOverlap, 3, 500)).unwrap();
        for e in &ex {
            let art: HashSet<_> = e.article.iter().collect();
            assert!(e.options[e.answer].iter().all(|t| art.contains(t)));
            for (k, o) in e.options.iter().enumerate() {
                if k != e.answer {
                    assert!(o.iter().any(|t| !art.contains(t)));
                }
            }
        }
    }

    #[test]
    fn near_duplicates_differ_in_one_slot() {
        let ex =
            synth_generate(&SynthSpec::new(SynthTask::NearDuplicateDistractors, 5, 500)).unwrap();
        for e in &ex {
            let diff: Vec<usize> = (0..3)
                .filter(|&i| e.options.iter().any(|o| o[i] != e.options[0][i]))
                .collect();
            assert_eq!(diff.len(), 1);
            let slot = diff[0];
            for (k, o) in e.options.iter().enumerate() {
                assert_eq!(e.article.contains(&o[slot]), k == e.answer);
                for (l, p) in e.options.iter().enumerate() {
                    let differing = o.iter().zip(p).filter(|(a, b)| a != b).count();
                    assert_eq!(differing, usize::from(k != l));
                }
            }
        }
    }

    #[test]
    fn rejects_small_vocab() {
        let mut s = SynthSpec::new(SynthTask::LexicalOverlap, 0, 1);
        s.vocab_size = 10;
        assert!(synth_generate(&s).is_err());
    }
}
