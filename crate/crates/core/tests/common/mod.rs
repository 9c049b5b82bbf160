#![allow(dead_code)]

pub mod oracle;

use ocn::data::Example;
use rand::Rng;

/// Random example with segment lengths in `1..=max` and ids above the
/// reserved range.
pub fn random_example(
    rng: &mut impl Rng,
    vocab: usize,
    options: usize,
    article: usize,
    question: usize,
    option: usize,
) -> Example {
    let mut seq = |max: usize| -> Vec<usize> {
        let len = rng.gen_range(1..=max);
        (0..len).map(|_| rng.gen_range(3..vocab)).collect()
    };
    let article_ids = seq(article);
    let question_ids = seq(question);
    let option_ids = (0..options).map(|_| seq(option)).collect();
    Example {
        article: article_ids,
        question: question_ids,
        options: option_ids,
        answer: rng.gen_range(0..options),
    }
}
