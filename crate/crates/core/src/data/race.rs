//! RACE-format JSON files: one article with parallel `questions`,
//! `options` and `answers` lists.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::vocab::{Vocabulary, UNK};
use super::Example;
use crate::error::{Error, Result};

/// On-disk record. `answers` may be omitted for prediction inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RaceRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub article: String,
    pub questions: Vec<String>,
    pub options: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answers: Option<Vec<String>>,
}

/// A file may hold one record or an array of them.
#[derive(Deserialize)]
#[serde(untagged)]
enum RaceFile {
    One(RaceRecord),
    Many(Vec<RaceRecord>),
}

/// One (article, question) pair in text form.
#[derive(Clone, Debug, PartialEq)]
pub struct RawExample {
    pub source: PathBuf,
    pub id: String,
    pub question_index: usize,
    pub article: String,
    pub question: String,
    pub options: Vec<String>,
    pub answer: Option<usize>,
}

impl RawExample {
    /// Tokenizes all fields. Empty fields become a single `UNK`; a missing
    /// answer becomes index 0.
    pub fn encode(&self, vocab: &Vocabulary) -> Example {
        let tok = |s: &str| {
            let ids = vocab.tokenize(s);
            if ids.is_empty() {
                vec![UNK]
            } else {
                ids
            }
        };
        Example {
            article: tok(&self.article),
            question: tok(&self.question),
            options: self.options.iter().map(|o| tok(o)).collect(),
            answer: self.answer.unwrap_or(0),
        }
    }
}

pub fn answer_letter(index: usize) -> char {
    (b'A' + index as u8) as char
}

fn parse_answer(letter: &str, options: usize, path: &Path) -> Result<usize> {
    let trimmed = letter.trim();
    let mut chars = trimmed.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) if c.is_ascii_uppercase() && ((c as u8 - b'A') as usize) < options => {
            Ok((c as u8 - b'A') as usize)
        }
        _ => Err(Error::data(
            path,
            format!(
                "answer {letter:?} is not one of A..{}",
                answer_letter(options - 1)
            ),
        )),
    }
}

fn records_to_examples(
    records: Vec<RaceRecord>,
    options: usize,
    path: &Path,
) -> Result<Vec<RawExample>> {
    let mut out = Vec::new();
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let multi = records.len() > 1;
    for (r, rec) in records.into_iter().enumerate() {
        let base = rec.id.clone().unwrap_or_else(|| {
            if multi {
                format!("{stem}-{r}")
            } else {
                stem.clone()
            }
        });
        if rec.options.len() != rec.questions.len() {
            return Err(Error::data(
                path,
                format!(
                    "{} questions but {} option lists",
                    rec.questions.len(),
                    rec.options.len()
                ),
            ));
        }
        if let Some(answers) = &rec.answers {
            if answers.len() != rec.questions.len() {
                return Err(Error::data(
                    path,
                    format!(
                        "{} questions but {} answers",
                        rec.questions.len(),
                        answers.len()
                    ),
                ));
            }
        }
        for (q, (question, opts)) in rec.questions.iter().zip(&rec.options).enumerate() {
            if opts.len() != options {
                return Err(Error::data(
                    path,
                    format!(
                        "question {q} has {} options, expected {options}",
                        opts.len()
                    ),
                ));
            }
            let answer = match &rec.answers {
                Some(a) => Some(parse_answer(&a[q], options, path)?),
                None => None,
            };
            out.push(RawExample {
                source: path.to_path_buf(),
                id: base.clone(),
                question_index: q,
                article: rec.article.clone(),
                question: question.clone(),
                options: opts.clone(),
                answer,
            });
        }
    }
    Ok(out)
}

/// Parses one file; any structural problem is a data error naming it.
pub fn load_race_file(path: &Path, options: usize) -> Result<Vec<RawExample>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parsed: RaceFile = serde_json::from_str(&text)
        .map_err(|e| Error::data(path, format!("malformed JSON: {e}")))?;
    let records = match parsed {
        RaceFile::One(r) => vec![r],
        RaceFile::Many(rs) => rs,
    };
    records_to_examples(records, options, path)
}

/// Result of loading a directory: parsed examples plus the files that
/// were skipped and why.
#[derive(Debug, Default)]
pub struct RaceLoad {
    pub examples: Vec<RawExample>,
    pub skipped: Vec<Error>,
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else if matches!(
            path.extension().and_then(|e| e.to_str()),
            Some("json") | Some("txt")
        ) {
            out.push(path);
        }
    }
    Ok(())
}

/// Loads every `.json`/`.txt` file under `path` (or `path` itself if it
/// is a file) in sorted order. Malformed files are logged and skipped.
pub fn load_race_dir(path: &Path, options: usize) -> Result<RaceLoad> {
    let meta = fs::metadata(path).map_err(|e| Error::io(path, e))?;
    let mut files = Vec::new();
    if meta.is_dir() {
        collect_files(path, &mut files)?;
        files.sort();
    } else {
        files.push(path.to_path_buf());
    }
    let mut load = RaceLoad::default();
    for file in files {
        match load_race_file(&file, options) {
            Ok(mut ex) => load.examples.append(&mut ex),
            Err(e) => {
                log::warn!("skipping {}: {e}", file.display());
                load.skipped.push(e);
            }
        }
    }
    Ok(load)
}

/// Writes examples as a JSON array of single-question records.
pub fn write_examples(
    path: &Path,
    examples: &[Example],
    vocab: &Vocabulary,
    prefix: &str,
) -> Result<()> {
    let records: Vec<RaceRecord> = examples
        .iter()
        .enumerate()
        .map(|(i, ex)| RaceRecord {
            id: Some(format!("{prefix}-{i}")),
            article: vocab.detokenize(&ex.article),
            questions: vec![vocab.detokenize(&ex.question)],
            options: vec![ex.options.iter().map(|o| vocab.detokenize(o)).collect()],
            answers: Some(vec![answer_letter(ex.answer).to_string()]),
        })
        .collect();
    let mut bytes = serde_json::to_vec_pretty(&records)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
