//! Article body cleaning and phrase merging.
//!
//! [`run_pipeline`] applies, in order: contraction expansion, tokenization
//! and normalization, stopword removal, lemmatization and n-gram merging.
//! [`clean_tokens`] stops before the merge, which is what n-gram mining
//! consumes.

mod ngrams;
mod text;

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::ArticleRecord;

pub use ngrams::{merge_ngrams, mine_ngrams, write_candidates_csv, NgramAcceptList, NgramCandidate, JOINER, MAX_N, MIN_N};
pub use text::{expand_contractions, lemma, lemmatize, tokenize_and_normalize};

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("n-gram length {0} outside 2..=6")]
    InvalidN(usize),
    #[error("accept list line {line}: {message}")]
    InvalidPhrase { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenStream {
    pub article_id: String,
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StopwordSource {
    Builtin,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StopwordList {
    words: HashSet<String>,
    source: StopwordSource,
}

impl StopwordList {
    /// The bundled English list with scientific-writing boilerplate.
    pub fn builtin() -> Self {
        Self { words: parse_word_list(include_str!("../../data/stopwords.txt")), source: StopwordSource::Builtin }
    }

    /// Parses the stopword file format: one word per line, `#` comments.
    pub fn parse(text: &str) -> Self {
        Self { words: parse_word_list(text), source: StopwordSource::Custom }
    }

    pub fn from_path(path: &Path) -> Result<Self, PreprocessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| PreprocessError::Io { path: path.to_path_buf(), source })?;
        Ok(Self::parse(&text))
    }

    pub fn from_words<I: IntoIterator<Item = S>, S: AsRef<str>>(words: I) -> Self {
        Self {
            words: words.into_iter().map(|w| w.as_ref().trim().to_lowercase()).filter(|w| !w.is_empty()).collect(),
            source: StopwordSource::Custom,
        }
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn source(&self) -> StopwordSource {
        self.source
    }
}

fn parse_word_list(text: &str) -> HashSet<String> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim().to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

/// Order-preserving removal of exact stopword matches.
pub fn remove_stopwords(tokens: &[String], stopwords: &StopwordList) -> Vec<String> {
    tokens.iter().filter(|t| !stopwords.contains(t)).cloned().collect()
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub stopwords: StopwordList,
    pub accept: NgramAcceptList,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { stopwords: StopwordList::builtin(), accept: NgramAcceptList::new() }
    }
}

/// Stages one to four: expand, tokenize, drop stopwords, lemmatize.
///
/// A token whose lemma is itself a stopword keeps its surface form, so the
/// output never contains a stopword from the active list.
pub fn clean_tokens(text: &str, stopwords: &StopwordList) -> Vec<String> {
    let expanded = expand_contractions(text);
    let tokens = tokenize_and_normalize(&expanded);
    let kept = remove_stopwords(&tokens, stopwords);
    kept.into_iter()
        .map(|t| {
            let base = lemma(&t);
            if stopwords.contains(&base) {
                t
            } else {
                base
            }
        })
        .collect()
}

pub fn run_pipeline(record: &ArticleRecord, config: &PipelineConfig) -> TokenStream {
    let cleaned = clean_tokens(&record.body_text, &config.stopwords);
    TokenStream { article_id: record.id.clone(), tokens: merge_ngrams(&cleaned, &config.accept) }
}
