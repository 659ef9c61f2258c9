//! Vocabulary filtering and the tf-idf document-term matrix.
//!
//! Weights are `tf(d, w) * idf(w)` with raw-count `tf` and smoothed
//! `idf(w) = ln((1 + m) / (1 + df(w))) + 1`; each document row is then scaled
//! to unit L2 norm. Vocabulary indices follow lexicographic term order.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binfmt;
use crate::preprocess::TokenStream;
use crate::sparse::{CsrMatrix, SparseError};

pub const DEFAULT_MAX_DF: f64 = 0.70;
pub const DEFAULT_MAX_TERMS: usize = 500_000;
/// Fraction of documents used for the default minimum document count.
pub const DEFAULT_MIN_DF_FRACTION: f64 = 0.0038;

const MATRIX_MAGIC: &[u8; 4] = b"TTDM";
const MATRIX_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("vocabulary empty after filtering")]
    EmptyVocabulary,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("total term count is zero")]
    ZeroTotal,
    #[error("tf-idf mass has {got} entries for a vocabulary of {expected}")]
    MassLength { got: usize, expected: usize },
    #[error(transparent)]
    Sparse(#[from] SparseError),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("sidecar error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid matrix container: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabularyEntry {
    pub term: String,
    pub doc_freq: u64,
    pub corpus_freq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyData", into = "VocabularyData")]
pub struct Vocabulary {
    entries: Vec<VocabularyEntry>,
    index: HashMap<String, usize>,
    n_docs: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabularyData {
    n_docs: usize,
    terms: Vec<VocabularyEntry>,
}

impl TryFrom<VocabularyData> for Vocabulary {
    type Error = String;

    fn try_from(data: VocabularyData) -> Result<Self, String> {
        let n_docs = data.n_docs;
        Vocabulary::from_entries(data.entries_sorted()?, n_docs).map_err(|e| e.to_string())
    }
}

impl VocabularyData {
    fn entries_sorted(self) -> Result<Vec<VocabularyEntry>, String> {
        if self.terms.windows(2).any(|w| w[0].term >= w[1].term) {
            return Err("vocabulary terms must be unique and sorted".into());
        }
        Ok(self.terms)
    }
}

impl From<Vocabulary> for VocabularyData {
    fn from(v: Vocabulary) -> Self {
        VocabularyData { n_docs: v.n_docs, terms: v.entries }
    }
}

impl Vocabulary {
    /// Entries are re-sorted lexicographically; indices follow that order.
    pub fn from_entries(mut entries: Vec<VocabularyEntry>, n_docs: usize) -> Result<Self, FeatureError> {
        entries.sort_by(|a, b| a.term.cmp(&b.term));
        for e in &entries {
            if e.doc_freq as usize > n_docs || e.corpus_freq < e.doc_freq {
                return Err(FeatureError::InvalidParameter(format!(
                    "term `{}`: doc_freq {} / corpus_freq {} inconsistent with {} documents",
                    e.term, e.doc_freq, e.corpus_freq, n_docs
                )));
            }
        }
        let index: HashMap<String, usize> = entries.iter().enumerate().map(|(i, e)| (e.term.clone(), i)).collect();
        if index.len() != entries.len() {
            return Err(FeatureError::InvalidParameter("duplicate vocabulary term".into()));
        }
        Ok(Self { entries, index, n_docs })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn term(&self, i: usize) -> &str {
        &self.entries[i].term
    }

    pub fn terms(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.term.clone()).collect()
    }

    pub fn entries(&self) -> &[VocabularyEntry] {
        &self.entries
    }

    pub fn doc_freq(&self, i: usize) -> u64 {
        self.entries[i].doc_freq
    }

    pub fn corpus_freq(&self, i: usize) -> u64 {
        self.entries[i].corpus_freq
    }

    /// Sum of corpus frequencies over the retained terms.
    pub fn total_tokens(&self) -> u64 {
        self.entries.iter().map(|e| e.corpus_freq).sum()
    }

    /// Writes the vocabulary report: `term,index,doc_freq,corpus_freq`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), FeatureError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["term", "index", "doc_freq", "corpus_freq"])?;
        for (i, e) in self.entries.iter().enumerate() {
            w.write_record([e.term.clone(), i.to_string(), e.doc_freq.to_string(), e.corpus_freq.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `max(2, ceil(0.0038 * m))`.
pub fn default_min_doc_count(n_docs: usize) -> u64 {
    ((DEFAULT_MIN_DF_FRACTION * n_docs as f64).ceil() as u64).max(2)
}

/// Largest document frequency allowed by `max_df_fraction` over `n_docs`.
pub fn max_doc_count(max_df_fraction: f64, n_docs: usize) -> u64 {
    // the epsilon absorbs representation error such as 0.7 * 10 = 6.999...
    (max_df_fraction * n_docs as f64 + 1e-9).floor() as u64
}

type TermCounts<'a> = HashMap<&'a str, (u64, u64)>;

fn count_terms(corpus: &[TokenStream]) -> TermCounts<'_> {
    corpus
        .par_chunks(256)
        .map(|shard| {
            let mut counts: TermCounts = HashMap::new();
            for doc in shard {
                let mut local: HashMap<&str, u64> = HashMap::new();
                for t in &doc.tokens {
                    *local.entry(t.as_str()).or_insert(0) += 1;
                }
                for (t, c) in local {
                    let e = counts.entry(t).or_insert((0, 0));
                    e.0 += 1;
                    e.1 += c;
                }
            }
            counts
        })
        .reduce(HashMap::new, |mut a, b| {
            for (t, (df, cf)) in b {
                let e = a.entry(t).or_insert((0, 0));
                e.0 += df;
                e.1 += cf;
            }
            a
        })
}

/// Keeps terms whose document frequency is at most `⌊max_df_fraction·m⌋` and
/// at least `min_doc_count`.
pub fn build_vocabulary(
    corpus: &[TokenStream],
    max_df_fraction: f64,
    min_doc_count: u64,
) -> Result<Vocabulary, FeatureError> {
    if !(max_df_fraction > 0.0 && max_df_fraction <= 1.0) {
        return Err(FeatureError::InvalidParameter(format!("max_df_fraction {max_df_fraction} outside (0, 1]")));
    }
    if min_doc_count < 1 {
        return Err(FeatureError::InvalidParameter("min_doc_count must be at least 1".into()));
    }
    if corpus.is_empty() {
        return Err(FeatureError::EmptyCorpus);
    }
    let m = corpus.len();
    let upper = max_doc_count(max_df_fraction, m);
    let entries: Vec<VocabularyEntry> = count_terms(corpus)
        .into_iter()
        .filter(|(_, (df, _))| *df <= upper && *df >= min_doc_count)
        .map(|(t, (df, cf))| VocabularyEntry { term: t.to_string(), doc_freq: df, corpus_freq: cf })
        .collect();
    if entries.is_empty() {
        return Err(FeatureError::EmptyVocabulary);
    }
    Vocabulary::from_entries(entries, m)
}

/// Keeps the `max_terms` terms with the largest aggregate tf-idf mass (ties go
/// to the lexicographically smaller term) and reindexes them.
pub fn select_top_terms(vocab: &Vocabulary, tfidf_mass: &[f64], max_terms: usize) -> Result<Vocabulary, FeatureError> {
    if max_terms < 1 {
        return Err(FeatureError::InvalidParameter("max_terms must be at least 1".into()));
    }
    if tfidf_mass.len() != vocab.len() {
        return Err(FeatureError::MassLength { got: tfidf_mass.len(), expected: vocab.len() });
    }
    if vocab.len() <= max_terms {
        return Ok(vocab.clone());
    }
    let mut order: Vec<usize> = (0..vocab.len()).collect();
    order.sort_by(|&a, &b| tfidf_mass[b].total_cmp(&tfidf_mass[a]).then_with(|| vocab.term(a).cmp(vocab.term(b))));
    let kept = order[..max_terms].iter().map(|&i| vocab.entries[i].clone()).collect();
    Vocabulary::from_entries(kept, vocab.n_docs)
}

/// `ln((1 + m) / (1 + df)) + 1`.
pub fn idf(n_docs: usize, doc_freq: u64) -> f64 {
    ((1.0 + n_docs as f64) / (1.0 + doc_freq as f64)).ln() + 1.0
}

/// A tf-idf matrix bound to its vocabulary and document ids.
#[derive(Debug, Clone, PartialEq)]
pub struct DocTermMatrix {
    pub matrix: CsrMatrix,
    pub doc_ids: Vec<String>,
    pub vocabulary: Vocabulary,
}

pub fn compute_tfidf(corpus: &[TokenStream], vocab: &Vocabulary) -> Result<DocTermMatrix, FeatureError> {
    let m = corpus.len();
    let idfs: Vec<f64> = (0..vocab.len()).map(|i| idf(m, vocab.doc_freq(i))).collect();
    let rows: Vec<Vec<(usize, f64)>> = corpus
        .par_iter()
        .map(|doc| {
            let mut counts: HashMap<usize, u64> = HashMap::new();
            for t in &doc.tokens {
                if let Some(i) = vocab.index_of(t) {
                    *counts.entry(i).or_insert(0) += 1;
                }
            }
            let mut row: Vec<(usize, f64)> = counts.into_iter().map(|(i, c)| (i, c as f64 * idfs[i])).collect();
            row.sort_by_key(|e| e.0);
            let norm = row.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
            if norm > 0.0 {
                for e in &mut row {
                    e.1 /= norm;
                }
            }
            row
        })
        .collect();
    let matrix = CsrMatrix::from_rows(vocab.len(), &rows)?;
    Ok(DocTermMatrix {
        matrix,
        doc_ids: corpus.iter().map(|d| d.article_id.clone()).collect(),
        vocabulary: vocab.clone(),
    })
}

/// Per-term tf-idf mass: the column sums of the weighted matrix.
pub fn tfidf_mass(dtm: &DocTermMatrix) -> Vec<f64> {
    dtm.matrix.column_sums()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VocabularyParams {
    pub max_df_fraction: f64,
    /// `None` selects [`default_min_doc_count`].
    pub min_doc_count: Option<u64>,
    pub max_terms: usize,
}

impl Default for VocabularyParams {
    fn default() -> Self {
        Self { max_df_fraction: DEFAULT_MAX_DF, min_doc_count: None, max_terms: DEFAULT_MAX_TERMS }
    }
}

/// Vocabulary filtering, top-term selection by tf-idf mass, and the final
/// matrix over the selected terms.
pub fn featurize(corpus: &[TokenStream], params: &VocabularyParams) -> Result<DocTermMatrix, FeatureError> {
    let min_df = params.min_doc_count.unwrap_or_else(|| default_min_doc_count(corpus.len()));
    let vocab = build_vocabulary(corpus, params.max_df_fraction, min_df)?;
    let full = compute_tfidf(corpus, &vocab)?;
    if vocab.len() <= params.max_terms {
        return Ok(full);
    }
    let selected = select_top_terms(&vocab, &tfidf_mass(&full), params.max_terms)?;
    compute_tfidf(corpus, &selected)
}

/// `p(w)`: corpus frequency over the total of the retained vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermProbabilities(pub Vec<f64>);

impl TermProbabilities {
    pub fn get(&self, i: usize) -> f64 {
        self.0[i]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn term_probabilities(vocab: &Vocabulary) -> Result<TermProbabilities, FeatureError> {
    let total = vocab.total_tokens();
    if total == 0 {
        return Err(FeatureError::ZeroTotal);
    }
    Ok(TermProbabilities(vocab.entries.iter().map(|e| e.corpus_freq as f64 / total as f64).collect()))
}

#[derive(Serialize, Deserialize)]
struct MatrixSidecar {
    format_version: u32,
    doc_ids: Vec<String>,
    vocabulary: Vocabulary,
}

/// Binary container: magic `TTDM`, u32 version, u64 m, n, nnz, then m+1 u64
/// row offsets, nnz u64 column indices and nnz f64 weights, all little endian.
pub fn write_matrix<W: Write>(writer: W, x: &CsrMatrix) -> io::Result<()> {
    let mut w = BufWriter::new(writer);
    w.write_all(MATRIX_MAGIC)?;
    binfmt::write_u32(&mut w, MATRIX_VERSION)?;
    binfmt::write_u64(&mut w, x.nrows() as u64)?;
    binfmt::write_u64(&mut w, x.ncols() as u64)?;
    binfmt::write_u64(&mut w, x.nnz() as u64)?;
    for &p in x.indptr() {
        binfmt::write_u64(&mut w, p as u64)?;
    }
    for &c in x.indices() {
        binfmt::write_u64(&mut w, c as u64)?;
    }
    binfmt::write_f64s(&mut w, x.values())?;
    w.flush()
}

pub fn read_matrix<R: Read>(reader: R) -> Result<CsrMatrix, FeatureError> {
    let mut r = BufReader::new(reader);
    if &binfmt::read_exact::<4, _>(&mut r)? != MATRIX_MAGIC {
        return Err(FeatureError::Format("bad magic".into()));
    }
    let version = binfmt::read_u32(&mut r)?;
    if version != MATRIX_VERSION {
        return Err(FeatureError::Format(format!("unsupported version {version}")));
    }
    let m = binfmt::read_len(&mut r)?;
    let n = binfmt::read_len(&mut r)?;
    let nnz = binfmt::read_len(&mut r)?;
    let mut indptr = Vec::with_capacity(m + 1);
    for _ in 0..=m {
        indptr.push(binfmt::read_len(&mut r)?);
    }
    let mut indices = Vec::with_capacity(nnz);
    for _ in 0..nnz {
        indices.push(binfmt::read_len(&mut r)?);
    }
    let values = binfmt::read_f64s(&mut r, nnz)?;
    binfmt::expect_eof(&mut r)?;
    Ok(CsrMatrix::try_new(m, n, indptr, indices, values)?)
}

impl DocTermMatrix {
    pub fn save(&self, matrix_path: &Path, sidecar_path: &Path) -> Result<(), FeatureError> {
        write_matrix(File::create(matrix_path)?, &self.matrix)?;
        let sidecar = MatrixSidecar {
            format_version: MATRIX_VERSION,
            doc_ids: self.doc_ids.clone(),
            vocabulary: self.vocabulary.clone(),
        };
        let mut w = BufWriter::new(File::create(sidecar_path)?);
        serde_json::to_writer_pretty(&mut w, &sidecar)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn load(matrix_path: &Path, sidecar_path: &Path) -> Result<Self, FeatureError> {
        let matrix = read_matrix(File::open(matrix_path)?)?;
        let sidecar: MatrixSidecar = serde_json::from_reader(BufReader::new(File::open(sidecar_path)?))?;
        if sidecar.doc_ids.len() != matrix.nrows() || sidecar.vocabulary.len() != matrix.ncols() {
            return Err(FeatureError::Format(format!(
                "sidecar binds {} documents and {} terms to a {}x{} matrix",
                sidecar.doc_ids.len(),
                sidecar.vocabulary.len(),
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(Self { matrix, doc_ids: sidecar.doc_ids, vocabulary: sidecar.vocabulary })
    }
}
