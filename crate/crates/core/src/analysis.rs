//! Relevance-ranked topic terms, per-document topic mixtures and monthly
//! topic trends.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dense::DenseMatrix;
use crate::features::TermProbabilities;
use crate::ingest::{MonthIndex, YearMonth};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("topic {0} has no weight on any term")]
    EmptyTopic(usize),
    #[error("term probability p(w) = {0} must be positive")]
    ZeroTermProbability(f64),
    #[error("lambda {0} outside [0, 1]")]
    InvalidLambda(f64),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("month index refers to document {index} but only {count} mixtures exist")]
    IndexOutOfRange { index: usize, count: usize },
    #[error("{labels} labels given for {topics} topics")]
    LabelCount { labels: usize, topics: usize },
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// `p(w|t)`: each row of H scaled to sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicTermDistribution(DenseMatrix);

impl TopicTermDistribution {
    pub fn matrix(&self) -> &DenseMatrix {
        &self.0
    }

    pub fn k(&self) -> usize {
        self.0.rows()
    }

    pub fn n_terms(&self) -> usize {
        self.0.cols()
    }
}

pub fn topic_term_distribution(h: &DenseMatrix) -> Result<TopicTermDistribution, AnalysisError> {
    let mut out = h.clone();
    for t in 0..out.rows() {
        let sum: f64 = out.row(t).iter().sum();
        if !(sum > 0.0) {
            return Err(AnalysisError::EmptyTopic(t));
        }
        out.row_mut(t).iter_mut().for_each(|v| *v /= sum);
    }
    Ok(TopicTermDistribution(out))
}

/// `λ·p(w|t) + (1 − λ)·p(w|t)/p(w)`.
pub fn relevance(p_wt: f64, p_w: f64, lambda: f64) -> Result<f64, AnalysisError> {
    if !(p_w > 0.0) {
        return Err(AnalysisError::ZeroTermProbability(p_w));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(AnalysisError::InvalidLambda(lambda));
    }
    Ok(lambda * p_wt + (1.0 - lambda) * p_wt / p_w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedTerm {
    pub term: String,
    pub relevance: f64,
    pub p_wt: f64,
    pub lift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceTable {
    pub lambda: f64,
    pub topics: Vec<Vec<RankedTerm>>,
}

/// The `top_m` terms of every topic by relevance, ties in lexicographic order.
pub fn rank_terms_by_relevance(
    dist: &TopicTermDistribution,
    p: &TermProbabilities,
    terms: &[String],
    lambda: f64,
    top_m: usize,
) -> Result<RelevanceTable, AnalysisError> {
    if p.len() != dist.n_terms() || terms.len() != dist.n_terms() {
        return Err(AnalysisError::ShapeMismatch(format!(
            "{} topic-term columns, {} term probabilities, {} terms",
            dist.n_terms(),
            p.len(),
            terms.len()
        )));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(AnalysisError::InvalidLambda(lambda));
    }
    let topics = (0..dist.k())
        .map(|t| {
            let row = dist.matrix().row(t);
            let mut scored: Vec<RankedTerm> = (0..terms.len())
                .filter(|&w| p.get(w) > 0.0)
                .map(|w| RankedTerm {
                    term: terms[w].clone(),
                    relevance: lambda * row[w] + (1.0 - lambda) * row[w] / p.get(w),
                    p_wt: row[w],
                    lift: row[w] / p.get(w),
                })
                .collect();
            scored.sort_by(|a, b| b.relevance.total_cmp(&a.relevance).then_with(|| a.term.cmp(&b.term)));
            scored.truncate(top_m);
            scored
        })
        .collect();
    Ok(RelevanceTable { lambda, topics })
}

/// `topic,rank,term,relevance,p_wt,lift` with 1-based topic and rank.
pub fn write_relevance_csv<W: Write>(writer: W, table: &RelevanceTable) -> Result<(), AnalysisError> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["topic", "rank", "term", "relevance", "p_wt", "lift"])?;
    for (t, ranked) in table.topics.iter().enumerate() {
        for (r, term) in ranked.iter().enumerate() {
            out.write_record([
                (t + 1).to_string(),
                (r + 1).to_string(),
                term.term.clone(),
                term.relevance.to_string(),
                term.p_wt.to_string(),
                term.lift.to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Per-document topic shares. Documents with an all-zero W row carry `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicMixture {
    pub k: usize,
    pub rows: Vec<Option<Vec<f64>>>,
}

impl TopicMixture {
    pub fn flagged(&self) -> usize {
        self.rows.iter().filter(|r| r.is_none()).count()
    }
}

pub fn document_mixtures(w: &DenseMatrix) -> TopicMixture {
    let rows = (0..w.rows())
        .map(|i| {
            let row = w.row(i);
            let sum: f64 = row.iter().sum();
            (sum > 0.0).then(|| row.iter().map(|v| v / sum).collect())
        })
        .collect();
    TopicMixture { k: w.cols(), rows }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendSeries {
    pub months: Vec<YearMonth>,
    /// Average mixture per month; `None` when no unflagged document falls in it.
    pub shares: Vec<Option<Vec<f64>>>,
    /// Unflagged documents per month.
    pub counts: Vec<usize>,
}

impl TrendSeries {
    pub fn k(&self) -> usize {
        self.shares.iter().flatten().map(Vec::len).next().unwrap_or(0)
    }
}

/// Average topic mixture per month over the documents the month index lists,
/// skipping flagged documents.
pub fn monthly_trends(mixtures: &TopicMixture, months: &MonthIndex) -> Result<TrendSeries, AnalysisError> {
    let count = mixtures.rows.len();
    if months.total() != count {
        return Err(AnalysisError::ShapeMismatch(format!(
            "month index covers {} documents, {} mixtures given",
            months.total(),
            count
        )));
    }
    let mut shares = Vec::with_capacity(months.len());
    let mut counts = Vec::with_capacity(months.len());
    for group in &months.groups {
        let mut sum = vec![0.0; mixtures.k];
        let mut n = 0usize;
        for &doc in group {
            let row = mixtures.rows.get(doc).ok_or(AnalysisError::IndexOutOfRange { index: doc, count })?;
            if let Some(row) = row {
                for (s, v) in sum.iter_mut().zip(row) {
                    *s += v;
                }
                n += 1;
            }
        }
        counts.push(n);
        shares.push((n > 0).then(|| sum.into_iter().map(|s| s / n as f64).collect()));
    }
    Ok(TrendSeries { months: months.months.clone(), shares, counts })
}

pub fn default_labels(k: usize) -> Vec<String> {
    (1..=k).map(|t| format!("topic_{t:02}")).collect()
}

/// Stacked-series layout for streamgraph tools.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedSeries {
    pub topics: Vec<String>,
    pub months: Vec<YearMonth>,
    /// `series[t][month]`, `None` where the month has no documents.
    pub series: Vec<Vec<Option<f64>>>,
    pub counts: Vec<usize>,
}

impl StackedSeries {
    pub fn from_trends(series: &TrendSeries, labels: &[String]) -> Self {
        let k = labels.len();
        Self {
            topics: labels.to_vec(),
            months: series.months.clone(),
            series: (0..k).map(|t| series.shares.iter().map(|s| s.as_ref().map(|v| v[t])).collect()).collect(),
            counts: series.counts.clone(),
        }
    }

    pub fn to_trends(&self) -> TrendSeries {
        let shares = (0..self.months.len())
            .map(|m| {
                let column: Option<Vec<f64>> = self.series.iter().map(|s| s[m]).collect();
                column
            })
            .collect();
        TrendSeries { months: self.months.clone(), shares, counts: self.counts.clone() }
    }
}

fn resolve_labels(series: &TrendSeries, labels: Option<&[String]>) -> Result<Vec<String>, AnalysisError> {
    let k = series.k();
    match labels {
        None => Ok(default_labels(k)),
        Some(l) if l.len() == k || k == 0 => Ok(l.to_vec()),
        Some(l) => Err(AnalysisError::LabelCount { labels: l.len(), topics: k }),
    }
}

/// Long-form `month,topic,share`; missing months get an empty share.
pub fn write_trend_csv<W: Write>(writer: W, series: &TrendSeries, labels: Option<&[String]>) -> Result<(), AnalysisError> {
    let labels = resolve_labels(series, labels)?;
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["month", "topic", "share"])?;
    for (month, shares) in series.months.iter().zip(&series.shares) {
        for (t, label) in labels.iter().enumerate() {
            let share = shares.as_ref().map(|s| s[t].to_string()).unwrap_or_default();
            out.write_record([month.to_string(), label.clone(), share])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_trend_json<W: Write>(writer: W, series: &TrendSeries, labels: Option<&[String]>) -> Result<(), AnalysisError> {
    let labels = resolve_labels(series, labels)?;
    let mut writer = writer;
    serde_json::to_writer_pretty(&mut writer, &StackedSeries::from_trends(series, &labels))?;
    writer.write_all(b"\n")?;
    Ok(())
}

/// Writes both trend files and returns the labels used.
pub fn export_trend_report<C: Write, J: Write>(
    csv_out: C,
    json_out: J,
    series: &TrendSeries,
    labels: Option<&[String]>,
) -> Result<Vec<String>, AnalysisError> {
    let resolved = resolve_labels(series, labels)?;
    write_trend_csv(csv_out, series, Some(&resolved))?;
    write_trend_json(json_out, series, Some(&resolved))?;
    Ok(resolved)
}
