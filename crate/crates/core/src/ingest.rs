//! Corpus loading, article filtering and month indexing.
//!
//! Input is a metadata CSV (`id`, `title`, `publish_time`, optional `source`)
//! and a JSON-lines bodies file (`id`, `body_text`). Several body lines for the
//! same id are joined in file order with a blank line between them.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::langdetect;

/// Minimum detector confidence for an article to count as English.
pub const ENGLISH_CONFIDENCE: f64 = 0.5;

pub const DROP_MISSING_BODY: &str = "missing_body";
pub const DROP_TOO_SHORT: &str = "too_short";
pub const DROP_OUT_OF_WINDOW: &str = "out_of_window";
pub const DROP_NOT_ENGLISH: &str = "not_english";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("{path}: missing required column `{column}`")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}:{line}: duplicate article id `{id}`")]
    DuplicateId { path: PathBuf, line: u64, id: String },
    #[error("invalid month `{0}` (expected YYYY-MM or YYYY-MM-DD)")]
    InvalidMonth(String),
    #[error("record {index} ({id}) has month {month} outside the index span {start}..={end}")]
    MonthOutOfSpan {
        index: usize,
        id: String,
        month: YearMonth,
        start: YearMonth,
        end: YearMonth,
    },
}

/// A calendar month. Day precision is discarded on parse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct YearMonth {
    year: i32,
    month: u32,
}

impl YearMonth {
    pub fn new(year: i32, month: u32) -> Option<Self> {
        (1..=12).contains(&month).then_some(Self { year, month })
    }

    pub fn year(self) -> i32 {
        self.year
    }

    pub fn month(self) -> u32 {
        self.month
    }

    pub fn succ(self) -> Self {
        if self.month == 12 {
            Self { year: self.year + 1, month: 1 }
        } else {
            Self { year: self.year, month: self.month + 1 }
        }
    }

    /// Inclusive month range `start..=end`; empty when `start > end`.
    pub fn range_inclusive(start: Self, end: Self) -> Vec<Self> {
        let mut out = Vec::new();
        let mut cur = start;
        while cur <= end {
            out.push(cur);
            cur = cur.succ();
        }
        out
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for YearMonth {
    type Err = IngestError;

    /// Accepts `YYYY-MM`, `YYYY-MM-DD`, and full timestamps starting with a
    /// `YYYY-MM-DD` date.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || IngestError::InvalidMonth(s.to_string());
        let s = s.trim();
        if s.len() == 7 {
            let (y, m) = s.split_once('-').ok_or_else(bad)?;
            if y.len() != 4 || m.len() != 2 {
                return Err(bad());
            }
            let year = y.parse::<i32>().map_err(|_| bad())?;
            let month = m.parse::<u32>().map_err(|_| bad())?;
            return YearMonth::new(year, month).ok_or_else(bad);
        }
        let date_part = s.get(..10).ok_or_else(bad)?;
        let date = chrono::NaiveDate::parse_from_str(date_part, "%Y-%m-%d").map_err(|_| bad())?;
        if s.len() > 10 && !s[10..].starts_with(['T', ' ']) {
            return Err(bad());
        }
        use chrono::Datelike;
        YearMonth::new(date.year(), date.month()).ok_or_else(bad)
    }
}

impl Serialize for YearMonth {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for YearMonth {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawArticle {
    pub id: String,
    pub title: String,
    pub body_text: String,
    pub publish_month: YearMonth,
    pub source: Option<String>,
}

/// An article that passed filtering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArticleRecord {
    pub id: String,
    pub month: YearMonth,
    pub body_text: String,
    pub word_count: usize,
}

impl From<ArticleRecord> for RawArticle {
    fn from(r: ArticleRecord) -> Self {
        RawArticle {
            id: r.id,
            title: String::new(),
            body_text: r.body_text,
            publish_month: r.month,
            source: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedCorpus {
    pub articles: Vec<RawArticle>,
    /// Metadata rows without any nonblank body text.
    pub missing_body: usize,
}

#[derive(Deserialize)]
struct BodyLine {
    id: String,
    body_text: String,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io { path: path.to_path_buf(), source }
}

/// Reads the metadata CSV and bodies file into articles, in metadata order.
pub fn load_corpus(metadata_path: &Path, bodies_path: &Path) -> Result<LoadedCorpus, IngestError> {
    let bodies = load_bodies(bodies_path)?;

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(metadata_path)
        .map_err(|e| csv_error(metadata_path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(metadata_path, e))?.clone();
    let column = |name: &str| headers.iter().position(|h| h.trim() == name);
    let required = |name: &str| {
        column(name).ok_or_else(|| IngestError::MissingColumn {
            path: metadata_path.to_path_buf(),
            column: name.to_string(),
        })
    };
    let id_col = required("id")?;
    let title_col = required("title")?;
    let time_col = required("publish_time")?;
    let source_col = column("source");

    let mut seen = HashSet::new();
    let mut articles = Vec::new();
    let mut missing_body = 0;
    for row in reader.records() {
        let row = row.map_err(|e| csv_error(metadata_path, e))?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let malformed = |message: String| IngestError::Malformed {
            path: metadata_path.to_path_buf(),
            line,
            message,
        };
        let id = row.get(id_col).unwrap_or("").trim().to_string();
        if id.is_empty() {
            return Err(malformed("empty id".into()));
        }
        if !seen.insert(id.clone()) {
            return Err(IngestError::DuplicateId { path: metadata_path.to_path_buf(), line, id });
        }
        let publish_month = row
            .get(time_col)
            .unwrap_or("")
            .parse::<YearMonth>()
            .map_err(|e| malformed(e.to_string()))?;
        let body_text = match bodies.get(&id) {
            Some(b) if !b.trim().is_empty() => b.clone(),
            _ => {
                missing_body += 1;
                continue;
            }
        };
        let source = source_col
            .and_then(|c| row.get(c))
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string);
        articles.push(RawArticle {
            id,
            title: row.get(title_col).unwrap_or("").to_string(),
            body_text,
            publish_month,
            source,
        });
    }
    Ok(LoadedCorpus { articles, missing_body })
}

fn csv_error(path: &Path, e: csv::Error) -> IngestError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => IngestError::Io { path: path.to_path_buf(), source },
        other => IngestError::Malformed {
            path: path.to_path_buf(),
            line,
            message: format!("{other:?}"),
        },
    }
}

fn load_bodies(path: &Path) -> Result<HashMap<String, String>, IngestError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut bodies: HashMap<String, String> = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: BodyLine = serde_json::from_str(&line).map_err(|e| IngestError::Malformed {
            path: path.to_path_buf(),
            line: i as u64 + 1,
            message: e.to_string(),
        })?;
        let entry = bodies.entry(parsed.id).or_default();
        if !entry.is_empty() && !parsed.body_text.is_empty() {
            entry.push_str("\n\n");
        }
        entry.push_str(&parsed.body_text);
    }
    Ok(bodies)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub min_words: usize,
    pub window_start: YearMonth,
    pub window_end: YearMonth,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_words: 50,
            window_start: YearMonth::new(2020, 5).unwrap(),
            window_end: YearMonth::new(2022, 5).unwrap(),
        }
    }
}

/// Drop reason → count. Serialized as a flat JSON object.
pub type DropReport = BTreeMap<String, usize>;

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub records: Vec<ArticleRecord>,
    pub drops: DropReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Verdict {
    Keep(usize),
    Drop(&'static str),
}

fn judge(article: &RawArticle, config: &FilterConfig) -> Verdict {
    let words = article.body_text.split_whitespace().count();
    if words == 0 || words < config.min_words {
        return Verdict::Drop(DROP_TOO_SHORT);
    }
    let month = article.publish_month;
    if month < config.window_start || month > config.window_end {
        return Verdict::Drop(DROP_OUT_OF_WINDOW);
    }
    let (lang, confidence) = langdetect::detect_language(&article.body_text);
    if lang != "en" || confidence < ENGLISH_CONFIDENCE {
        return Verdict::Drop(DROP_NOT_ENGLISH);
    }
    Verdict::Keep(words)
}

/// Keeps articles with at least `min_words` whitespace tokens, published
/// inside the window, and detected as English. Drop counts are keyed by the
/// first failing rule (length, then window, then language).
pub fn filter_articles(articles: &[RawArticle], config: &FilterConfig) -> FilterOutcome {
    assert!(config.min_words >= 1, "min_words must be at least 1");
    let verdicts: Vec<Verdict> = articles.par_iter().map(|a| judge(a, config)).collect();
    let mut drops = DropReport::new();
    for reason in [DROP_TOO_SHORT, DROP_OUT_OF_WINDOW, DROP_NOT_ENGLISH] {
        drops.insert(reason.to_string(), 0);
    }
    let mut records = Vec::new();
    for (article, verdict) in articles.iter().zip(verdicts) {
        match verdict {
            Verdict::Keep(word_count) => records.push(ArticleRecord {
                id: article.id.clone(),
                month: article.publish_month,
                body_text: article.body_text.clone(),
                word_count,
            }),
            Verdict::Drop(reason) => *drops.get_mut(reason).unwrap() += 1,
        }
    }
    FilterOutcome { records, drops }
}

/// Article positions grouped by publication month over a continuous month axis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonthIndex {
    pub months: Vec<YearMonth>,
    /// `groups[k]` holds the record positions published in `months[k]`.
    pub groups: Vec<Vec<usize>>,
}

impl MonthIndex {
    pub fn count(&self, k: usize) -> usize {
        self.groups[k].len()
    }

    pub fn total(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    pub fn len(&self) -> usize {
        self.months.len()
    }

    /// Index over bare month assignments, one per document position.
    pub fn from_months(assignments: &[YearMonth], start: YearMonth, end: YearMonth) -> Result<Self, IngestError> {
        let months = YearMonth::range_inclusive(start, end);
        let mut groups = vec![Vec::new(); months.len()];
        for (index, &month) in assignments.iter().enumerate() {
            if month < start || month > end {
                return Err(IngestError::MonthOutOfSpan { index, id: format!("#{index}"), month, start, end });
            }
            let k = months.partition_point(|m| *m < month);
            groups[k].push(index);
        }
        Ok(Self { months, groups })
    }

    pub fn is_empty(&self) -> bool {
        self.months.is_empty()
    }
}

/// Groups records by month, spanning every month from the earliest to the
/// latest record. Months with no records are present with an empty group.
pub fn partition_by_month(records: &[ArticleRecord]) -> MonthIndex {
    let (Some(start), Some(end)) = (
        records.iter().map(|r| r.month).min(),
        records.iter().map(|r| r.month).max(),
    ) else {
        return MonthIndex { months: Vec::new(), groups: Vec::new() };
    };
    partition_by_month_within(records, start, end).expect("span covers every record")
}

/// Like [`partition_by_month`] but over a fixed `start..=end` axis.
pub fn partition_by_month_within(
    records: &[ArticleRecord],
    start: YearMonth,
    end: YearMonth,
) -> Result<MonthIndex, IngestError> {
    let months = YearMonth::range_inclusive(start, end);
    let slot: HashMap<YearMonth, usize> = months.iter().enumerate().map(|(i, m)| (*m, i)).collect();
    let mut groups = vec![Vec::new(); months.len()];
    for (index, record) in records.iter().enumerate() {
        let k = *slot.get(&record.month).ok_or_else(|| IngestError::MonthOutOfSpan {
            index,
            id: record.id.clone(),
            month: record.month,
            start,
            end,
        })?;
        groups[k].push(index);
    }
    Ok(MonthIndex { months, groups })
}
