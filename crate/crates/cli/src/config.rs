//! Pipeline configuration: one TOML file, overridable per key from the
//! command line. Precedence is flag, then file, then built-in default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use topictrend::features::{DEFAULT_MAX_DF, DEFAULT_MAX_TERMS};
use topictrend::ingest::{FilterConfig, YearMonth};
use topictrend::nmf::{InitStrategy, SolverConfig};
use topictrend::stability::SamplingRegime;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub metadata: Option<PathBuf>,
    pub bodies: Option<PathBuf>,
    /// Built-in list when unset.
    pub stopwords: Option<PathBuf>,
    /// No phrases are merged when unset.
    pub ngram_accept: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self { metadata: None, bodies: None, stopwords: None, ngram_accept: None, output_dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSection {
    pub min_words: usize,
    pub window_start: YearMonth,
    pub window_end: YearMonth,
}

impl Default for FilterSection {
    fn default() -> Self {
        let d = FilterConfig::default();
        Self { min_words: d.min_words, window_start: d.window_start, window_end: d.window_end }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NgramSection {
    pub min_frequency: u64,
    /// Longest phrase length mined.
    pub max_n: usize,
    /// Candidates kept per phrase length in the curation report.
    pub max_candidates: usize,
}

impl Default for NgramSection {
    fn default() -> Self {
        Self { min_frequency: 5, max_n: 4, max_candidates: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabularySection {
    pub max_df: f64,
    /// `max(2, ceil(0.0038 · documents))` when unset.
    pub min_doc_count: Option<u64>,
    pub max_terms: usize,
}

impl Default for VocabularySection {
    fn default() -> Self {
        Self { max_df: DEFAULT_MAX_DF, min_doc_count: None, max_terms: DEFAULT_MAX_TERMS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub k: usize,
    pub seed: u64,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub init: InitStrategy,
    /// 0 uses every available core. Never affects results.
    pub workers: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self { k: 20, seed: 42, tolerance: 1e-4, max_iterations: 200, init: InitStrategy::RandomUniform, workers: 0 }
    }
}

impl SolverSection {
    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            k: self.k,
            max_iterations: self.max_iterations,
            tolerance: self.tolerance,
            seed: self.seed,
            init: self.init,
            workers: self.workers,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilitySection {
    pub k_min: usize,
    pub k_max: usize,
    pub tau: usize,
    pub top_terms: usize,
    /// Fit each sample on this fraction of the documents instead of the full
    /// matrix. Unset keeps the initialization-only protocol.
    pub subsample: Option<f64>,
}

impl Default for StabilitySection {
    fn default() -> Self {
        Self { k_min: 2, k_max: 30, tau: 10, top_terms: 20, subsample: None }
    }
}

impl StabilitySection {
    pub fn sampling(&self) -> SamplingRegime {
        match self.subsample {
            Some(fraction) => SamplingRegime::Subsample { fraction },
            None => SamplingRegime::Initialization,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    pub lambda: f64,
    pub top_m: usize,
    /// One label per topic; `topic_01`, `topic_02`, … when empty.
    pub labels: Vec<String>,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self { lambda: 0.5, top_m: 10, labels: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub paths: Paths,
    pub filter: FilterSection,
    pub ngrams: NgramSection,
    pub vocabulary: VocabularySection,
    pub solver: SolverSection,
    pub stability: StabilitySection,
    pub analysis: AnalysisSection,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    /// `section.key=value` pairs; values are parsed as TOML, falling back to
    /// a plain string.
    pub set: Vec<String>,
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn apply_set(table: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--set expects section.key=value, got {assignment:?}")))?;
    let (section, field) = key
        .trim()
        .split_once('.')
        .ok_or_else(|| CliError::Config(format!("--set key {key:?} must be section.key")))?;
    let entry = table.entry(section.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
    let toml::Value::Table(inner) = entry else {
        return Err(CliError::Config(format!("[{section}] is not a table")));
    };
    inner.insert(field.to_string(), parse_value(value.trim()));
    Ok(())
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl Config {
    /// Reads `path` (or defaults when `None`), applies overrides, resolves
    /// relative paths against the config file's directory and validates.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self, CliError> {
        let (mut table, base) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?;
                let table: toml::Table = text
                    .parse()
                    .map_err(|e| CliError::Config(format!("invalid config {}: {e}", p.display())))?;
                let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
                (table, base)
            }
            None => (toml::Table::new(), PathBuf::new()),
        };
        for assignment in &overrides.set {
            apply_set(&mut table, assignment)?;
        }
        let mut config: Config = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(format!("invalid configuration: {}", e.message())))?;
        for p in [&mut config.paths.metadata, &mut config.paths.bodies, &mut config.paths.stopwords, &mut config.paths.ngram_accept]
            .into_iter()
            .flatten()
        {
            resolve(&base, p);
        }
        resolve(&base, &mut config.paths.output_dir);
        if let Some(dir) = &overrides.output_dir {
            config.paths.output_dir = dir.clone();
        }
        if let Some(seed) = overrides.seed {
            config.solver.seed = seed;
        }
        if let Some(workers) = overrides.workers {
            config.solver.workers = workers;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.filter.min_words < 1 {
            return bad("filter.min_words must be at least 1".into());
        }
        if self.filter.window_start > self.filter.window_end {
            return bad(format!(
                "filter window {}..{} is empty",
                self.filter.window_start, self.filter.window_end
            ));
        }
        if !(self.vocabulary.max_df > 0.0 && self.vocabulary.max_df <= 1.0) {
            return bad(format!("vocabulary.max_df {} outside (0, 1]", self.vocabulary.max_df));
        }
        if self.vocabulary.max_terms < 1 {
            return bad("vocabulary.max_terms must be at least 1".into());
        }
        if !(2..=6).contains(&self.ngrams.max_n) {
            return bad(format!("ngrams.max_n {} outside 2..=6", self.ngrams.max_n));
        }
        if self.solver.k < 1 {
            return bad("solver.k must be at least 1".into());
        }
        if !(self.solver.tolerance > 0.0) {
            return bad(format!("solver.tolerance {} must be positive", self.solver.tolerance));
        }
        if self.solver.max_iterations < 1 {
            return bad("solver.max_iterations must be at least 1".into());
        }
        if self.stability.k_min < 2 || self.stability.k_min > self.stability.k_max {
            return bad(format!(
                "stability k range {}..={} requires 2 <= k_min <= k_max",
                self.stability.k_min, self.stability.k_max
            ));
        }
        if self.stability.tau < 1 || self.stability.top_terms < 1 {
            return bad("stability.tau and stability.top_terms must be at least 1".into());
        }
        if let Some(f) = self.stability.subsample {
            if !(f > 0.0 && f <= 1.0) {
                return bad(format!("stability.subsample {f} outside (0, 1]"));
            }
        }
        if !(0.0..=1.0).contains(&self.analysis.lambda) {
            return bad(format!("analysis.lambda {} outside [0, 1]", self.analysis.lambda));
        }
        if self.analysis.top_m < 1 {
            return bad("analysis.top_m must be at least 1".into());
        }
        if !self.analysis.labels.is_empty() && self.analysis.labels.len() != self.solver.k {
            return bad(format!(
                "analysis.labels has {} entries but solver.k is {}",
                self.analysis.labels.len(),
                self.solver.k
            ));
        }
        Ok(())
    }

    pub fn required_path<'a>(&self, value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
        let path = value.as_deref().ok_or_else(|| CliError::Config(format!("paths.{key} is not set")))?;
        if !path.exists() {
            return Err(CliError::Config(format!("paths.{key}: {} does not exist", path.display())));
        }
        Ok(path)
    }
}
