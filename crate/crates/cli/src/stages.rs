//! Pipeline stages. Each stage owns one subdirectory of the output directory
//! and records a stamp describing its configuration, inputs, prerequisite
//! stamps and outputs.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use topictrend::analysis::{
    self, document_mixtures, monthly_trends, rank_terms_by_relevance, topic_term_distribution, RelevanceTable,
    StackedSeries,
};
use topictrend::features::{featurize, term_probabilities, DocTermMatrix, VocabularyParams};
use topictrend::ingest::{filter_articles, load_corpus, partition_by_month, ArticleRecord, FilterConfig};
use topictrend::nmf::{self, FactorSidecar};
use topictrend::preprocess::{
    clean_tokens, merge_ngrams, mine_ngrams, write_candidates_csv, NgramAcceptList, StopwordList, TokenStream,
};
use topictrend::stability::{self, StabilityParams};

use crate::config::Config;
use crate::error::CliError;
use crate::stamp::{digest_file, digest_json, write_json_atomic, Stamp, STAMP_FILE, TOOL_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Ingest,
    Preprocess,
    NgramsMine,
    NgramsApply,
    Featurize,
    Fit,
    Stability,
    Relevance,
    Trends,
    Report,
}

impl Stage {
    pub const PIPELINE: [Stage; 9] = [
        Stage::Ingest,
        Stage::Preprocess,
        Stage::NgramsApply,
        Stage::Featurize,
        Stage::Fit,
        Stage::Stability,
        Stage::Relevance,
        Stage::Trends,
        Stage::Report,
    ];

    pub fn dir_name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Preprocess => "preprocess",
            Stage::NgramsMine => "ngrams-mine",
            Stage::NgramsApply => "ngrams-apply",
            Stage::Featurize => "featurize",
            Stage::Fit => "fit",
            Stage::Stability => "stability",
            Stage::Relevance => "relevance",
            Stage::Trends => "trends",
            Stage::Report => "report",
        }
    }

    pub fn command(self) -> &'static str {
        match self {
            Stage::NgramsMine => "ngrams mine",
            Stage::NgramsApply => "ngrams apply",
            other => other.dir_name(),
        }
    }

    /// Prerequisites that must exist.
    fn upstream(self) -> &'static [Stage] {
        match self {
            Stage::Ingest => &[],
            Stage::Preprocess => &[Stage::Ingest],
            Stage::NgramsMine | Stage::NgramsApply => &[Stage::Preprocess],
            Stage::Featurize => &[Stage::NgramsApply],
            Stage::Fit | Stage::Stability => &[Stage::Featurize],
            Stage::Relevance => &[Stage::Fit, Stage::Featurize],
            Stage::Trends => &[Stage::Fit, Stage::Ingest],
            Stage::Report => &[Stage::Relevance, Stage::Trends],
        }
    }

    /// Prerequisites used when present.
    fn optional_upstream(self) -> &'static [Stage] {
        match self {
            Stage::Report => &[Stage::Stability],
            _ => &[],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.command())
    }
}

pub enum Outcome {
    Ran,
    UpToDate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StageRecord {
    seconds: f64,
    outputs: BTreeMap<String, String>,
}

/// Written at the top of the output directory after every command.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunManifest {
    tool_version: String,
    config: Config,
    inputs: BTreeMap<String, String>,
    stages: BTreeMap<String, StageRecord>,
}

pub struct Context {
    pub config: Config,
    out: PathBuf,
    verified: RefCell<HashMap<Stage, String>>,
    input_digests: RefCell<HashMap<PathBuf, String>>,
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let file = File::open(path).map_err(CliError::io(path))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(CliError::io(path))?;
        if !line.is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CliError> {
    let file = File::create(path).map_err(CliError::io(path))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| CliError::Internal(e.to_string()))?;
        w.write_all(b"\n").map_err(CliError::io(path))?;
    }
    w.flush().map_err(CliError::io(path))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(path).map_err(CliError::io(path))?))
}

#[derive(Serialize)]
struct SolverSubset<'a> {
    k: Option<usize>,
    seed: u64,
    tolerance: f64,
    max_iterations: usize,
    init: &'a topictrend::nmf::InitStrategy,
}

impl Context {
    pub fn new(config: Config) -> Self {
        let out = config.paths.output_dir.clone();
        Self { config, out, verified: RefCell::new(HashMap::new()), input_digests: RefCell::new(HashMap::new()) }
    }

    pub fn output_dir(&self) -> &Path {
        &self.out
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.out.join(stage.dir_name())
    }

    fn solver_subset(&self, with_k: bool) -> SolverSubset<'_> {
        let s = &self.config.solver;
        SolverSubset {
            k: with_k.then_some(s.k),
            seed: s.seed,
            tolerance: s.tolerance,
            max_iterations: s.max_iterations,
            init: &s.init,
        }
    }

    /// Digest of the settings a stage depends on directly. Worker counts and
    /// paths never enter it; file contents are tracked as inputs instead.
    fn config_digest(&self, stage: Stage) -> String {
        let c = &self.config;
        match stage {
            Stage::Ingest => digest_json(&c.filter),
            Stage::Preprocess => digest_json(&json!({"stopwords": c.paths.stopwords.is_some()})),
            Stage::NgramsMine => digest_json(&c.ngrams),
            Stage::NgramsApply => digest_json(&json!({"accept": c.paths.ngram_accept.is_some()})),
            Stage::Featurize => digest_json(&c.vocabulary),
            Stage::Fit => digest_json(&self.solver_subset(true)),
            Stage::Stability => digest_json(&json!({
                "stability": c.stability,
                "solver": self.solver_subset(false),
            })),
            Stage::Relevance => digest_json(&json!({"lambda": c.analysis.lambda, "top_m": c.analysis.top_m})),
            Stage::Trends | Stage::Report => digest_json(&json!({"labels": c.analysis.labels})),
        }
    }

    fn input_files(&self, stage: Stage) -> Result<Vec<(&'static str, PathBuf)>, CliError> {
        let p = &self.config.paths;
        Ok(match stage {
            Stage::Ingest => vec![
                ("metadata", self.config.required_path(&p.metadata, "metadata")?.to_path_buf()),
                ("bodies", self.config.required_path(&p.bodies, "bodies")?.to_path_buf()),
            ],
            Stage::Preprocess if p.stopwords.is_some() => {
                vec![("stopwords", self.config.required_path(&p.stopwords, "stopwords")?.to_path_buf())]
            }
            Stage::NgramsApply if p.ngram_accept.is_some() => {
                vec![("ngram_accept", self.config.required_path(&p.ngram_accept, "ngram_accept")?.to_path_buf())]
            }
            _ => Vec::new(),
        })
    }

    fn input_digests(&self, stage: Stage) -> Result<BTreeMap<String, String>, CliError> {
        let mut out = BTreeMap::new();
        for (label, path) in self.input_files(stage)? {
            let cached = self.input_digests.borrow().get(&path).cloned();
            let digest = match cached {
                Some(d) => d,
                None => {
                    let d = digest_file(&path)?;
                    self.input_digests.borrow_mut().insert(path.clone(), d.clone());
                    d
                }
            };
            out.insert(label.to_string(), digest);
        }
        Ok(out)
    }

    /// Checks a finished stage and everything it depends on against the
    /// current configuration and inputs. Returns the digest of its stamp.
    pub fn verify(&self, stage: Stage) -> Result<String, CliError> {
        if let Some(d) = self.verified.borrow().get(&stage) {
            return Ok(d.clone());
        }
        let dir = self.stage_dir(stage);
        let Some((stamp, digest)) = Stamp::read(&dir)? else {
            return Err(CliError::MissingArtifact { stage: stage.to_string(), command: stage.command().to_string() });
        };
        self.check_stamp(stage, &stamp)?;
        self.verified.borrow_mut().insert(stage, digest.clone());
        Ok(digest)
    }

    fn rerun_hint(stage: Stage) -> String {
        format!("rerun `topictrend {}`", stage.command())
    }

    fn check_stamp(&self, stage: Stage, stamp: &Stamp) -> Result<(), CliError> {
        if stamp.config_digest != self.config_digest(stage) {
            return Err(CliError::Stale(format!(
                "{stage} output was produced with different settings; {}",
                Self::rerun_hint(stage)
            )));
        }
        if stamp.inputs != self.input_digests(stage)? {
            return Err(CliError::Stale(format!("{stage} inputs changed; {}", Self::rerun_hint(stage))));
        }
        for (name, digest) in &stamp.upstream {
            let up = self.upstream_by_name(stage, name)?;
            if &self.verify(up)? != digest {
                return Err(CliError::Stale(format!(
                    "{stage} output was built from an older {up} result; {}",
                    Self::rerun_hint(stage)
                )));
            }
        }
        for up in stage.upstream() {
            if !stamp.upstream.contains_key(up.dir_name()) {
                return Err(CliError::Stale(format!("{stage} stamp lacks {up}; {}", Self::rerun_hint(stage))));
            }
        }
        if let Some(file) = stamp.modified_output(&self.stage_dir(stage))? {
            return Err(CliError::Stale(format!("{stage}/{file} was modified; {}", Self::rerun_hint(stage))));
        }
        Ok(())
    }

    fn upstream_by_name(&self, stage: Stage, name: &str) -> Result<Stage, CliError> {
        stage
            .upstream()
            .iter()
            .chain(stage.optional_upstream())
            .copied()
            .find(|s| s.dir_name() == name)
            .ok_or_else(|| CliError::Stale(format!("{stage} stamp names unknown prerequisite {name}")))
    }

    fn upstream_digests(&self, stage: Stage) -> Result<BTreeMap<String, String>, CliError> {
        let mut out = BTreeMap::new();
        for &up in stage.upstream() {
            out.insert(up.dir_name().to_string(), self.verify(up)?);
        }
        for &up in stage.optional_upstream() {
            match self.verify(up) {
                Ok(d) => {
                    out.insert(up.dir_name().to_string(), d);
                }
                Err(CliError::MissingArtifact { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(out)
    }

    /// Runs `body` for `stage` unless its stamp shows it is current. The body
    /// writes into the (emptied) stage directory and returns the names of the
    /// files it produced.
    pub fn run_stage(
        &self,
        stage: Stage,
        body: impl FnOnce(&Self, &Path) -> Result<Vec<String>, CliError>,
    ) -> Result<Outcome, CliError> {
        let upstream = self.upstream_digests(stage)?;
        let inputs = self.input_digests(stage)?;
        let config_digest = self.config_digest(stage);
        let dir = self.stage_dir(stage);
        if let Some((stamp, digest)) = Stamp::read(&dir)? {
            let current = stamp.config_digest == config_digest
                && stamp.inputs == inputs
                && stamp.upstream == upstream
                && stamp.modified_output(&dir)?.is_none();
            if current {
                println!("{stage}: up to date");
                self.verified.borrow_mut().insert(stage, digest);
                return Ok(Outcome::UpToDate);
            }
        }
        self.verified.borrow_mut().remove(&stage);
        if dir.exists() {
            // drop the stamp first so an interrupted run reads as missing
            let _ = fs::remove_file(dir.join(STAMP_FILE));
            fs::remove_dir_all(&dir).map_err(CliError::io(&dir))?;
        }
        fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;
        let started = Instant::now();
        let files = body(self, &dir)?;
        let mut outputs = BTreeMap::new();
        for name in files {
            let digest = digest_file(&dir.join(&name))?;
            outputs.insert(name, digest);
        }
        let stamp = Stamp {
            stage: stage.dir_name().to_string(),
            tool_version: TOOL_VERSION.to_string(),
            config_digest,
            inputs,
            upstream,
            outputs: outputs.clone(),
        };
        let digest = stamp.write(&dir)?;
        self.verified.borrow_mut().insert(stage, digest);
        self.record_manifest(stage, started.elapsed().as_secs_f64(), outputs)?;
        Ok(Outcome::Ran)
    }

    fn record_manifest(&self, stage: Stage, seconds: f64, outputs: BTreeMap<String, String>) -> Result<(), CliError> {
        let path = self.out.join("manifest.json");
        let mut stages = fs::read(&path)
            .ok()
            .and_then(|b| serde_json::from_slice::<RunManifest>(&b).ok())
            .map(|m| m.stages)
            .unwrap_or_default();
        stages.insert(stage.dir_name().to_string(), StageRecord { seconds, outputs });
        stages.retain(|name, _| self.out.join(name).join(STAMP_FILE).exists());
        let mut inputs = BTreeMap::new();
        for s in [Stage::Ingest, Stage::Preprocess, Stage::NgramsApply] {
            if let Ok(d) = self.input_digests(s) {
                inputs.extend(d);
            }
        }
        let manifest = RunManifest { tool_version: TOOL_VERSION.to_string(), config: self.config.clone(), inputs, stages };
        write_json_atomic(&path, &manifest)
    }

    fn read_tokens(&self, stage: Stage) -> Result<Vec<TokenStream>, CliError> {
        read_jsonl(&self.stage_dir(stage).join("tokens.jsonl"))
    }

    fn read_records(&self) -> Result<Vec<ArticleRecord>, CliError> {
        read_jsonl(&self.stage_dir(Stage::Ingest).join("records.jsonl"))
    }

    fn read_features(&self) -> Result<DocTermMatrix, CliError> {
        let dir = self.stage_dir(Stage::Featurize);
        Ok(DocTermMatrix::load(&dir.join("matrix.bin"), &dir.join("vocabulary.json"))?)
    }

    fn read_factors(&self) -> Result<(nmf::FactorPair, FactorSidecar), CliError> {
        let dir = self.stage_dir(Stage::Fit);
        Ok(nmf::load_factors(&dir.join("factors.bin"), &dir.join("factors.json"))?)
    }

    fn labels(&self, k: usize) -> Vec<String> {
        if self.config.analysis.labels.is_empty() {
            analysis::default_labels(k)
        } else {
            self.config.analysis.labels.clone()
        }
    }
}

#[derive(Serialize)]
struct IngestSummary {
    loaded: usize,
    kept: usize,
    dropped: BTreeMap<String, usize>,
}

pub fn cmd_ingest(ctx: &Context) -> Result<Outcome, CliError> {
    ctx.run_stage(Stage::Ingest, |ctx, dir| {
        let c = &ctx.config;
        let metadata = c.required_path(&c.paths.metadata, "metadata")?;
        let bodies = c.required_path(&c.paths.bodies, "bodies")?;
        let loaded = load_corpus(metadata, bodies)?;
        let filter = FilterConfig {
            min_words: c.filter.min_words,
            window_start: c.filter.window_start,
            window_end: c.filter.window_end,
        };
        let outcome = filter_articles(&loaded.articles, &filter);
        let mut dropped = outcome.drops.clone();
        dropped.insert("missing_body".into(), loaded.missing_body);
        let total = loaded.articles.len() + loaded.missing_body;
        println!(
            "ingest: kept {} of {} articles ({})",
            outcome.records.len(),
            total,
            dropped.iter().map(|(k, v)| format!("{k}: {v}")).collect::<Vec<_>>().join(", ")
        );
        if outcome.records.is_empty() {
            return Err(CliError::Data("no articles left after filtering".into()));
        }
        write_jsonl(&dir.join("records.jsonl"), &outcome.records)?;
        let summary = IngestSummary { loaded: total, kept: outcome.records.len(), dropped };
        write_json_atomic(&dir.join("summary.json"), &summary)?;
        let index = partition_by_month(&outcome.records);
        let path = dir.join("months.csv");
        let mut w = csv::Writer::from_writer(create(&path)?);
        w.write_record(["month", "documents"])?;
        for (k, month) in index.months.iter().enumerate() {
            w.write_record([month.to_string(), index.count(k).to_string()])?;
        }
        w.flush().map_err(CliError::io(&path))?;
        Ok(vec!["records.jsonl".into(), "summary.json".into(), "months.csv".into()])
    })
}

pub fn cmd_preprocess(ctx: &Context) -> Result<Outcome, CliError> {
    ctx.run_stage(Stage::Preprocess, |ctx, dir| {
        let stopwords = match &ctx.config.paths.stopwords {
            Some(p) => StopwordList::from_path(p)?,
            None => StopwordList::builtin(),
        };
        let records = ctx.read_records()?;
        let streams: Vec<TokenStream> = {
            use rayon::prelude::*;
            records
                .par_iter()
                .map(|r| TokenStream { article_id: r.id.clone(), tokens: clean_tokens(&r.body_text, &stopwords) })
                .collect()
        };
        let tokens: usize = streams.iter().map(|s| s.tokens.len()).sum();
        println!("preprocess: {} documents, {} tokens", streams.len(), tokens);
        write_jsonl(&dir.join("tokens.jsonl"), &streams)?;
        Ok(vec!["tokens.jsonl".into()])
    })
}

pub fn cmd_ngrams_mine(ctx: &Context) -> Result<Outcome, CliError> {
    ctx.run_stage(Stage::NgramsMine, |ctx, dir| {
        let corpus = ctx.read_tokens(Stage::Preprocess)?;
        let ng = &ctx.config.ngrams;
        let mut all = Vec::new();
        for n in 2..=ng.max_n {
            let mut found = mine_ngrams(&corpus, n, ng.min_frequency)?;
            found.truncate(ng.max_candidates);
            all.extend(found);
        }
        println!("ngrams mine: {} candidates written for curation", all.len());
        let path = dir.join("candidates.csv");
        write_candidates_csv(create(&path)?, &all)?;
        Ok(vec!["candidates.csv".into()])
    })
}

pub fn cmd_ngrams_apply(ctx: &Context) -> Result<Outcome, CliError> {
    ctx.run_stage(Stage::NgramsApply, |ctx, dir| {
        let accept = match &ctx.config.paths.ngram_accept {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(CliError::io(p))?;
                NgramAcceptList::parse(&text)?
            }
            None => NgramAcceptList::new(),
        };
        let corpus = ctx.read_tokens(Stage::Preprocess)?;
        let merged: Vec<TokenStream> = corpus
            .iter()
            .map(|s| TokenStream { article_id: s.article_id.clone(), tokens: merge_ngrams(&s.tokens, &accept) })
            .collect();
        println!("ngrams apply: {} accepted phrases", accept.len());
        write_jsonl(&dir.join("tokens.jsonl"), &merged)?;
        Ok(vec!["tokens.jsonl".into()])
    })
}

pub fn cmd_featurize(ctx: &Context) -> Result<Outcome, CliError> {
    ctx.run_stage(Stage::Featurize, |ctx, dir| {
        let corpus = ctx.read_tokens(Stage::NgramsApply)?;
        let v = &ctx.config.vocabulary;
        let params = VocabularyParams { max_df_fraction: v.max_df, min_doc_count: v.min_doc_count, max_terms: v.max_terms };
        let dtm = featurize(&corpus, &params)?;
        println!(
            "featurize: {} documents x {} terms, {} nonzeros",
            dtm.matrix.nrows(),
            dtm.matrix.ncols(),
            dtm.matrix.nnz()
        );
        dtm.save(&dir.join("matrix.bin"), &dir.join("vocabulary.json"))?;
        let path = dir.join("vocabulary.csv");
        dtm.vocabulary.write_csv(create(&path)?)?;
        Ok(vec!["matrix.bin".into(), "vocabulary.json".into(), "vocabulary.csv".into()])
    })
}

pub fn cmd_fit(ctx: &Context) -> Result<Outcome, CliError> {
    ctx.run_stage(Stage::Fit, |ctx, dir| {
        let dtm = ctx.read_features()?;
        let mut config = ctx.config.solver.solver_config();
        config.workers = 0;
        let (factors, report) = nmf::solve(&dtm.matrix, &config)?;
        println!(
            "fit: k = {}, {} iterations, converged = {}, objective = {:.6}",
            config.k,
            report.iterations,
            report.converged,
            report.final_objective()
        );
        info!("fit wall time {:?}", report.wall_time);
        nmf::save_factors(
            &factors,
            &FactorSidecar::new(&config, &report),
            &dir.join("factors.bin"),
            &dir.join("factors.json"),
        )?;
        Ok(vec!["factors.bin".into(), "factors.json".into()])
    })
}

pub fn cmd_stability(ctx: &Context) -> Result<Outcome, CliError> {
    ctx.run_stage(Stage::Stability, |ctx, dir| {
        let dtm = ctx.read_features()?;
        let s = &ctx.config.stability;
        let mut solver = ctx.config.solver.solver_config();
        solver.workers = 0;
        let params = StabilityParams { tau: s.tau, t: s.top_terms, base_seed: solver.seed, solver, sampling: s.sampling() };
        let curve = stability::stability_curve(&dtm.matrix, &dtm.vocabulary.terms(), s.k_min, s.k_max, &params)?;
        for p in &curve.points {
            println!("stability: k = {:>3}  {:.4}", p.k, p.stability);
        }
        if let Some(best) = curve.best_k() {
            println!("stability: most stable k = {best}");
        }
        let path = dir.join("stability.csv");
        let w = create(&path)?;
        stability::write_curve_csv(w, &curve).map_err(CliError::io(&path))?;
        write_json_atomic(&dir.join("stability.json"), &curve)?;
        Ok(vec!["stability.csv".into(), "stability.json".into()])
    })
}

pub fn cmd_relevance(ctx: &Context) -> Result<Outcome, CliError> {
    ctx.run_stage(Stage::Relevance, |ctx, dir| {
        let dtm = ctx.read_features()?;
        let (factors, _) = ctx.read_factors()?;
        if factors.h.cols() != dtm.vocabulary.len() {
            return Err(CliError::Stale("fit and featurize disagree on the vocabulary; rerun `topictrend fit`".into()));
        }
        let a = &ctx.config.analysis;
        let dist = topic_term_distribution(&factors.h)?;
        let p = term_probabilities(&dtm.vocabulary)?;
        let table = rank_terms_by_relevance(&dist, &p, &dtm.vocabulary.terms(), a.lambda, a.top_m)?;
        for (t, ranked) in table.topics.iter().enumerate() {
            let terms: Vec<&str> = ranked.iter().map(|r| r.term.as_str()).collect();
            println!("relevance: topic {:>2}: {}", t + 1, terms.join(", "));
        }
        let path = dir.join("relevance.csv");
        let w = create(&path)?;
        analysis::write_relevance_csv(w, &table)?;
        write_json_atomic(&dir.join("relevance.json"), &table)?;
        Ok(vec!["relevance.csv".into(), "relevance.json".into()])
    })
}

pub fn cmd_trends(ctx: &Context) -> Result<Outcome, CliError> {
    ctx.run_stage(Stage::Trends, |ctx, dir| {
        let records = ctx.read_records()?;
        let (factors, _) = ctx.read_factors()?;
        if factors.w.rows() != records.len() {
            return Err(CliError::Stale(format!(
                "fit has {} documents but ingest has {}; rerun the pipeline from `topictrend preprocess`",
                factors.w.rows(),
                records.len()
            )));
        }
        let mixtures = document_mixtures(&factors.w);
        let index = partition_by_month(&records);
        let series = monthly_trends(&mixtures, &index)?;
        let labels = ctx.labels(factors.k());
        let csv_path = dir.join("trends.csv");
        let json_path = dir.join("trends.json");
        let (c, j) = (create(&csv_path)?, create(&json_path)?);
        analysis::export_trend_report(c, j, &series, Some(&labels))?;

        let mix_path = dir.join("mixtures.csv");
        let mut w = csv::Writer::from_writer(create(&mix_path)?);
        let mut header = vec!["id".to_string(), "month".to_string()];
        header.extend(labels.iter().cloned());
        w.write_record(&header)?;
        for (record, row) in records.iter().zip(&mixtures.rows) {
            let mut fields = vec![record.id.clone(), record.month.to_string()];
            match row {
                Some(shares) => fields.extend(shares.iter().map(f64::to_string)),
                None => fields.extend(std::iter::repeat_n(String::new(), labels.len())),
            }
            w.write_record(&fields)?;
        }
        w.flush().map_err(CliError::io(&mix_path))?;
        println!(
            "trends: {} months ({} without documents), {} documents without topic mass",
            series.months.len(),
            series.shares.iter().filter(|s| s.is_none()).count(),
            mixtures.flagged()
        );
        Ok(vec!["trends.csv".into(), "trends.json".into(), "mixtures.csv".into()])
    })
}

#[derive(Serialize)]
struct ReportManifest {
    tool_version: String,
    settings: serde_json::Value,
    inputs: BTreeMap<String, String>,
    stages: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

/// Settings that determine report content: no paths, no worker count.
fn report_settings(config: &Config) -> serde_json::Value {
    let mut v = serde_json::to_value(config).expect("config serializes");
    if let Some(obj) = v.as_object_mut() {
        obj.remove("paths");
        if let Some(solver) = obj.get_mut("solver").and_then(|s| s.as_object_mut()) {
            solver.remove("workers");
        }
    }
    v
}

pub fn cmd_report(ctx: &Context) -> Result<Outcome, CliError> {
    ctx.run_stage(Stage::Report, |ctx, dir| {
        let mut copied = Vec::new();
        let copy = |from: Stage, name: &str, copied: &mut Vec<String>| -> Result<(), CliError> {
            let src = ctx.stage_dir(from).join(name);
            let dst = dir.join(name);
            fs::copy(&src, &dst).map_err(CliError::io(&src))?;
            copied.push(name.to_string());
            Ok(())
        };
        copy(Stage::Relevance, "relevance.csv", &mut copied)?;
        copy(Stage::Trends, "trends.csv", &mut copied)?;
        copy(Stage::Trends, "trends.json", &mut copied)?;
        let has_stability = ctx.stage_dir(Stage::Stability).join(STAMP_FILE).exists();
        if has_stability {
            copy(Stage::Stability, "stability.csv", &mut copied)?;
        } else {
            println!("report: no stability results; run `topictrend stability` to include them");
        }

        // sanity check on what is being published
        let json = fs::read(dir.join("trends.json")).map_err(CliError::io(dir.join("trends.json")))?;
        let stacked: StackedSeries = serde_json::from_slice(&json)?;
        let table: RelevanceTable = serde_json::from_slice(
            &fs::read(ctx.stage_dir(Stage::Relevance).join("relevance.json"))
                .map_err(CliError::io(ctx.stage_dir(Stage::Relevance)))?,
        )?;
        if stacked.topics.len() != table.topics.len() {
            return Err(CliError::Stale("relevance and trends disagree on the topic count".into()));
        }

        let mut inputs = BTreeMap::new();
        for s in [Stage::Ingest, Stage::Preprocess, Stage::NgramsApply] {
            inputs.extend(ctx.input_digests(s)?);
        }
        let mut stages = BTreeMap::new();
        for s in Stage::PIPELINE {
            if s != Stage::Report && ctx.stage_dir(s).join(STAMP_FILE).exists() {
                stages.insert(s.dir_name().to_string(), ctx.verify(s)?);
            }
        }
        let mut outputs = BTreeMap::new();
        for name in &copied {
            outputs.insert(name.clone(), digest_file(&dir.join(name))?);
        }
        let manifest = ReportManifest {
            tool_version: TOOL_VERSION.to_string(),
            settings: report_settings(&ctx.config),
            inputs,
            stages,
            outputs,
        };
        write_json_atomic(&dir.join("manifest.json"), &manifest)?;
        copied.push("manifest.json".into());
        println!("report: {} files in {}", copied.len(), dir.display());
        Ok(copied)
    })
}

pub fn run_all(ctx: &Context, skip_stability: bool) -> Result<(), CliError> {
    cmd_ingest(ctx)?;
    cmd_preprocess(ctx)?;
    cmd_ngrams_apply(ctx)?;
    cmd_featurize(ctx)?;
    cmd_fit(ctx)?;
    if !skip_stability {
        cmd_stability(ctx)?;
    }
    cmd_relevance(ctx)?;
    cmd_trends(ctx)?;
    cmd_report(ctx)?;
    Ok(())
}
