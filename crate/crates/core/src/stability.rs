//! Topic-count selection by stability across solver runs.
//!
//! Each fitted model is summarized by the top `t` terms of every topic. Two
//! models are compared by matching their topics one-to-one (Hungarian method
//! on the Average Jaccard similarity matrix) and averaging the matched
//! similarities. A model size is stable when runs from different random
//! initializations agree with a reference run.

use std::collections::HashSet;
use std::io::{self, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dense::DenseMatrix;
use crate::nmf::{self, NmfError, SolverConfig};
use crate::sparse::CsrMatrix;

/// Reduced costs within this distance of zero count as tight.
const TIGHT_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum StabilityError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("ranked lists differ in length ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("duplicate term {0:?} in ranked list")]
    DuplicateTerm(String),
    #[error("similarity matrix is {rows}x{cols}, expected square")]
    NotSquare { rows: usize, cols: usize },
    #[error("summaries differ: {0}")]
    SummaryMismatch(String),
    #[error("solver failed for seed {seed}: {source}")]
    Solver {
        seed: u64,
        #[source]
        source: NmfError,
    },
    #[error("failed to build worker pool: {0}")]
    Pool(String),
}

/// Terms of one topic, strongest first, without repeats.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedTermList(Vec<String>);

impl RankedTermList {
    pub fn new(terms: Vec<String>) -> Result<Self, StabilityError> {
        let mut seen = HashSet::with_capacity(terms.len());
        for term in &terms {
            if !seen.insert(term.as_str()) {
                return Err(StabilityError::DuplicateTerm(term.clone()));
            }
        }
        Ok(Self(terms))
    }

    pub fn terms(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicSummary {
    pub seed: u64,
    pub t: usize,
    pub topics: Vec<RankedTermList>,
}

impl TopicSummary {
    pub fn new(seed: u64, topics: Vec<RankedTermList>) -> Result<Self, StabilityError> {
        let t = topics.first().map_or(0, RankedTermList::len);
        if let Some(bad) = topics.iter().find(|r| r.len() != t) {
            return Err(StabilityError::LengthMismatch { left: t, right: bad.len() });
        }
        Ok(Self { seed, t, topics })
    }

    pub fn k(&self) -> usize {
        self.topics.len()
    }
}

/// The `t` highest-weighted terms of each row of `h`, weight descending,
/// equal weights in lexicographic term order.
pub fn top_terms(h: &DenseMatrix, terms: &[String], t: usize, seed: u64) -> Result<TopicSummary, StabilityError> {
    if h.cols() != terms.len() {
        return Err(StabilityError::InvalidParameter(format!(
            "H has {} columns but {} terms were given",
            h.cols(),
            terms.len()
        )));
    }
    if t < 1 || t > terms.len() {
        return Err(StabilityError::InvalidParameter(format!("t = {t} outside 1..={}", terms.len())));
    }
    let topics = (0..h.rows())
        .map(|row| {
            let weights = h.row(row);
            let mut order: Vec<usize> = (0..terms.len()).collect();
            order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then_with(|| terms[a].cmp(&terms[b])));
            RankedTermList::new(order[..t].iter().map(|&i| terms[i].clone()).collect())
        })
        .collect::<Result<Vec<_>, _>>()?;
    TopicSummary::new(seed, topics)
}

/// Mean over depths `d = 1..t` of the Jaccard index of the two depth-`d`
/// prefixes.
pub fn average_jaccard(a: &RankedTermList, b: &RankedTermList) -> Result<f64, StabilityError> {
    if a.len() != b.len() {
        return Err(StabilityError::LengthMismatch { left: a.len(), right: b.len() });
    }
    let t = a.len();
    if t == 0 {
        return Err(StabilityError::InvalidParameter("ranked lists are empty".into()));
    }
    let mut seen_a = HashSet::with_capacity(t);
    let mut seen_b = HashSet::with_capacity(t);
    let mut shared = 0usize;
    let mut total = 0.0;
    for (d, (x, y)) in a.terms().iter().zip(b.terms()).enumerate() {
        seen_a.insert(x.as_str());
        if seen_b.contains(x.as_str()) {
            shared += 1;
        }
        seen_b.insert(y.as_str());
        if seen_a.contains(y.as_str()) {
            shared += 1;
        }
        let union = 2 * (d + 1) - shared;
        total += shared as f64 / union as f64;
    }
    Ok(total / t as f64)
}

/// `M[i][j] = AJ(x_i, y_j)`.
pub fn similarity_matrix(x: &TopicSummary, y: &TopicSummary) -> Result<DenseMatrix, StabilityError> {
    check_comparable(x, y)?;
    let k = x.k();
    let mut m = DenseMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            m.set(i, j, average_jaccard(&x.topics[i], &y.topics[j])?);
        }
    }
    Ok(m)
}

fn check_comparable(x: &TopicSummary, y: &TopicSummary) -> Result<(), StabilityError> {
    if x.k() != y.k() {
        return Err(StabilityError::SummaryMismatch(format!("k = {} vs k = {}", x.k(), y.k())));
    }
    if x.t != y.t {
        return Err(StabilityError::SummaryMismatch(format!("t = {} vs t = {}", x.t, y.t)));
    }
    if x.k() == 0 {
        return Err(StabilityError::SummaryMismatch("summaries have no topics".into()));
    }
    Ok(())
}

/// Minimum-cost assignment with dual potentials: returns `(assignment, u, v)`
/// with `cost[i][assignment[i]] = u[i] + v[assignment[i]]` and
/// `cost[i][j] ≥ u[i] + v[j]` everywhere (up to rounding).
fn hungarian(cost: &DenseMatrix) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let n = cost.rows();
    // 1-based, column 0 is a virtual start node
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut col0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let r = owner[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for col in 1..=n {
                if used[col] {
                    continue;
                }
                let reduced = cost.get(r - 1, col - 1) - u[r] - v[col];
                if reduced < minv[col] {
                    minv[col] = reduced;
                    way[col] = col0;
                }
                if minv[col] < delta {
                    delta = minv[col];
                    col1 = col;
                }
            }
            for col in 0..=n {
                if used[col] {
                    u[owner[col]] += delta;
                    v[col] -= delta;
                } else {
                    minv[col] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let prev = way[col0];
            owner[col0] = owner[prev];
            col0 = prev;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for col in 1..=n {
        assignment[owner[col] - 1] = col - 1;
    }
    (assignment, u[1..].to_vec(), v[1..].to_vec())
}

/// Re-routes a perfect matching on the tight-edge graph so that it becomes
/// the lexicographically smallest one. Every perfect matching on tight edges
/// is optimal for the same duals, so optimality is kept.
fn lexicographic_matching(tight: &[Vec<bool>], mut assign: Vec<usize>) -> Vec<usize> {
    let n = assign.len();
    let mut owner = vec![0; n];
    for (r, &c) in assign.iter().enumerate() {
        owner[c] = r;
    }
    let mut fixed = vec![false; n];
    for i in 0..n {
        for j in 0..n {
            if !tight[i][j] {
                continue;
            }
            if assign[i] == j {
                break;
            }
            let displaced = owner[j];
            if fixed[displaced] {
                continue;
            }
            // alternating path from the displaced row to the column `i` frees
            if let Some(path) = alternating_path(tight, &assign, &owner, &fixed, i, displaced, j, assign[i]) {
                let mut row = displaced;
                for col in path {
                    let next = owner[col];
                    assign[row] = col;
                    owner[col] = row;
                    row = next;
                }
                assign[i] = j;
                owner[j] = i;
                break;
            }
        }
        fixed[i] = true;
    }
    assign
}

/// Breadth-first search for columns `c_1, …, c_p = target` such that
/// `start → c_1`, `owner[c_1] → c_2`, … are tight edges, using only rows that
/// are neither fixed nor `skip`, and never column `banned`.
#[allow(clippy::too_many_arguments)]
fn alternating_path(
    tight: &[Vec<bool>],
    assign: &[usize],
    owner: &[usize],
    fixed: &[bool],
    skip: usize,
    start: usize,
    banned: usize,
    target: usize,
) -> Option<Vec<usize>> {
    let n = assign.len();
    let mut parent_col: Vec<Option<usize>> = vec![None; n];
    let mut visited = vec![false; n];
    visited[banned] = true;
    let mut queue = std::collections::VecDeque::from([(start, None::<usize>)]);
    while let Some((row, via)) = queue.pop_front() {
        for col in 0..n {
            if visited[col] || !tight[row][col] {
                continue;
            }
            visited[col] = true;
            parent_col[col] = via;
            if col == target {
                let mut path = vec![col];
                let mut cur = parent_col[col];
                while let Some(c) = cur {
                    path.push(c);
                    cur = parent_col[c];
                }
                path.reverse();
                return Some(path);
            }
            let next = owner[col];
            if !fixed[next] && next != skip {
                queue.push_back((next, Some(col)));
            }
        }
    }
    None
}

/// Permutation `π` (row `i` ↦ column `π[i]`) maximizing `Σ M[i][π[i]]`,
/// solved as minimum-cost assignment on `1 − M`. Among optimal permutations
/// the lexicographically smallest is returned.
pub fn match_topics(m: &DenseMatrix) -> Result<Vec<usize>, StabilityError> {
    if m.rows() != m.cols() {
        return Err(StabilityError::NotSquare { rows: m.rows(), cols: m.cols() });
    }
    let n = m.rows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let cost = DenseMatrix::from_fn(n, n, |i, j| 1.0 - m.get(i, j));
    let (assign, u, v) = hungarian(&cost);
    let tight: Vec<Vec<bool>> =
        (0..n).map(|i| (0..n).map(|j| (cost.get(i, j) - u[i] - v[j]).abs() <= TIGHT_EPS).collect()).collect();
    Ok(lexicographic_matching(&tight, assign))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub topic: usize,
    pub matched: usize,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub score: f64,
    pub pairs: Vec<MatchedPair>,
}

/// Mean Average Jaccard over the optimal one-to-one topic matching.
pub fn agreement(x: &TopicSummary, y: &TopicSummary) -> Result<Agreement, StabilityError> {
    let m = similarity_matrix(x, y)?;
    let pi = match_topics(&m)?;
    let pairs: Vec<MatchedPair> = pi
        .iter()
        .enumerate()
        .map(|(topic, &matched)| MatchedPair { topic, matched, similarity: m.get(topic, matched) })
        .collect();
    let score = pairs.iter().map(|p| p.similarity).sum::<f64>() / pairs.len() as f64;
    Ok(Agreement { score, pairs })
}

/// How sample runs differ from the reference run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplingRegime {
    /// Full matrix, different random initialization only.
    #[default]
    Initialization,
    /// Extension: each sample also fits a random subset of the documents.
    Subsample { fraction: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityParams {
    pub tau: usize,
    pub t: usize,
    pub base_seed: u64,
    /// Solver settings shared by all runs; `k` and `seed` are overwritten.
    pub solver: SolverConfig,
    pub sampling: SamplingRegime,
}

impl StabilityParams {
    pub fn new(base_seed: u64) -> Self {
        Self { tau: 10, t: 20, base_seed, solver: SolverConfig::new(1, base_seed), sampling: SamplingRegime::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleAgreement {
    pub seed: u64,
    pub agreement: f64,
    pub pairs: Vec<MatchedPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityResult {
    pub k: usize,
    pub stability: f64,
    pub reference_seed: u64,
    pub samples: Vec<SampleAgreement>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityCurve {
    pub tau: usize,
    pub t: usize,
    pub base_seed: u64,
    pub sampling: SamplingRegime,
    pub points: Vec<StabilityResult>,
}

impl StabilityCurve {
    /// The `k` with the highest stability; the smaller `k` wins ties.
    pub fn best_k(&self) -> Option<usize> {
        self.points
            .iter()
            .fold(None::<&StabilityResult>, |best, p| match best {
                Some(b) if b.stability >= p.stability => Some(b),
                _ => Some(p),
            })
            .map(|p| p.k)
    }
}

fn subsample_rows(n_rows: usize, fraction: f64, seed: u64) -> Vec<usize> {
    let keep = ((n_rows as f64 * fraction).round() as usize).clamp(1, n_rows);
    let mut rows: Vec<usize> = (0..n_rows).collect();
    rows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5a3b_1e00_0000));
    rows.truncate(keep);
    rows.sort_unstable();
    rows
}

fn fit_summary(
    x: &CsrMatrix,
    terms: &[String],
    k: usize,
    seed: u64,
    params: &StabilityParams,
    subsample: bool,
) -> Result<TopicSummary, StabilityError> {
    let mut config = params.solver.clone();
    config.k = k;
    config.seed = seed;
    config.workers = 0;
    let solved = match (subsample, params.sampling) {
        (true, SamplingRegime::Subsample { fraction }) => {
            nmf::solve(&x.select_rows(&subsample_rows(x.nrows(), fraction, seed)), &config)
        }
        _ => nmf::solve(x, &config),
    };
    let (factors, _) = solved.map_err(|source| StabilityError::Solver { seed, source })?;
    top_terms(&factors.h, terms, params.t, seed)
}

fn validate(params: &StabilityParams) -> Result<(), StabilityError> {
    if params.tau < 1 {
        return Err(StabilityError::InvalidParameter("tau must be at least 1".into()));
    }
    if let SamplingRegime::Subsample { fraction } = params.sampling {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(StabilityError::InvalidParameter(format!("subsample fraction {fraction} outside (0, 1]")));
        }
    }
    Ok(())
}

/// Stability of a `k`-topic model against explicitly chosen seeds.
pub fn stability_with_seeds(
    x: &CsrMatrix,
    terms: &[String],
    k: usize,
    reference_seed: u64,
    sample_seeds: &[u64],
    params: &StabilityParams,
) -> Result<StabilityResult, StabilityError> {
    validate(params)?;
    if sample_seeds.is_empty() {
        return Err(StabilityError::InvalidParameter("at least one sample seed is required".into()));
    }
    let reference = fit_summary(x, terms, k, reference_seed, params, false)?;
    let samples = sample_seeds
        .par_iter()
        .map(|&seed| {
            let summary = fit_summary(x, terms, k, seed, params, true)?;
            let a = agreement(&summary, &reference)?;
            Ok(SampleAgreement { seed, agreement: a.score, pairs: a.pairs })
        })
        .collect::<Result<Vec<_>, StabilityError>>()?;
    let stability = samples.iter().map(|s| s.agreement).sum::<f64>() / samples.len() as f64;
    Ok(StabilityResult { k, stability, reference_seed, samples })
}

fn in_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T, StabilityError> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| StabilityError::Pool(e.to_string()))?;
    Ok(pool.install(f))
}

/// Reference seed `base_seed`, samples `base_seed + 1 ..= base_seed + tau`.
/// Runs on `params.solver.workers` threads.
pub fn stability_for_k(
    x: &CsrMatrix,
    terms: &[String],
    k: usize,
    params: &StabilityParams,
) -> Result<StabilityResult, StabilityError> {
    validate(params)?;
    let seeds: Vec<u64> = (1..=params.tau as u64).map(|i| params.base_seed.wrapping_add(i)).collect();
    in_pool(params.solver.workers, || stability_with_seeds(x, terms, k, params.base_seed, &seeds, params))?
}

pub fn stability_curve(
    x: &CsrMatrix,
    terms: &[String],
    k_min: usize,
    k_max: usize,
    params: &StabilityParams,
) -> Result<StabilityCurve, StabilityError> {
    if k_min < 2 || k_min > k_max {
        return Err(StabilityError::InvalidParameter(format!("k range {k_min}..={k_max} requires 2 <= k_min <= k_max")));
    }
    validate(params)?;
    let points = in_pool(params.solver.workers, || {
        let seeds: Vec<u64> = (1..=params.tau as u64).map(|i| params.base_seed.wrapping_add(i)).collect();
        (k_min..=k_max)
            .map(|k| stability_with_seeds(x, terms, k, params.base_seed, &seeds, params))
            .collect::<Result<Vec<_>, _>>()
    })??;
    Ok(StabilityCurve { tau: params.tau, t: params.t, base_seed: params.base_seed, sampling: params.sampling, points })
}

/// Long-form CSV: `k,stability,sample_seed,agreement`, one row per sample.
pub fn write_curve_csv<W: Write>(writer: W, curve: &StabilityCurve) -> io::Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["k", "stability", "sample_seed", "agreement"])?;
    for point in &curve.points {
        for sample in &point.samples {
            out.write_record([
                point.k.to_string(),
                point.stability.to_string(),
                sample.seed.to_string(),
                sample.agreement.to_string(),
            ])?;
        }
    }
    out.flush()
}
