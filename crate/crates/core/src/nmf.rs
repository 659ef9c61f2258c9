//! Nonnegative matrix factorization `X ≈ WH` by hierarchical alternating
//! least squares (HALS).
//!
//! One sweep over a factor updates each topic column in turn to its exact
//! nonnegative least-squares solution with the other columns held fixed, so
//! the objective `½‖X − WH‖²_F` never increases. The solver starts each
//! iteration from an extrapolated point along the previous step; when that
//! overshoots, the iteration falls back to a plain step from the last
//! accepted factors, so the recorded objective is still non-increasing.
//!
//! Parallel work is split so that floating-point reductions never depend on
//! the worker count: factor rows are updated independently (each row's inner
//! sums run sequentially), and Gram matrices are accumulated over fixed-size
//! row blocks that are summed in block order. Results are therefore
//! bit-identical for any number of workers.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use log::{debug, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binfmt;
use crate::dense::DenseMatrix;
use crate::sparse::CsrMatrix;

/// Rows per block in Gram reductions. Independent of the worker count.
const GRAM_BLOCK: usize = 512;
const CONVERGENCE_EPS: f64 = 1e-12;
const MAX_RESEEDS: u32 = 3;
const POWER_ITERATIONS: usize = 25;
/// Coordinate passes per row within one factor update.
const INNER_PASSES: usize = 5;
/// A row stops early once a pass moves it by this fraction (squared) of the
/// first pass.
const INNER_STOP: f64 = 1e-4;

const FACTOR_MAGIC: &[u8; 4] = b"TTNF";
const FACTOR_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum NmfError {
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("k = {k} exceeds min(m, n) for a {m}x{n} matrix")]
    RankTooLarge { k: usize, m: usize, n: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("nothing to factorize: the matrix is all zero")]
    NothingToFactorize,
    #[error("failed to build worker pool: {0}")]
    Pool(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("sidecar error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid factor container: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    #[default]
    RandomUniform,
    Nndsvd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub k: usize,
    pub max_iterations: usize,
    /// Stop once the relative objective change falls below this.
    pub tolerance: f64,
    pub seed: u64,
    pub init: InitStrategy,
    /// Worker threads; 0 runs on the ambient rayon pool.
    #[serde(skip)]
    pub workers: usize,
}

impl SolverConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self { k, max_iterations: 200, tolerance: 1e-4, seed, init: InitStrategy::RandomUniform, workers: 0 }
    }

    fn validate(&self, m: usize, n: usize) -> Result<(), NmfError> {
        if self.k < 1 {
            return Err(NmfError::InvalidConfig("k must be at least 1".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(NmfError::InvalidConfig(format!("tolerance {} must be positive", self.tolerance)));
        }
        if self.k > m.min(n) {
            return Err(NmfError::RankTooLarge { k: self.k, m, n });
        }
        Ok(())
    }
}

/// Document-topic `W` (m×k) and topic-term `H` (k×n).
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPair {
    pub w: DenseMatrix,
    pub h: DenseMatrix,
}

impl FactorPair {
    pub fn k(&self) -> usize {
        self.w.cols()
    }

    pub fn product(&self) -> DenseMatrix {
        self.w.matmul(&self.h)
    }

    fn check(&self, x: &CsrMatrix) -> Result<(), NmfError> {
        let (m, n) = x.shape();
        if self.w.rows() != m || self.h.cols() != n || self.w.cols() != self.h.rows() {
            return Err(NmfError::ShapeMismatch(format!(
                "X is {}x{}, W is {}x{}, H is {}x{}",
                m,
                n,
                self.w.rows(),
                self.w.cols(),
                self.h.rows(),
                self.h.cols()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverReport {
    /// Sweeps performed (one sweep = W update then H update).
    pub iterations: usize,
    /// Objective at the initial factors, then after every sweep.
    pub objective: Vec<f64>,
    pub converged: bool,
    pub wall_time: Duration,
    /// Reseed count per topic.
    pub reseeds: Vec<u32>,
}

impl SolverReport {
    pub fn final_objective(&self) -> f64 {
        *self.objective.last().expect("objective trace is never empty")
    }
}

fn run_in_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T, NmfError> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| NmfError::Pool(e.to_string()))?;
    Ok(pool.install(f))
}

/// `FᵀF` for a row-major `rows×k` factor, reduced in fixed block order.
fn gram(f: &DenseMatrix) -> DenseMatrix {
    let k = f.cols();
    let partials: Vec<Vec<f64>> = f
        .as_slice()
        .par_chunks(GRAM_BLOCK * k.max(1))
        .map(|block| {
            let mut g = vec![0.0; k * k];
            for row in block.chunks_exact(k) {
                for a in 0..k {
                    let ra = row[a];
                    if ra == 0.0 {
                        continue;
                    }
                    for b in 0..k {
                        g[a * k + b] += ra * row[b];
                    }
                }
            }
            g
        })
        .collect();
    let mut out = vec![0.0; k * k];
    for p in partials {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    DenseMatrix::from_vec(k, k, out)
}

/// `X·F` for sparse `X` (rows×cols) and dense `F` (cols×k).
fn sparse_times_dense(x: &CsrMatrix, f: &DenseMatrix) -> DenseMatrix {
    let k = f.cols();
    let mut out = DenseMatrix::zeros(x.nrows(), k);
    out.as_mut_slice().par_chunks_mut(k.max(1)).enumerate().for_each(|(i, acc)| {
        let (cols, vals) = x.row(i);
        for (&c, &v) in cols.iter().zip(vals) {
            for (a, b) in acc.iter_mut().zip(f.row(c)) {
                *a += v * b;
            }
        }
    });
    out
}

/// One HALS update of `factor` (rows×k), the row-side factor of
/// `x ≈ factor · otherᵀ` with `other` (cols×k). The Gram matrix and the
/// cross products with X are computed once; each row then gets up to
/// `INNER_PASSES` coordinate passes, stopping early once a pass moves the row
/// much less than the first one did. Returns the topics whose Gram diagonal
/// is zero; those columns are left untouched.
fn hals_sweep(x: &CsrMatrix, factor: &mut DenseMatrix, other: &DenseMatrix) -> Vec<usize> {
    let k = factor.cols();
    let c = gram(other);
    let degenerate: Vec<usize> = (0..k).filter(|&j| !(c.get(j, j) > 0.0)).collect();
    factor.as_mut_slice().par_chunks_mut(k).enumerate().for_each(|(i, row)| {
        let mut d = vec![0.0; k];
        let (cols, vals) = x.row(i);
        for (&col, &v) in cols.iter().zip(vals) {
            for (a, b) in d.iter_mut().zip(other.row(col)) {
                *a += v * b;
            }
        }
        let mut first_move = 0.0;
        for pass in 0..INNER_PASSES {
            let mut moved = 0.0;
            for j in 0..k {
                let cjj = c.get(j, j);
                if !(cjj > 0.0) {
                    continue;
                }
                let mut num = d[j];
                for l in 0..k {
                    if l != j {
                        num -= row[l] * c.get(l, j);
                    }
                }
                let next = (num / cjj).max(0.0);
                moved += (next - row[j]).powi(2);
                row[j] = next;
            }
            if pass == 0 {
                first_move = moved;
            } else if moved <= INNER_STOP * first_move {
                break;
            }
        }
    });
    degenerate
}

/// `⟨X, W·Htᵀ⟩` summed row by row in order.
fn cross_term(x: &CsrMatrix, w: &DenseMatrix, ht: &DenseMatrix) -> f64 {
    let per_row: Vec<f64> = (0..x.nrows())
        .into_par_iter()
        .map(|i| {
            let (cols, vals) = x.row(i);
            let wi = w.row(i);
            cols.iter()
                .zip(vals)
                .map(|(&c, &v)| v * wi.iter().zip(ht.row(c)).map(|(a, b)| a * b).sum::<f64>())
                .sum()
        })
        .collect();
    per_row.iter().sum()
}

fn objective_parts(x: &CsrMatrix, x_norm_sq: f64, w: &DenseMatrix, ht: &DenseMatrix) -> f64 {
    let gw = gram(w);
    let gh = gram(ht);
    let model_sq: f64 = gw.as_slice().iter().zip(gh.as_slice()).map(|(a, b)| a * b).sum();
    (0.5 * (x_norm_sq - 2.0 * cross_term(x, w, ht) + model_sq)).max(0.0)
}

/// `½‖X − WH‖²_F` via `‖X‖² − 2⟨X, WH⟩ + ⟨WᵀW, HHᵀ⟩`, without densifying X.
pub fn objective(x: &CsrMatrix, f: &FactorPair) -> Result<f64, NmfError> {
    f.check(x)?;
    Ok(objective_parts(x, x.frobenius_sq(), &f.w, &f.h.transpose()))
}

/// One HALS sweep over the rows of H. Returns the new H and the topics
/// flagged degenerate (zero column in W).
pub fn update_h(x: &CsrMatrix, w: &DenseMatrix, h: &DenseMatrix) -> Result<(DenseMatrix, Vec<usize>), NmfError> {
    FactorPair { w: w.clone(), h: h.clone() }.check(x)?;
    let mut ht = h.transpose();
    let flagged = hals_sweep(&x.transpose(), &mut ht, w);
    Ok((ht.transpose(), flagged))
}

/// One HALS sweep over the columns of W.
pub fn update_w(x: &CsrMatrix, w: &DenseMatrix, h: &DenseMatrix) -> Result<(DenseMatrix, Vec<usize>), NmfError> {
    FactorPair { w: w.clone(), h: h.clone() }.check(x)?;
    let mut w = w.clone();
    let flagged = hals_sweep(x, &mut w, &h.transpose());
    Ok((w, flagged))
}

/// Initial factors for `x`, fully determined by `config.seed`.
///
/// `RandomUniform` draws i.i.d. `uniform(0, 2·sqrt(mean(X)/k))` entries so
/// that `E[mean(WH)] = mean(X)`; W is filled row-major first, then H.
/// `Nndsvd` splits a truncated SVD into nonnegative parts.
pub fn init_factors(x: &CsrMatrix, config: &SolverConfig) -> Result<FactorPair, NmfError> {
    let (m, n) = x.shape();
    config.validate(m, n)?;
    let k = config.k;
    match config.init {
        InitStrategy::RandomUniform => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let scale = 2.0 * (x.mean() / k as f64).sqrt();
            let w = DenseMatrix::from_fn(m, k, |_, _| rng.gen::<f64>() * scale);
            let h = DenseMatrix::from_fn(k, n, |_, _| rng.gen::<f64>() * scale);
            Ok(FactorPair { w, h })
        }
        InitStrategy::Nndsvd => Ok(nndsvd(x, k, config.seed)),
    }
}

fn normalize_columns(q: &mut DenseMatrix) {
    let (rows, k) = q.shape();
    for j in 0..k {
        for prev in 0..j {
            let dot: f64 = (0..rows).map(|r| q.get(r, j) * q.get(r, prev)).sum();
            for r in 0..rows {
                let v = q.get(r, j) - dot * q.get(r, prev);
                q.set(r, j, v);
            }
        }
        let norm = (0..rows).map(|r| q.get(r, j).powi(2)).sum::<f64>().sqrt();
        for r in 0..rows {
            let v = if norm > 1e-12 { q.get(r, j) / norm } else { 0.0 };
            q.set(r, j, v);
        }
    }
}

/// Leading `k` singular triplets by subspace iteration: `(σ, U (m×k), V (n×k))`.
fn truncated_svd(x: &CsrMatrix, k: usize, seed: u64) -> (Vec<f64>, DenseMatrix, DenseMatrix) {
    let xt = x.transpose();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = DenseMatrix::from_fn(x.ncols(), k, |_, _| rng.gen::<f64>() - 0.5);
    normalize_columns(&mut q);
    for _ in 0..POWER_ITERATIONS {
        let y = sparse_times_dense(x, &q);
        q = sparse_times_dense(&xt, &y);
        normalize_columns(&mut q);
    }
    let b = sparse_times_dense(x, &q);
    let btb = gram(&b);
    let eig = nalgebra::SymmetricEigen::new(nalgebra::DMatrix::from_row_slice(k, k, btb.as_slice()));
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let sigma: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0).sqrt()).collect();
    let rotate = |src: &DenseMatrix| {
        DenseMatrix::from_fn(src.rows(), k, |r, j| (0..k).map(|l| src.get(r, l) * eig.eigenvectors[(l, order[j])]).sum())
    };
    let v = rotate(&q);
    let mut u = rotate(&b);
    for (j, s) in sigma.iter().enumerate() {
        for r in 0..u.rows() {
            let val = if *s > 0.0 { u.get(r, j) / s } else { 0.0 };
            u.set(r, j, val);
        }
    }
    (sigma, u, v)
}

fn nndsvd(x: &CsrMatrix, k: usize, seed: u64) -> FactorPair {
    let (m, n) = x.shape();
    let (sigma, u, v) = truncated_svd(x, k, seed);
    let mut w = DenseMatrix::zeros(m, k);
    let mut h = DenseMatrix::zeros(k, n);
    let norm = |s: &[f64]| s.iter().map(|a| a * a).sum::<f64>().sqrt();
    for j in 0..k {
        let uj = u.column(j);
        let vj = v.column(j);
        let (x_part, y_part, mass) = if j == 0 {
            let ua: Vec<f64> = uj.iter().map(|a| a.abs()).collect();
            let va: Vec<f64> = vj.iter().map(|a| a.abs()).collect();
            let (nu, nv) = (norm(&ua), norm(&va));
            (ua, va, nu * nv)
        } else {
            let pos = |s: &[f64]| s.iter().map(|a| a.max(0.0)).collect::<Vec<f64>>();
            let neg = |s: &[f64]| s.iter().map(|a| (-a).max(0.0)).collect::<Vec<f64>>();
            let (up, un, vp, vn) = (pos(&uj), neg(&uj), pos(&vj), neg(&vj));
            let mp = norm(&up) * norm(&vp);
            let mn = norm(&un) * norm(&vn);
            if mp >= mn {
                (up, vp, mp)
            } else {
                (un, vn, mn)
            }
        };
        let (nx, ny) = (norm(&x_part), norm(&y_part));
        if nx == 0.0 || ny == 0.0 {
            continue;
        }
        let scale = (sigma[j] * mass).sqrt();
        for r in 0..m {
            w.set(r, j, scale * x_part[r] / nx);
        }
        for c in 0..n {
            h.set(j, c, scale * y_part[c] / ny);
        }
    }
    FactorPair { w, h }
}

/// Squared residual norm of each row of `X − W·Htᵀ`.
fn residual_row_norms(x: &CsrMatrix, w: &DenseMatrix, ht: &DenseMatrix) -> Vec<f64> {
    let gh = gram(ht);
    let k = w.cols();
    (0..x.nrows())
        .into_par_iter()
        .map(|i| {
            let wi = w.row(i);
            let (cols, vals) = x.row(i);
            let cross: f64 =
                cols.iter().zip(vals).map(|(&c, &v)| v * wi.iter().zip(ht.row(c)).map(|(a, b)| a * b).sum::<f64>()).sum();
            let mut model = 0.0;
            for a in 0..k {
                for b in 0..k {
                    model += wi[a] * gh.get(a, b) * wi[b];
                }
            }
            x.row_norm_sq(i) - 2.0 * cross + model
        })
        .collect()
}

/// Replaces topic `j` with the nonnegative residual of the worst-fit row.
/// `W[:, j]` is zeroed first, so `WH` and the objective are unchanged.
fn reseed_topic(x: &CsrMatrix, w: &mut DenseMatrix, ht: &mut DenseMatrix, j: usize) {
    for i in 0..w.rows() {
        w.set(i, j, 0.0);
    }
    let norms = residual_row_norms(x, w, ht);
    let worst = norms
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &r)| if r > best.1 { (i, r) } else { best })
        .0;
    let n = ht.rows();
    let mut dense_row = vec![0.0; n];
    let (cols, vals) = x.row(worst);
    for (&c, &v) in cols.iter().zip(vals) {
        dense_row[c] = v;
    }
    let wi = w.row(worst).to_vec();
    let residual: Vec<f64> = (0..n)
        .map(|c| (dense_row[c] - wi.iter().zip(ht.row(c)).map(|(a, b)| a * b).sum::<f64>()).max(0.0))
        .collect();
    let source = if residual.iter().any(|v| *v > 0.0) { residual } else { dense_row };
    for (c, v) in source.into_iter().enumerate() {
        ht.set(c, j, v);
    }
}

fn zero_topics(w: &DenseMatrix, ht: &DenseMatrix) -> Vec<usize> {
    (0..w.cols())
        .filter(|&j| (0..ht.rows()).all(|c| ht.get(c, j) == 0.0) || (0..w.rows()).all(|i| w.get(i, j) == 0.0))
        .collect()
}

/// Step-size control for extrapolated iterates: the weight grows while steps
/// keep lowering the objective and shrinks after an overshoot.
struct Momentum {
    beta: f64,
    cap: f64,
}

impl Momentum {
    const GROW: f64 = 1.05;
    const CAP_GROW: f64 = 1.01;
    const SHRINK: f64 = 1.5;

    fn new() -> Self {
        Self { beta: 0.5, cap: 1.0 }
    }

    fn accept(&mut self) {
        self.beta = (self.beta * Self::GROW).min(self.cap);
        self.cap = (self.cap * Self::CAP_GROW).min(1.0);
    }

    fn reject(&mut self) {
        self.cap = self.beta;
        self.beta /= Self::SHRINK;
    }
}

/// `max(0, current + beta·(current − previous))`.
fn extrapolated(current: &DenseMatrix, previous: &DenseMatrix, beta: f64) -> DenseMatrix {
    let mut out = current.clone();
    out.as_mut_slice().par_iter_mut().zip(previous.as_slice().par_iter()).for_each(|(c, p)| {
        *c = (*c + beta * (*c - *p)).max(0.0);
    });
    out
}

/// Alternates W and H sweeps until the relative objective change drops below
/// `config.tolerance` or `config.max_iterations` sweeps have run. On return the
/// rows of H have unit L2 norm, with the scale folded into W.
pub fn solve(x: &CsrMatrix, config: &SolverConfig) -> Result<(FactorPair, SolverReport), NmfError> {
    let (m, n) = x.shape();
    config.validate(m, n)?;
    if x.nnz() == 0 {
        return Err(NmfError::NothingToFactorize);
    }
    let init = init_factors(x, config)?;
    run_in_pool(config.workers, || solve_from(x, init, config))?
}

/// [`solve`] starting from the given factors.
pub fn solve_from(
    x: &CsrMatrix,
    init: FactorPair,
    config: &SolverConfig,
) -> Result<(FactorPair, SolverReport), NmfError> {
    init.check(x)?;
    if x.nnz() == 0 {
        return Err(NmfError::NothingToFactorize);
    }
    let start = Instant::now();
    let m = x.nrows();
    let k = init.k();
    let xt = x.transpose();
    let x_norm_sq = x.frobenius_sq();
    let mut w = init.w;
    let mut ht = init.h.transpose();
    let mut reseeds = vec![0u32; k];
    let mut exhausted_warned = vec![false; k];
    let mut trace = vec![objective_parts(x, x_norm_sq, &w, &ht)];
    let mut converged = false;
    let mut iterations = 0;

    let mut momentum = Momentum::new();
    // extrapolated point the next step starts from
    let mut wy = w.clone();
    let mut hty = ht.clone();

    while iterations < config.max_iterations {
        let prev = *trace.last().unwrap();
        let (mut w1, mut ht1) = (wy.clone(), hty.clone());
        hals_sweep(x, &mut w1, &ht1);
        hals_sweep(&xt, &mut ht1, &w1);
        let mut f = objective_parts(x, x_norm_sq, &w1, &ht1);
        if f > prev {
            // the extrapolated start overshot: plain step from the accepted point
            momentum.reject();
            w1 = w.clone();
            ht1 = ht.clone();
            hals_sweep(x, &mut w1, &ht1);
            hals_sweep(&xt, &mut ht1, &w1);
            f = objective_parts(x, x_norm_sq, &w1, &ht1);
        } else {
            momentum.accept();
        }
        iterations += 1;

        let mut reseeded = false;
        for j in zero_topics(&w1, &ht1) {
            if reseeds[j] < MAX_RESEEDS {
                reseed_topic(x, &mut w1, &mut ht1, j);
                reseeds[j] += 1;
                reseeded = true;
                debug!("topic {j} collapsed; reseed {} of {MAX_RESEEDS}", reseeds[j]);
            } else if !exhausted_warned[j] {
                warn!("topic {j} collapsed after {MAX_RESEEDS} reseeds; leaving it empty");
                exhausted_warned[j] = true;
            }
        }

        if !reseeded {
            wy = extrapolated(&w1, &w, momentum.beta);
            hty = extrapolated(&ht1, &ht, momentum.beta);
        } else {
            momentum = Momentum::new();
            wy = w1.clone();
            hty = ht1.clone();
        }
        w = w1;
        ht = ht1;
        trace.push(f);
        if !reseeded && (prev - f).abs() / prev.max(CONVERGENCE_EPS) < config.tolerance {
            converged = true;
            break;
        }
    }

    let mut h = ht.transpose();
    for j in 0..k {
        let norm = h.row(j).iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            h.row_mut(j).iter_mut().for_each(|v| *v /= norm);
            for i in 0..m {
                let v = w.get(i, j) * norm;
                w.set(i, j, v);
            }
        }
    }
    let report = SolverReport { iterations, objective: trace, converged, wall_time: start.elapsed(), reseeds };
    Ok((FactorPair { w, h }, report))
}

/// Solver settings and trace stored next to persisted factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorSidecar {
    pub format_version: u32,
    pub config: SolverConfig,
    pub iterations: usize,
    pub converged: bool,
    pub objective: Vec<f64>,
    pub reseeds: Vec<u32>,
}

impl FactorSidecar {
    pub fn new(config: &SolverConfig, report: &SolverReport) -> Self {
        Self {
            format_version: FACTOR_VERSION,
            config: config.clone(),
            iterations: report.iterations,
            converged: report.converged,
            objective: report.objective.clone(),
            reseeds: report.reseeds.clone(),
        }
    }
}

/// Binary container: magic `TTNF`, u32 version, u64 m, n, k, then W and H
/// row-major as little-endian f64.
pub fn write_factors<W: Write>(writer: W, f: &FactorPair) -> io::Result<()> {
    let mut out = BufWriter::new(writer);
    out.write_all(FACTOR_MAGIC)?;
    binfmt::write_u32(&mut out, FACTOR_VERSION)?;
    binfmt::write_u64(&mut out, f.w.rows() as u64)?;
    binfmt::write_u64(&mut out, f.h.cols() as u64)?;
    binfmt::write_u64(&mut out, f.k() as u64)?;
    binfmt::write_f64s(&mut out, f.w.as_slice())?;
    binfmt::write_f64s(&mut out, f.h.as_slice())?;
    out.flush()
}

pub fn read_factors<R: Read>(reader: R) -> Result<FactorPair, NmfError> {
    let mut r = BufReader::new(reader);
    if &binfmt::read_exact::<4, _>(&mut r)? != FACTOR_MAGIC {
        return Err(NmfError::Format("bad magic".into()));
    }
    let version = binfmt::read_u32(&mut r)?;
    if version != FACTOR_VERSION {
        return Err(NmfError::Format(format!("unsupported version {version}")));
    }
    let m = binfmt::read_len(&mut r)?;
    let n = binfmt::read_len(&mut r)?;
    let k = binfmt::read_len(&mut r)?;
    let w = DenseMatrix::from_vec(m, k, binfmt::read_f64s(&mut r, m * k)?);
    let h = DenseMatrix::from_vec(k, n, binfmt::read_f64s(&mut r, k * n)?);
    binfmt::expect_eof(&mut r)?;
    Ok(FactorPair { w, h })
}

pub fn save_factors(f: &FactorPair, sidecar: &FactorSidecar, bin_path: &Path, json_path: &Path) -> Result<(), NmfError> {
    write_factors(File::create(bin_path)?, f)?;
    let mut w = BufWriter::new(File::create(json_path)?);
    serde_json::to_writer_pretty(&mut w, sidecar)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_factors(bin_path: &Path, json_path: &Path) -> Result<(FactorPair, FactorSidecar), NmfError> {
    let f = read_factors(File::open(bin_path)?)?;
    let sidecar: FactorSidecar = serde_json::from_reader(BufReader::new(File::open(json_path)?))?;
    if sidecar.config.k != f.k() {
        return Err(NmfError::Format(format!("sidecar k = {} but factors have k = {}", sidecar.config.k, f.k())));
    }
    Ok((f, sidecar))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_dense(rows: usize, cols: usize, seed: u64, density: f64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseMatrix::from_fn(rows, cols, |_, _| if rng.gen::<f64>() < density { rng.gen::<f64>() } else { 0.0 })
    }

    /// Objective straight from the definition on a dense X.
    fn dense_objective(x: &DenseMatrix, f: &FactorPair) -> f64 {
        let wh = f.product();
        0.5 * x.as_slice().iter().zip(wh.as_slice()).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
    }

    #[test]
    fn objective_matches_dense_oracle() {
        for (m, n, k, seed) in [(3, 4, 2, 1), (10, 7, 3, 2), (50, 80, 5, 3)] {
            let xd = random_dense(m, n, seed, 0.4);
            let x = CsrMatrix::from_dense(&xd).unwrap();
            let f = FactorPair { w: random_dense(m, k, seed + 10, 1.0), h: random_dense(k, n, seed + 20, 1.0) };
            let got = objective(&x, &f).unwrap();
            let want = dense_objective(&xd, &f);
            assert!((got - want).abs() <= 1e-6 * want, "{got} vs {want}");
        }
    }

    #[test]
    fn objective_special_cases() {
        let w = random_dense(6, 2, 1, 1.0);
        let h = random_dense(2, 5, 2, 1.0);
        let f = FactorPair { w: w.clone(), h: h.clone() };
        let x = CsrMatrix::from_dense(&f.product()).unwrap();
        assert!(objective(&x, &f).unwrap() < 1e-9);

        let zeros = FactorPair { w: DenseMatrix::zeros(6, 2), h: DenseMatrix::zeros(2, 5) };
        assert!((objective(&x, &zeros).unwrap() - 0.5 * x.frobenius_sq()).abs() < 1e-12);

        let bad = FactorPair { w: DenseMatrix::zeros(5, 2), h };
        assert!(matches!(objective(&x, &bad), Err(NmfError::ShapeMismatch(_))));
    }

    #[test]
    fn init_is_seeded() {
        let x = CsrMatrix::from_dense(&random_dense(30, 40, 5, 0.3)).unwrap();
        let a = init_factors(&x, &SolverConfig::new(4, 7)).unwrap();
        let b = init_factors(&x, &SolverConfig::new(4, 7)).unwrap();
        let c = init_factors(&x, &SolverConfig::new(4, 8)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.w.min_value() >= 0.0 && a.h.min_value() >= 0.0);
        assert!(matches!(init_factors(&x, &SolverConfig::new(31, 1)), Err(NmfError::RankTooLarge { .. })));
    }

    #[test]
    fn init_scale_tracks_data_mean() {
        let xd = random_dense(60, 90, 11, 0.25);
        let x = CsrMatrix::from_dense(&xd).unwrap();
        for seed in 0..5 {
            let f = init_factors(&x, &SolverConfig::new(5, seed)).unwrap();
            let wh = f.product();
            let ratio = (wh.as_slice().iter().sum::<f64>() / (60.0 * 90.0)) / x.mean();
            assert!((0.25..=4.0).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn nndsvd_init_is_nonnegative_and_good() {
        let w = random_dense(40, 3, 1, 1.0);
        let h = random_dense(3, 30, 2, 0.5);
        let x = CsrMatrix::from_dense(&w.matmul(&h)).unwrap();
        let mut cfg = SolverConfig::new(3, 9);
        cfg.init = InitStrategy::Nndsvd;
        let f = init_factors(&x, &cfg).unwrap();
        assert!(f.w.min_value() >= 0.0 && f.h.min_value() >= 0.0);
        let zeros = FactorPair { w: DenseMatrix::zeros(40, 3), h: DenseMatrix::zeros(3, 30) };
        assert!(objective(&x, &f).unwrap() < 0.5 * objective(&x, &zeros).unwrap());
        assert_eq!(f, init_factors(&x, &cfg).unwrap());
    }

    #[test]
    fn exact_factorization_is_fixed_point() {
        let w = random_dense(8, 3, 3, 1.0);
        let h = random_dense(3, 6, 4, 1.0);
        let x = CsrMatrix::from_dense(&w.matmul(&h)).unwrap();
        let (h2, flagged) = update_h(&x, &w, &h).unwrap();
        assert!(flagged.is_empty());
        for (a, b) in h.as_slice().iter().zip(h2.as_slice()) {
            assert!((a - b).abs() < 1e-9);
        }
        let (w2, _) = update_w(&x, &w, &h).unwrap();
        for (a, b) in w.as_slice().iter().zip(w2.as_slice()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn updates_do_not_increase_objective() {
        let x = CsrMatrix::from_dense(&random_dense(5, 6, 21, 0.6)).unwrap();
        let f = init_factors(&x, &SolverConfig::new(2, 3)).unwrap();
        let before = objective(&x, &f).unwrap();
        let (h, _) = update_h(&x, &f.w, &f.h).unwrap();
        let mid = objective(&x, &FactorPair { w: f.w.clone(), h: h.clone() }).unwrap();
        let (w, _) = update_w(&x, &f.w, &h).unwrap();
        let after = objective(&x, &FactorPair { w, h }).unwrap();
        assert!(mid <= before + 1e-12 && after <= mid + 1e-12, "{before} {mid} {after}");
    }

    #[test]
    fn single_topic_closed_form() {
        let xd = random_dense(7, 5, 31, 0.7);
        let x = CsrMatrix::from_dense(&xd).unwrap();
        let w = random_dense(7, 1, 32, 1.0);
        let h = random_dense(1, 5, 33, 1.0);
        let (h2, _) = update_h(&x, &w, &h).unwrap();
        let wtw: f64 = w.as_slice().iter().map(|v| v * v).sum();
        for c in 0..5 {
            let wtx: f64 = (0..7).map(|r| w.get(r, 0) * xd.get(r, c)).sum();
            assert!((h2.get(0, c) - (wtx.max(0.0) / wtw)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_column_flags_topic() {
        let x = CsrMatrix::from_dense(&random_dense(4, 4, 41, 1.0)).unwrap();
        let mut w = random_dense(4, 2, 42, 1.0);
        for r in 0..4 {
            w.set(r, 1, 0.0);
        }
        let h = random_dense(2, 4, 43, 1.0);
        let (h2, flagged) = update_h(&x, &w, &h).unwrap();
        assert_eq!(flagged, vec![1]);
        assert_eq!(h2.row(1), h.row(1));
    }

    #[test]
    fn solve_recovers_planted_factors() {
        let w = random_dense(20, 2, 51, 1.0);
        let h = random_dense(2, 30, 52, 0.7);
        let xd = w.matmul(&h);
        let x = CsrMatrix::from_dense(&xd).unwrap();
        let mut cfg = SolverConfig::new(2, 1);
        cfg.tolerance = 1e-12;
        cfg.max_iterations = 500;
        let (f, report) = solve(&x, &cfg).unwrap();
        let rel = (2.0 * report.final_objective()).sqrt() / xd.frobenius_norm();
        assert!(rel < 1e-3, "relative error {rel}");
        for pair in report.objective.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-10);
        }
        for j in 0..2 {
            let norm = f.h.row(j).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn full_rank_fits_exactly() {
        let xd = random_dense(6, 6, 61, 1.0);
        let x = CsrMatrix::from_dense(&xd).unwrap();
        let mut cfg = SolverConfig::new(6, 2);
        cfg.tolerance = 1e-14;
        cfg.max_iterations = 3000;
        let (_, report) = solve(&x, &cfg).unwrap();
        let rel = (2.0 * report.final_objective()).sqrt() / xd.frobenius_norm();
        assert!(rel < 1e-2, "relative error {rel}");
    }

    #[test]
    fn solve_rejects_zero_matrix() {
        let x = CsrMatrix::from_rows(3, &[vec![], vec![]]).unwrap();
        assert!(matches!(solve(&x, &SolverConfig::new(1, 0)), Err(NmfError::NothingToFactorize)));
    }

    #[test]
    fn normalization_preserves_product() {
        let x = CsrMatrix::from_dense(&random_dense(12, 9, 71, 0.5)).unwrap();
        let cfg = SolverConfig::new(3, 4);
        let init = init_factors(&x, &cfg).unwrap();
        let mut one = cfg.clone();
        one.max_iterations = 1;
        let (f, _) = solve_from(&x, init.clone(), &one).unwrap();
        // the same single sweep without the final rescaling
        let mut w = init.w.clone();
        let mut ht = init.h.transpose();
        hals_sweep(&x, &mut w, &ht);
        hals_sweep(&x.transpose(), &mut ht, &w);
        let raw = w.matmul(&ht.transpose());
        let scaled = f.product();
        for (a, b) in raw.as_slice().iter().zip(scaled.as_slice()) {
            assert!((a - b).abs() <= 1e-9 * a.abs().max(1e-12));
        }
    }

    #[test]
    fn deterministic_across_workers() {
        let x = CsrMatrix::from_dense(&random_dense(700, 60, 81, 0.1)).unwrap();
        let mut cfg = SolverConfig::new(4, 5);
        cfg.max_iterations = 30;
        cfg.workers = 1;
        let (a, ra) = solve(&x, &cfg).unwrap();
        cfg.workers = 4;
        let (b, rb) = solve(&x, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra.objective, rb.objective);
    }

    #[test]
    fn factor_round_trip() {
        let f = FactorPair { w: random_dense(5, 2, 1, 1.0), h: random_dense(2, 7, 2, 1.0) };
        let cfg = SolverConfig::new(2, 99);
        let report = SolverReport {
            iterations: 3,
            objective: vec![3.0, 2.0, 1.5, 1.25],
            converged: false,
            wall_time: Duration::from_millis(5),
            reseeds: vec![0, 1],
        };
        let dir = tempfile::tempdir().unwrap();
        let (bin, json) = (dir.path().join("f.bin"), dir.path().join("f.json"));
        save_factors(&f, &FactorSidecar::new(&cfg, &report), &bin, &json).unwrap();
        let (back, sidecar) = load_factors(&bin, &json).unwrap();
        assert_eq!(back, f);
        assert_eq!(sidecar.config.seed, 99);
        assert_eq!(sidecar.objective, report.objective);
        let bytes = std::fs::read(&bin).unwrap();
        assert_eq!(bytes.len(), 4 + 4 + 24 + 8 * (10 + 14));
    }
}
