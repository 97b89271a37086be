//! Seeded recovery trials, minimal sample-size search and sweeps over `N`.

use std::time::Instant;

use blockspin::fluctuations::{power_law_fit, PowerLawFit};
use blockspin::recovery::{recover, recovery_error, RecoverOptions};
use blockspin::sampler::ExactSampler;
use blockspin::{glauber_sample, ModelParams, Partition, Result, SeedSpec, WeightTable};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::SamplerSpec;

/// Multiplicative resolution of the bisection stage.
pub const GRID_RATIO: f64 = 1.05;

/// Trials are run in fixed-size chunks so that early stopping does not
/// depend on the thread count.
const CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub trial_index: usize,
    pub seed: SeedSpec,
    pub n_sites: usize,
    pub n_obs: usize,
    pub exact: bool,
    pub error: f64,
    pub objective: f64,
    pub wall_time_ms: f64,
}

/// One recovery attempt per `(n_obs, trial_index)`.
pub trait TrialOracle: Sync {
    fn n_sites(&self) -> usize;
    fn trial(&self, n_obs: usize, trial_index: usize) -> Result<TrialRecord>;
}

/// Draws a random balanced partition and a batch from the trial's stream,
/// then runs the recovery pipeline.
pub struct RecoveryOracle {
    params: ModelParams,
    table: Option<WeightTable>,
    sampler: SamplerSpec,
    master_seed: u64,
    options: RecoverOptions,
}

impl RecoveryOracle {
    pub fn new(params: ModelParams, sampler: SamplerSpec, master_seed: u64, options: RecoverOptions) -> Result<Self> {
        let table = match sampler {
            SamplerSpec::Exact => Some(WeightTable::build(&params)?),
            SamplerSpec::Glauber { .. } => None,
        };
        Ok(Self { params, table, sampler, master_seed, options })
    }
}

impl TrialOracle for RecoveryOracle {
    fn n_sites(&self) -> usize {
        self.params.n_sites()
    }

    fn trial(&self, n_obs: usize, trial_index: usize) -> Result<TrialRecord> {
        let start = Instant::now();
        let seed = SeedSpec::new(self.master_seed, trial_index as u64);
        let mut rng = seed.rng();
        let truth = Partition::random(self.params.n_sites(), &mut rng)?;
        let batch = match (self.sampler, &self.table) {
            (SamplerSpec::Exact, Some(table)) => ExactSampler::new(table).sample_with(&truth, &mut rng, n_obs)?,
            (SamplerSpec::Glauber { sweeps }, _) => {
                glauber_sample(&self.params, &truth, SeedSpec::new(rng.random(), 0), sweeps, n_obs)?
            }
            (SamplerSpec::Exact, None) => unreachable!("exact oracle always holds a table"),
        };
        let mut opts = self.options;
        opts.sdp.seed = SeedSpec::new(rng.random(), 0);
        let (exact, error, objective) = if n_obs == 0 {
            (false, 0.5, 0.0)
        } else {
            let res = recover(&batch, &opts)?;
            let error = recovery_error(&res.estimate, &truth)?;
            (error == 0.0, error, res.objective)
        };
        Ok(TrialRecord {
            trial_index,
            seed,
            n_sites: self.params.n_sites(),
            n_obs,
            exact,
            error,
            objective,
            wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    }
}

/// Succeeds exactly when `n_obs >= threshold`; no model in the loop.
pub struct ThresholdOracle {
    pub n_sites: usize,
    pub threshold: f64,
}

impl TrialOracle for ThresholdOracle {
    fn n_sites(&self) -> usize {
        self.n_sites
    }

    fn trial(&self, n_obs: usize, trial_index: usize) -> Result<TrialRecord> {
        let exact = n_obs as f64 >= self.threshold;
        Ok(TrialRecord {
            trial_index,
            seed: SeedSpec::new(0, trial_index as u64),
            n_sites: self.n_sites,
            n_obs,
            exact,
            error: if exact { 0.0 } else { 0.5 },
            objective: 0.0,
            wall_time_ms: 0.0,
        })
    }
}

/// Result of running up to `trials` trials at one `n_obs`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellOutcome {
    pub n_obs: usize,
    pub successes: usize,
    /// Trials actually run; fewer than requested once failure was certain.
    pub trials_run: usize,
    pub success: bool,
}

/// Successes needed out of `trials` for an empirical rate of at least
/// `1 - delta`.
pub fn required_successes(trials: usize, delta: f64) -> usize {
    ((1.0 - delta) * trials as f64 - 1e-9).ceil().max(0.0) as usize
}

pub fn evaluate_cell<O: TrialOracle>(oracle: &O, n_obs: usize, trials: usize, delta: f64) -> Result<(CellOutcome, Vec<TrialRecord>)> {
    let needed = required_successes(trials, delta);
    let allowed_failures = trials - needed;
    let mut records = Vec::with_capacity(trials);
    let mut failures = 0;
    let mut next = 0;
    while next < trials && failures <= allowed_failures {
        let end = (next + CHUNK).min(trials);
        let chunk: Vec<TrialRecord> =
            (next..end).into_par_iter().map(|t| oracle.trial(n_obs, t)).collect::<Result<_>>()?;
        failures += chunk.iter().filter(|r| !r.exact).count();
        records.extend(chunk);
        next = end;
    }
    let successes = records.iter().filter(|r| r.exact).count();
    let outcome = CellOutcome { n_obs, successes, trials_run: records.len(), success: successes >= needed };
    Ok((outcome, records))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MinimalN {
    pub n_sites: usize,
    /// `None` when `n_hi` was reached without success.
    pub n_min: Option<usize>,
    pub censored: bool,
    /// Success rate at `n_min`, or at the last size tried when censored.
    pub success_rate: f64,
    pub evaluations: Vec<CellOutcome>,
}

/// Smallest `n` with empirical success rate at least `1 - delta`: doubling
/// from `n_lo` (capped at `n_hi`), then geometric bisection until the
/// bracket ratio is at most [`GRID_RATIO`].
pub fn find_minimal_n<O: TrialOracle>(oracle: &O, delta: f64, trials: usize, n_lo: usize, n_hi: usize) -> Result<MinimalN> {
    if n_lo == 0 || n_lo >= n_hi {
        return Err(blockspin::Error::InvalidArgument(format!("need 0 < n_lo < n_hi, got {n_lo}, {n_hi}")));
    }
    if trials == 0 || !(delta > 0.0 && delta < 1.0) {
        return Err(blockspin::Error::InvalidArgument(format!("need trials >= 1 and 0 < delta < 1, got {trials}, {delta}")));
    }
    let mut evaluations = Vec::new();
    let mut eval = |n: usize| -> Result<CellOutcome> {
        let (cell, _) = evaluate_cell(oracle, n, trials, delta)?;
        log::debug!("N={} n={} successes={}/{}", oracle.n_sites(), n, cell.successes, cell.trials_run);
        evaluations.push(cell.clone());
        Ok(cell)
    };
    let rate = |c: &CellOutcome| c.successes as f64 / c.trials_run as f64;

    let first = eval(n_lo)?;
    if first.success {
        let success_rate = rate(&first);
        return Ok(MinimalN { n_sites: oracle.n_sites(), n_min: Some(n_lo), censored: false, success_rate, evaluations });
    }
    let mut lo = n_lo;
    let (mut hi, mut hi_cell) = loop {
        let n = (lo * 2).min(n_hi);
        let cell = eval(n)?;
        if cell.success {
            break (n, cell);
        }
        if n == n_hi {
            let success_rate = rate(&cell);
            return Ok(MinimalN { n_sites: oracle.n_sites(), n_min: None, censored: true, success_rate, evaluations });
        }
        lo = n;
    };
    while hi as f64 > lo as f64 * GRID_RATIO {
        let mid = ((lo as f64) * (hi as f64)).sqrt().round() as usize;
        if mid <= lo || mid >= hi {
            break;
        }
        let cell = eval(mid)?;
        if cell.success {
            hi = mid;
            hi_cell = cell;
        } else {
            lo = mid;
        }
    }
    let success_rate = rate(&hi_cell);
    Ok(MinimalN { n_sites: oracle.n_sites(), n_min: Some(hi), censored: false, success_rate, evaluations })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub beta: f64,
    pub n_sites: usize,
    pub n_min: Option<usize>,
    pub success_rate: f64,
    pub trials: usize,
    pub censored: bool,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// Log-log fit of `n_min` against `N` over uncensored rows.
    pub fit: Option<PowerLawFit>,
    /// `n_min` nondecreasing in `N` up to one grid step.
    pub monotone: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSpec {
    pub delta: f64,
    pub trials: usize,
    pub n_lo: usize,
    pub n_hi: usize,
}

/// Run [`find_minimal_n`] for each `N` with the oracle built by `make`.
pub fn run_sweep<O, F>(grid: &[usize], spec: SweepSpec, alpha: f64, beta: f64, make: F) -> Result<SweepResult>
where
    O: TrialOracle,
    F: Fn(usize) -> Result<O>,
{
    let mut rows = Vec::with_capacity(grid.len());
    for &n in grid {
        let oracle = make(n)?;
        let found = find_minimal_n(&oracle, spec.delta, spec.trials, spec.n_lo, spec.n_hi)?;
        log::info!("alpha={alpha} N={n} n_min={:?}", found.n_min);
        rows.push(SweepRow {
            alpha,
            beta,
            n_sites: n,
            n_min: found.n_min,
            success_rate: found.success_rate,
            trials: spec.trials,
            censored: found.censored,
            evaluations: found.evaluations.len(),
        });
    }
    Ok(summarize(rows))
}

pub fn summarize(rows: Vec<SweepRow>) -> SweepResult {
    let points: Vec<(f64, f64)> =
        rows.iter().filter_map(|r| r.n_min.map(|m| (r.n_sites as f64, m as f64))).collect();
    let fit = if points.len() >= 2 { power_law_fit(&points, 2).ok() } else { None };
    let mut monotone = true;
    let mut prev: Option<usize> = None;
    for r in &rows {
        if let Some(m) = r.n_min {
            if prev.is_some_and(|p| (m as f64) * GRID_RATIO < p as f64) {
                monotone = false;
            }
            prev = Some(m);
        }
    }
    SweepResult { rows, fit, monotone }
}

/// Sweeps at `(a, 2 - a)` and `(-a, 2 - a)` for `a = |alpha|`, and the
/// difference of their fitted exponents (positive branch minus negative).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedSweep {
    pub positive: SweepResult,
    pub negative: SweepResult,
    pub exponent_difference: Option<f64>,
}

pub fn exponent_difference(positive: &SweepResult, negative: &SweepResult) -> Option<f64> {
    Some(positive.fit?.slope - negative.fit?.slope)
}

/// Recovery sweeps on both sides of the critical line.
pub fn run_paired_recovery_sweep(
    grid: &[usize],
    spec: SweepSpec,
    alpha: f64,
    sampler: SamplerSpec,
    master_seed: u64,
    options: RecoverOptions,
) -> Result<PairedSweep> {
    let a = alpha.abs();
    let beta = 2.0 - a;
    let side = |alpha: f64| {
        run_sweep(grid, spec, alpha, beta, |n| {
            RecoveryOracle::new(ModelParams::new(n, alpha, beta)?, sampler, master_seed, options)
        })
    };
    let positive = side(a)?;
    let negative = side(-a)?;
    let exponent_difference = exponent_difference(&positive, &negative);
    Ok(PairedSweep { positive, negative, exponent_difference })
}
