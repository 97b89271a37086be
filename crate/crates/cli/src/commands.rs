//! The five subcommands. Each writes its data to the resolved output and
//! returns a JSON summary.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use blockspin::fluctuations::{
    exact_statistic_law, exact_statistic_moments, gap_scaling_exponent, ks_distance, ks_distance_discrete,
    PowerLawFit,
};
use blockspin::io::{load_batch, load_partition, write_batch_binary, write_batch_csv, write_partition};
use blockspin::recovery::recover;
use blockspin::{
    classify_regime, correlation_gap, exact_correlations, exact_sample, glauber_sample, predict_limit,
    quartic_law, recovery_error, scaled_statistic, Error, LimitLaw, Partition, Result, StatKind,
    WeightTable,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, OutputFormat, SamplerSpec, SCHEMA_VERSION};
use crate::harness::{run_paired_recovery_sweep, run_sweep, RecoveryOracle, SweepResult, SweepRow, SweepSpec};

/// Where results go: a file, or stdout when no path is set.
#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    pub path: Option<PathBuf>,
    pub format: OutputFormat,
}

impl Output {
    fn writer(&self) -> Result<Box<dyn Write>> {
        Ok(match &self.path {
            Some(p) => Box::new(BufWriter::new(File::create(p)?)),
            None => Box::new(io::stdout().lock()),
        })
    }

    fn path_value(&self) -> Value {
        self.path.as_ref().map_or(Value::Null, |p| json!(p.display().to_string()))
    }
}

fn unsupported(command: &str, format: OutputFormat) -> Error {
    Error::InvalidArgument(format!("{command} cannot write {format:?} output"))
}

fn write_json<T: Serialize>(out: &Output, value: &T) -> Result<()> {
    let mut w = out.writer()?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Io(e.into()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn write_csv_rows<T: Serialize>(out: &Output, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out.writer()?);
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::Malformed(format!("{other:?}")),
    }
}

fn partition_for(cfg: &ExperimentConfig, n_sites: usize) -> Result<Partition> {
    match &cfg.partition {
        Some(p) => {
            let part = load_partition(p)?;
            if part.len() != n_sites {
                return Err(Error::Malformed(format!(
                    "partition file {} has {} sites, model has {n_sites}",
                    p.display(),
                    part.len()
                )));
            }
            Ok(part)
        }
        None => Partition::contiguous(n_sites),
    }
}

pub fn cmd_sample(cfg: &ExperimentConfig, out: &Output, truth_out: Option<&Path>) -> Result<Value> {
    let params = cfg.params()?;
    let part = partition_for(cfg, params.n_sites())?;
    let table = WeightTable::build(&params)?;
    let batch = match cfg.sampler {
        SamplerSpec::Exact => exact_sample(&table, &part, cfg.seed, cfg.observations)?,
        SamplerSpec::Glauber { sweeps } => glauber_sample(&params, &part, cfg.seed, sweeps, cfg.observations)?,
    };
    match out.format {
        OutputFormat::Csv => {
            let mut w = out.writer()?;
            write_batch_csv(&batch, &mut w)?;
            w.flush()?;
        }
        OutputFormat::Bin => {
            let mut w = out.writer()?;
            write_batch_binary(&batch, &mut w)?;
            w.flush()?;
        }
        OutputFormat::Json => return Err(unsupported("sample", out.format)),
    }
    if let Some(p) = truth_out {
        let mut w = BufWriter::new(File::create(p)?);
        write_partition(&part, &mut w)?;
        w.flush()?;
    }

    let exact_mean = table.expectation(|m| m.m1.abs());
    let abs_m1: Vec<f64> = batch.magnetizations(&part)?.iter().map(|m| m.m1.abs()).collect();
    let n = abs_m1.len() as f64;
    let (mean, stderr) = if abs_m1.len() >= 2 {
        let mean = abs_m1.iter().sum::<f64>() / n;
        let var = abs_m1.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (json!(mean), json!((var / n).sqrt()))
    } else {
        (Value::Null, Value::Null)
    };
    Ok(json!({
        "command": "sample",
        "n_sites": params.n_sites(),
        "n_obs": batch.n_obs(),
        "alpha": params.alpha(),
        "beta": params.beta(),
        "regime": classify_regime(params.alpha(), params.beta())?,
        "seed": cfg.seed,
        "sampler": cfg.sampler,
        "mean_abs_m1": mean,
        "mean_abs_m1_stderr": stderr,
        "mean_abs_m1_exact": exact_mean,
        "path": out.path_value(),
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoverReport {
    pub schema_version: u32,
    pub n_sites: usize,
    pub n_obs: usize,
    pub estimate: Vec<i8>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub rounding_fallback: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refinement_moves: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error_vs_truth: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact: Option<bool>,
}

pub fn cmd_recover(cfg: &ExperimentConfig, out: &Output, batch_path: &Path, truth_path: Option<&Path>) -> Result<Value> {
    if out.format != OutputFormat::Json {
        return Err(unsupported("recover", out.format));
    }
    let batch = load_batch(batch_path)?;
    if batch.is_empty() {
        return Err(Error::Malformed(format!("batch {} has no observations", batch_path.display())));
    }
    let truth = truth_path.map(load_partition).transpose()?;
    if let Some(t) = &truth {
        if t.len() != batch.n_sites() {
            return Err(Error::Malformed(format!("truth has {} sites, batch has {}", t.len(), batch.n_sites())));
        }
    }
    let res = recover(&batch, &cfg.recovery)?;
    let error_vs_truth = truth.as_ref().map(|t| recovery_error(&res.estimate, t)).transpose()?;
    let report = RecoverReport {
        schema_version: SCHEMA_VERSION,
        n_sites: batch.n_sites(),
        n_obs: batch.n_obs(),
        estimate: res.estimate.as_slice().to_vec(),
        objective: res.objective,
        iterations: res.iterations,
        converged: res.converged,
        rounding_fallback: res.rounding_fallback,
        refinement_moves: res.refinement_moves,
        error_vs_truth,
        exact: error_vs_truth.map(|e| e == 0.0),
    };
    write_json(out, &report)?;
    Ok(json!({
        "command": "recover",
        "n_sites": report.n_sites,
        "n_obs": report.n_obs,
        "converged": report.converged,
        "error_vs_truth": report.error_vs_truth,
        "exact": report.exact,
        "path": out.path_value(),
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FluctRow {
    pub n_sites: usize,
    pub kind: StatKind,
    pub scale_exponent: f64,
    pub law: &'static str,
    pub predicted_variance: f64,
    pub exact_variance: f64,
    pub exact_second_moment: f64,
    pub exact_ks: f64,
    pub mc_n: usize,
    pub mc_variance: Option<f64>,
    pub mc_ks: Option<f64>,
}

pub fn fluct_rows(cfg: &ExperimentConfig) -> Result<Vec<FluctRow>> {
    let model = cfg.model()?;
    let mut rows = Vec::new();
    for (idx, n) in cfg.grid()?.into_iter().enumerate() {
        let params = blockspin::ModelParams::new(n, model.alpha, model.beta)?;
        let table = WeightTable::build(&params)?;
        let part = Partition::contiguous(n)?;
        let batch = if cfg.observations > 0 {
            Some(exact_sample(&table, &part, cfg.seed.with_stream(cfg.seed.stream_index + idx as u64), cfg.observations)?)
        } else {
            None
        };
        for kind in [StatKind::SumW1, StatKind::DiffW2] {
            let pred = predict_limit(model.alpha, model.beta, kind)?;
            let atoms = exact_statistic_law(&table, kind, pred.scale);
            let (mean, var) = exact_statistic_moments(&table, kind, pred.scale);
            let exact_ks = ks_distance_discrete(&atoms, |x| pred.cdf(x));
            let (mc_variance, mc_ks) = match &batch {
                Some(b) => {
                    let stat = scaled_statistic(b, &part, kind, pred.scale)?;
                    let ks = if stat.values.len() >= 100 { Some(ks_distance(&stat.values, |x| pred.cdf(x))?) } else { None };
                    let v = if stat.values.len() >= 2 { Some(stat.variance()) } else { None };
                    (v, ks)
                }
                None => (None, None),
            };
            rows.push(FluctRow {
                n_sites: n,
                kind,
                scale_exponent: pred.scale.exponent(),
                law: match pred.law {
                    LimitLaw::Gaussian { .. } => "gaussian",
                    LimitLaw::Quartic => "quartic",
                },
                predicted_variance: pred.variance(),
                exact_variance: var,
                exact_second_moment: var + mean * mean,
                exact_ks,
                mc_n: cfg.observations,
                mc_variance,
                mc_ks,
            });
        }
    }
    Ok(rows)
}

pub fn cmd_fluct(cfg: &ExperimentConfig, out: &Output, quartic_table: Option<&Path>) -> Result<Value> {
    let rows = fluct_rows(cfg)?;
    match out.format {
        OutputFormat::Csv => write_csv_rows(out, &rows)?,
        OutputFormat::Json => write_json(out, &json!({"schema_version": SCHEMA_VERSION, "rows": rows}))?,
        OutputFormat::Bin => return Err(unsupported("fluct", out.format)),
    }
    if let Some(p) = quartic_table {
        quartic_law().write_csv(BufWriter::new(File::create(p)?), 1601)?;
    }
    Ok(json!({
        "command": "fluct",
        "rows": rows.len(),
        "max_exact_ks": rows.iter().map(|r| r.exact_ks).fold(0.0, f64::max),
        "path": out.path_value(),
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapRow {
    pub n_sites: usize,
    pub z_exact: f64,
    pub zprime_exact: f64,
    pub gap_exact: f64,
    pub mc_n: usize,
    pub z_hat: Option<f64>,
    pub zprime_hat: Option<f64>,
    pub gap_hat: Option<f64>,
    pub gap_stderr: Option<f64>,
}

pub fn gap_rows(cfg: &ExperimentConfig) -> Result<(Vec<GapRow>, Option<PowerLawFit>)> {
    let model = cfg.model()?;
    let mut rows = Vec::new();
    for (idx, n) in cfg.grid()?.into_iter().enumerate() {
        let table = WeightTable::build(&blockspin::ModelParams::new(n, model.alpha, model.beta)?)?;
        let exact = exact_correlations(&table);
        let mc = if cfg.observations >= 2 {
            let part = Partition::contiguous(n)?;
            let seed = cfg.seed.with_stream(cfg.seed.stream_index + idx as u64);
            Some(correlation_gap(&exact_sample(&table, &part, seed, cfg.observations)?, &part)?)
        } else {
            None
        };
        rows.push(GapRow {
            n_sites: n,
            z_exact: exact.z,
            zprime_exact: exact.z_prime,
            gap_exact: exact.gap(),
            mc_n: if mc.is_some() { cfg.observations } else { 0 },
            z_hat: mc.map(|g| g.z_hat),
            zprime_hat: mc.map(|g| g.zprime_hat),
            gap_hat: mc.map(|g| g.gap),
            gap_stderr: mc.map(|g| g.stderr),
        });
    }
    let points: Vec<(usize, f64)> = rows.iter().map(|r| (r.n_sites, r.gap_exact)).collect();
    let fit = if points.len() >= 4 { Some(gap_scaling_exponent(&points)?) } else { None };
    Ok((rows, fit))
}

pub fn cmd_gap(cfg: &ExperimentConfig, out: &Output) -> Result<Value> {
    let (rows, fit) = gap_rows(cfg)?;
    match out.format {
        OutputFormat::Csv => write_csv_rows(out, &rows)?,
        OutputFormat::Json => write_json(out, &json!({"schema_version": SCHEMA_VERSION, "rows": rows, "fit": fit}))?,
        OutputFormat::Bin => return Err(unsupported("gap", out.format)),
    }
    Ok(json!({"command": "gap", "rows": rows.len(), "fit": fit, "path": out.path_value()}))
}

fn sweep_summary(res: &SweepResult) -> Value {
    json!({
        "exponent": res.fit.map(|f| f.slope),
        "r_squared": res.fit.map(|f| f.r_squared),
        "monotone": res.monotone,
        "censored": res.rows.iter().filter(|r| r.censored).count(),
    })
}

pub fn cmd_sweep(cfg: &ExperimentConfig, out: &Output) -> Result<Value> {
    let model = cfg.model()?;
    let grid = cfg.grid()?;
    let spec = SweepSpec { delta: cfg.delta, trials: cfg.trials, n_lo: cfg.n_search.n_lo, n_hi: cfg.n_search.n_hi };
    let master = cfg.seed.master_seed;
    let (rows, summary): (Vec<SweepRow>, Value) = if cfg.paired {
        let paired = run_paired_recovery_sweep(&grid, spec, model.alpha, cfg.sampler, master, cfg.recovery)?;
        let summary = json!({
            "positive": sweep_summary(&paired.positive),
            "negative": sweep_summary(&paired.negative),
            "exponent_difference": paired.exponent_difference,
        });
        (paired.positive.rows.into_iter().chain(paired.negative.rows).collect(), summary)
    } else {
        let res = run_sweep(&grid, spec, model.alpha, model.beta, |n| {
            RecoveryOracle::new(blockspin::ModelParams::new(n, model.alpha, model.beta)?, cfg.sampler, master, cfg.recovery)
        })?;
        let summary = sweep_summary(&res);
        (res.rows, summary)
    };
    match out.format {
        OutputFormat::Csv => write_csv_rows(out, &rows)?,
        OutputFormat::Json => {
            write_json(out, &json!({"schema_version": SCHEMA_VERSION, "rows": rows, "summary": summary}))?
        }
        OutputFormat::Bin => return Err(unsupported("sweep", out.format)),
    }
    Ok(json!({"command": "sweep", "summary": summary, "path": out.path_value()}))
}
