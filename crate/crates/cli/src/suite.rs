//! Runs an experiment grid and writes trace, summary and timing CSVs.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use zeno_core::timing::{measure_aggregation_time, TimingRow};
use zeno_core::{run_experiment, MetricsRecord, Trace};

use crate::config::{Combination, ExperimentConfig};
use crate::error::{CliError, Result};

pub const TRACE_HEADER: [&str; 14] = [
    "t",
    "epoch",
    "train_loss",
    "grad_norm",
    "test_accuracy",
    "diverged",
    "aggregator",
    "q",
    "b",
    "n_r",
    "rho",
    "gamma",
    "seed",
    "wallclock_ns",
];
pub const SUMMARY_HEADER: [&str; 13] = [
    "epoch",
    "t",
    "train_loss",
    "grad_norm",
    "test_accuracy",
    "diverged_fraction",
    "aggregator",
    "q",
    "b",
    "n_r",
    "rho",
    "gamma",
    "repeats",
];
pub const TIMING_HEADER: [&str; 5] = ["rule", "m", "d", "iterations", "median_ns"];

/// 17 significant digits, so every value reads back to the same bits.
fn float(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt_float(v: Option<f64>) -> String {
    v.map(float).unwrap_or_default()
}

fn epoch_of(t: usize, epoch_length: usize) -> usize {
    (t - 1) / epoch_length + 1
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub out_dir: PathBuf,
    pub traces: Vec<PathBuf>,
    pub summaries: Vec<PathBuf>,
}

fn csv_error(path: &Path, err: csv::Error) -> CliError {
    let source = match err.into_kind() {
        csv::ErrorKind::Io(e) => e,
        other => std::io::Error::other(format!("{other:?}")),
    };
    CliError::io(path, source)
}

/// Writes `header` and `rows` to `path`.
fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn trace_rows<'a>(
    trace: &'a Trace,
    combo: &'a Combination,
    epoch_length: usize,
) -> impl Iterator<Item = Vec<String>> + 'a {
    let cfg = &trace.config;
    trace.records.iter().map(move |r| {
        vec![
            r.t.to_string(),
            epoch_of(r.t, epoch_length).to_string(),
            float(r.train_loss),
            float(r.grad_norm),
            opt_float(r.test_accuracy),
            r.diverged.to_string(),
            combo.aggregator.to_string(),
            combo.q.to_string(),
            cfg.aggregator.b.to_string(),
            cfg.zeno_batch.to_string(),
            float(trace.rho),
            float(trace.gamma),
            cfg.seed.to_string(),
            r.wallclock_ns.to_string(),
        ]
    })
}

/// Per-epoch means over repeats, taken at the last iteration of each epoch.
pub fn summary_rows(traces: &[Trace], combo: &Combination, epoch_length: usize) -> Vec<Vec<String>> {
    let first = &traces[0];
    let iterations = first.config.iterations;
    let n = traces.len() as f64;
    (1..=iterations.div_ceil(epoch_length))
        .map(|epoch| {
            let t = (epoch * epoch_length).min(iterations);
            let at: Vec<&MetricsRecord> = traces.iter().map(|tr| &tr.records[t - 1]).collect();
            let mean = |f: fn(&MetricsRecord) -> f64| at.iter().map(|r| f(r)).sum::<f64>() / n;
            let accuracy = at
                .iter()
                .map(|r| r.test_accuracy)
                .sum::<Option<f64>>()
                .map(|s| s / n);
            vec![
                epoch.to_string(),
                t.to_string(),
                float(mean(|r| r.train_loss)),
                float(mean(|r| r.grad_norm)),
                opt_float(accuracy),
                float(mean(|r| if r.diverged { 1.0 } else { 0.0 })),
                combo.aggregator.to_string(),
                combo.q.to_string(),
                first.config.aggregator.b.to_string(),
                first.config.zeno_batch.to_string(),
                float(first.rho),
                float(first.gamma),
                traces.len().to_string(),
            ]
        })
        .collect()
}

/// Runs every `(combination, repeat)` in parallel, writes one trace CSV per
/// run, then one summary CSV per combination.
pub fn run_suite(cfg: &ExperimentConfig, out_dir: &Path) -> Result<SuiteReport> {
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let combos = cfg.combinations();
    let fault = cfg.fault_kind();
    let jobs: Vec<(usize, usize)> = (0..combos.len())
        .flat_map(|c| (0..cfg.repeats).map(move |r| (c, r)))
        .collect();

    let finished: Vec<(usize, PathBuf, Trace)> = jobs
        .par_iter()
        .map(|&(c, r)| {
            let combo = &combos[c];
            let trace = run_experiment(&cfg.sim_config(combo, r)?)?;
            let path = out_dir.join(format!("{}_rep{r}.csv", combo.label(fault)));
            write_csv(&path, &TRACE_HEADER, trace_rows(&trace, combo, cfg.epoch_length))?;
            Ok((c, path, trace))
        })
        .collect::<Result<_>>()?;

    let mut report = SuiteReport {
        out_dir: out_dir.to_path_buf(),
        traces: finished.iter().map(|(_, p, _)| p.clone()).collect(),
        summaries: Vec::new(),
    };
    let mut grouped: Vec<Vec<Trace>> = vec![Vec::new(); combos.len()];
    for (c, _, trace) in finished {
        grouped[c].push(trace);
    }
    for (combo, traces) in combos.iter().zip(&grouped) {
        let path = out_dir.join(format!("{}_summary.csv", combo.label(fault)));
        write_csv(
            &path,
            &SUMMARY_HEADER,
            summary_rows(traces, combo, cfg.epoch_length),
        )?;
        report.summaries.push(path);
    }
    Ok(report)
}

fn timing_rows(rows: &[TimingRow]) -> impl Iterator<Item = Vec<String>> + '_ {
    rows.iter().map(|r| {
        vec![
            r.rule.to_string(),
            r.workers.to_string(),
            r.dimension.to_string(),
            r.iterations.to_string(),
            r.median_ns.to_string(),
        ]
    })
}

/// Measures aggregation time for the config's timing section and writes
/// `timing.csv` into `out_dir`.
pub fn emit_timing(cfg: &ExperimentConfig, out_dir: &Path) -> Result<(PathBuf, Vec<TimingRow>)> {
    let rows = measure_aggregation_time(&cfg.timing_spec())?;
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let path = out_dir.join("timing.csv");
    write_csv(&path, &TIMING_HEADER, timing_rows(&rows))?;
    Ok((path, rows))
}
