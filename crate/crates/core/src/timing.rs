//! Wall-clock cost of one aggregation as the number of workers grows.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::aggregation::{aggregate, AggregatorConfig, GradientSet, Rule, ScoreOracle, DEFAULT_RHO};
use crate::error::{invalid, Result};
use crate::rng::{streams, Rng};
use crate::task::{make_task_with, sample_batch, TaskKind, TaskParams};
use crate::vector::ParamVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingSpec {
    pub rules: Vec<Rule>,
    /// Worker counts to measure.
    pub workers: Vec<usize>,
    pub dimension: usize,
    /// Timed aggregations per `(rule, m)`.
    pub iterations: usize,
    pub zeno_batch: usize,
    pub seed: u64,
}

impl Default for TimingSpec {
    fn default() -> Self {
        Self {
            rules: vec![Rule::Zeno, Rule::Krum],
            workers: vec![10, 20, 40, 80],
            dimension: 10_000,
            iterations: 100,
            zeno_batch: 4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub rule: Rule,
    pub workers: usize,
    pub dimension: usize,
    pub iterations: usize,
    pub median_ns: u64,
}

/// Trim parameter used when timing `m` workers; legal for both Krum and
/// Zeno whenever `m ≥ 3`.
pub fn timing_trim(m: usize) -> usize {
    m / 5
}

fn median(mut xs: Vec<u64>) -> u64 {
    xs.sort_unstable();
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2
    }
}

/// Median aggregation time per `(rule, m)`, rows ordered by rule then `m`.
/// Candidates are Gaussian vectors; Zeno scores them on a quadratic task of
/// the same dimension with a fresh score batch per aggregation.
pub fn measure_aggregation_time(spec: &TimingSpec) -> Result<Vec<TimingRow>> {
    if spec.iterations == 0 {
        return Err(invalid("timing.iterations", "must be at least 1"));
    }
    if spec.workers.iter().any(|&m| m < 3) {
        return Err(invalid("timing.m", "every m must be at least 3"));
    }
    let task_params = TaskParams::new(TaskKind::Quadratic, spec.dimension, 64);
    let (task, data) = make_task_with(&task_params, spec.seed)?;
    let mut rng = Rng::new(spec.seed, streams::ESTIMATE);
    let x: ParamVector = (0..spec.dimension)
        .map(|_| rng.normal())
        .collect::<Vec<_>>()
        .into();

    let mut rows = Vec::new();
    for &rule in &spec.rules {
        for &m in &spec.workers {
            let config = AggregatorConfig::new(rule, timing_trim(m));
            config.validate(m)?;
            let g = GradientSet::new(
                (0..m)
                    .map(|_| {
                        (0..spec.dimension)
                            .map(|_| rng.normal())
                            .collect::<Vec<_>>()
                            .into()
                    })
                    .collect(),
            )?;
            let mut server = Rng::new(spec.seed, streams::SERVER);
            let warmup = (spec.iterations / 10).max(1);
            let mut samples = Vec::with_capacity(spec.iterations);
            for i in 0..warmup + spec.iterations {
                let batch = sample_batch(&data, spec.zeno_batch, &mut server)?;
                let oracle = ScoreOracle::new(&task, &batch, 0.1, DEFAULT_RHO);
                let start = Instant::now();
                let out = aggregate(&config, &g, &x, Some(&oracle))?;
                let elapsed = start.elapsed().as_nanos() as u64;
                std::hint::black_box(out);
                if i >= warmup {
                    samples.push(elapsed);
                }
            }
            rows.push(TimingRow {
                rule,
                workers: m,
                dimension: spec.dimension,
                iterations: spec.iterations,
                median_ns: median(samples),
            });
        }
    }
    Ok(rows)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let logs: Vec<(f64, f64)> = points.iter().map(|(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let cov: f64 = logs.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = logs.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    cov / var
}

/// Slope of median time against `m` for one rule.
pub fn slope_for(rows: &[TimingRow], rule: Rule) -> f64 {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.rule == rule)
        .map(|r| (r.workers as f64, r.median_ns.max(1) as f64))
        .collect();
    log_log_slope(&pts)
}
