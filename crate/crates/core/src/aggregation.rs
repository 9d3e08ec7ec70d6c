//! Gradient aggregation rules: Mean, coordinate-wise Median, Krum and Zeno.
//!
//! Zeno ranks every candidate `u` by its stochastic descendant score
//!
//! ```text
//! score(u) = f_r(x) − f_r(x − γu) − ρ‖u‖²
//! ```
//!
//! where `f_r` is the mean loss over a small batch the server draws after all
//! candidates have arrived, then averages the `m − b` best-scored candidates.
//! `f_r(x)` is evaluated once per call and shared by all `m` scores, so one
//! aggregation costs `m + 1` loss evaluations.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::task::{loss_eval, DataPoint, TaskSpec};
use crate::vector::ParamVector;

/// Default score regularization weight.
pub const DEFAULT_RHO: f64 = 0.0005;

/// The `m` candidate gradients of one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub candidates: Vec<ParamVector>,
    /// Indices that are actually faulty. Test and diagnostics metadata only;
    /// no aggregation rule reads it.
    pub truth: Option<BTreeSet<usize>>,
}

impl GradientSet {
    pub fn new(candidates: Vec<ParamVector>) -> Result<Self> {
        let set = Self {
            candidates,
            truth: None,
        };
        set.dim()?;
        Ok(set)
    }

    pub fn with_truth(mut self, truth: BTreeSet<usize>) -> Self {
        self.truth = Some(truth);
        self
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// Common dimension of all candidates.
    pub fn dim(&self) -> Result<usize> {
        let first = self.candidates.first().ok_or(Error::EmptyGradientSet)?;
        let d = first.dim();
        for c in &self.candidates[1..] {
            c.ensure_dim(d)?;
        }
        Ok(d)
    }

    /// Mean of the candidates at `indices`, summed in the order given.
    fn mean_of(&self, indices: impl Iterator<Item = usize>, dim: usize) -> ParamVector {
        let mut acc = ParamVector::zeros(dim);
        let mut count = 0usize;
        for i in indices {
            acc.add_assign(&self.candidates[i]);
            count += 1;
        }
        let n = count as f64;
        acc.values_mut().iter_mut().for_each(|v| *v /= n);
        acc
    }
}

/// The server's per-iteration scoring context.
#[derive(Debug, Clone, Copy)]
pub struct ScoreOracle<'a> {
    pub task: &'a TaskSpec,
    /// The `n_r` points defining `f_r`.
    pub batch: &'a [DataPoint],
    pub gamma: f64,
    pub rho: f64,
}

impl<'a> ScoreOracle<'a> {
    pub fn new(task: &'a TaskSpec, batch: &'a [DataPoint], gamma: f64, rho: f64) -> Self {
        Self {
            task,
            batch,
            gamma,
            rho,
        }
    }

    fn score_from_base(&self, base: f64, u: &ParamVector, x: &ParamVector) -> Result<f64> {
        let stepped = x.axpy(-self.gamma, u);
        let after = loss_eval(self.task, &stepped, self.batch)?;
        Ok(base - after - self.rho * u.norm_squared())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rule {
    Mean,
    Median,
    Krum,
    Zeno,
}

impl Rule {
    pub const ALL: [Rule; 4] = [Rule::Mean, Rule::Median, Rule::Krum, Rule::Zeno];

    pub fn as_str(self) -> &'static str {
        match self {
            Rule::Mean => "mean",
            Rule::Median => "median",
            Rule::Krum => "krum",
            Rule::Zeno => "zeno",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Rule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Rule::Mean),
            "median" => Ok(Rule::Median),
            "krum" => Ok(Rule::Krum),
            "zeno" => Ok(Rule::Zeno),
            other => Err(invalid("aggregator", format!("unknown rule `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregatorConfig {
    pub rule: Rule,
    /// Trim parameter; read by Krum and Zeno only.
    pub b: usize,
}

impl AggregatorConfig {
    pub fn new(rule: Rule, b: usize) -> Self {
        Self { rule, b }
    }

    pub fn mean() -> Self {
        Self::new(Rule::Mean, 0)
    }

    pub fn median() -> Self {
        Self::new(Rule::Median, 0)
    }

    pub fn krum(b: usize) -> Self {
        Self::new(Rule::Krum, b)
    }

    pub fn zeno(b: usize) -> Self {
        Self::new(Rule::Zeno, b)
    }

    /// Checks the rule's cardinality constraint for `m` workers.
    pub fn validate(&self, m: usize) -> Result<()> {
        match self.rule {
            Rule::Krum => check_krum(m, self.b),
            Rule::Zeno => check_zeno(m, self.b),
            Rule::Mean | Rule::Median => Ok(()),
        }
    }
}

fn check_krum(m: usize, b: usize) -> Result<()> {
    if 2 * b + 2 < m {
        Ok(())
    } else {
        Err(Error::KrumCardinality { b, m })
    }
}

fn check_zeno(m: usize, b: usize) -> Result<()> {
    if b < m {
        Ok(())
    } else {
        Err(Error::NothingToAggregate { b, m })
    }
}

/// Result of one aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub vector: ParamVector,
    /// Krum's chosen index, or Zeno's selected indices in ascending order.
    pub selected: Option<Vec<usize>>,
}

/// Applies `config` to `g`. Zeno requires `x` and a score oracle.
pub fn aggregate(
    config: &AggregatorConfig,
    g: &GradientSet,
    x: &ParamVector,
    oracle: Option<&ScoreOracle<'_>>,
) -> Result<Aggregate> {
    match config.rule {
        Rule::Mean => Ok(Aggregate {
            vector: aggregate_mean(g)?,
            selected: None,
        }),
        Rule::Median => Ok(Aggregate {
            vector: aggregate_median(g)?,
            selected: None,
        }),
        Rule::Krum => {
            let (vector, chosen) = aggregate_krum(g, config.b)?;
            Ok(Aggregate {
                vector,
                selected: Some(vec![chosen]),
            })
        }
        Rule::Zeno => {
            let oracle = oracle.ok_or_else(|| invalid("aggregator", "zeno needs a score oracle"))?;
            let outcome = aggregate_zeno(g, config.b, x, oracle)?;
            Ok(Aggregate {
                vector: outcome.vector,
                selected: Some(outcome.selected),
            })
        }
    }
}

/// Coordinate-wise arithmetic mean, summed in ascending index order.
pub fn aggregate_mean(g: &GradientSet) -> Result<ParamVector> {
    let d = g.dim()?;
    Ok(g.mean_of(0..g.len(), d))
}

/// Coordinate-wise median. Even `m` takes the mean of the two middle order
/// statistics.
pub fn aggregate_median(g: &GradientSet) -> Result<ParamVector> {
    let d = g.dim()?;
    let m = g.len();
    let mid = m / 2;
    let mut column = vec![0.0; m];
    let values = (0..d)
        .map(|j| {
            for (slot, c) in column.iter_mut().zip(&g.candidates) {
                *slot = c[j];
            }
            let (left, upper, _) = column.select_nth_unstable_by(mid, f64::total_cmp);
            let upper = *upper;
            if m % 2 == 1 {
                upper
            } else {
                let lower = left.iter().cloned().max_by(f64::total_cmp).expect("m >= 2");
                0.5 * lower + 0.5 * upper
            }
        })
        .collect::<Vec<_>>();
    Ok(values.into())
}

/// Krum: the candidate with the smallest sum of squared distances to its
/// `m − b − 2` nearest other candidates. Distance and score ties go to the
/// lowest index.
pub fn aggregate_krum(g: &GradientSet, b: usize) -> Result<(ParamVector, usize)> {
    g.dim()?;
    let m = g.len();
    check_krum(m, b)?;
    let scores = krum_scores(g, b);
    let mut chosen = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if s.total_cmp(&scores[chosen]).is_lt() {
            chosen = i;
        }
    }
    Ok((g.candidates[chosen].clone(), chosen))
}

/// Per-candidate Krum scores. Requires `2b + 2 < m`.
pub fn krum_scores(g: &GradientSet, b: usize) -> Vec<f64> {
    let m = g.len();
    let k = m - b - 2;
    let mut dist = vec![0.0; m * m];
    for i in 0..m {
        for j in (i + 1)..m {
            let dij = g.candidates[i].squared_distance(&g.candidates[j]);
            dist[i * m + j] = dij;
            dist[j * m + i] = dij;
        }
    }
    let mut row: Vec<(f64, usize)> = Vec::with_capacity(m - 1);
    (0..m)
        .map(|i| {
            row.clear();
            row.extend((0..m).filter(|&j| j != i).map(|j| (dist[i * m + j], j)));
            let by_distance = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if k < row.len() {
                row.select_nth_unstable_by(k, by_distance);
            }
            let nearest = &mut row[..k];
            nearest.sort_unstable_by(by_distance);
            nearest.iter().map(|(d, _)| d).sum()
        })
        .collect()
}

/// Stochastic descendant score of a single update `u` at `x`.
pub fn zeno_score(u: &ParamVector, x: &ParamVector, oracle: &ScoreOracle<'_>) -> Result<f64> {
    u.ensure_dim(x.dim())?;
    let base = loss_eval(oracle.task, x, oracle.batch)?;
    oracle.score_from_base(base, u, x)
}

/// Scores of all candidates, sharing one evaluation of `f_r(x)`.
pub fn zeno_scores(g: &GradientSet, x: &ParamVector, oracle: &ScoreOracle<'_>) -> Result<Vec<f64>> {
    let d = g.dim()?;
    x.ensure_dim(d)?;
    let base = loss_eval(oracle.task, x, oracle.batch)?;
    g.candidates
        .iter()
        .map(|u| oracle.score_from_base(base, u, x))
        .collect()
}

/// Candidate indices ordered best score first; ties keep ascending index
/// order and NaN scores rank last.
pub fn rank_by_score(scores: &[f64]) -> Vec<usize> {
    let key = |s: f64| if s.is_nan() { f64::NEG_INFINITY } else { s };
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        key(scores[b])
            .partial_cmp(&key(scores[a]))
            .expect("NaN mapped away")
    });
    order
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZenoOutcome {
    pub vector: ParamVector,
    /// Indices of the `m − b` kept candidates, ascending.
    pub selected: Vec<usize>,
    pub scores: Vec<f64>,
}

/// Zeno: averages the `m − b` candidates with the highest scores.
pub fn aggregate_zeno(
    g: &GradientSet,
    b: usize,
    x: &ParamVector,
    oracle: &ScoreOracle<'_>,
) -> Result<ZenoOutcome> {
    let d = g.dim()?;
    check_zeno(g.len(), b)?;
    let scores = zeno_scores(g, x, oracle)?;
    let mut selected = rank_by_score(&scores);
    selected.truncate(g.len() - b);
    selected.sort_unstable();
    let vector = g.mean_of(selected.iter().copied(), d);
    Ok(ZenoOutcome {
        vector,
        selected,
        scores,
    })
}
