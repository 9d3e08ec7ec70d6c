//! Brute-force reference implementations of the aggregation rules.
//!
//! These share no code with [`crate::aggregation`]: distances, order
//! statistics, scores and rankings are all recomputed here from their
//! definitions. Speed is not a concern.

use crate::aggregation::{GradientSet, ScoreOracle};
use crate::error::{Error, Result};
use crate::task::loss_eval;
use crate::vector::ParamVector;

fn check(g: &GradientSet) -> Result<usize> {
    let Some(first) = g.candidates.first() else {
        return Err(Error::EmptyGradientSet);
    };
    for c in &g.candidates {
        if c.dim() != first.dim() {
            return Err(Error::DimensionMismatch {
                expected: first.dim(),
                actual: c.dim(),
            });
        }
    }
    Ok(first.dim())
}

/// Plain mean of the candidates at `indices`, in the order given.
pub fn mean_bruteforce(g: &GradientSet, indices: &[usize]) -> Result<ParamVector> {
    let d = check(g)?;
    let mut out = vec![0.0; d];
    for (j, slot) in out.iter_mut().enumerate() {
        let mut sum = 0.0;
        for &i in indices {
            sum += g.candidates[i].as_slice()[j];
        }
        *slot = sum / indices.len() as f64;
    }
    Ok(out.into())
}

/// Krum's chosen index from the full distance matrix.
pub fn krum_bruteforce(g: &GradientSet, b: usize) -> Result<usize> {
    check(g)?;
    let m = g.len();
    if 2 * b + 2 >= m {
        return Err(Error::KrumCardinality { b, m });
    }
    let matrix: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            (0..m)
                .map(|j| {
                    let (a, c) = (g.candidates[i].as_slice(), g.candidates[j].as_slice());
                    let mut s = 0.0;
                    for k in 0..a.len() {
                        let diff = a[k] - c[k];
                        s += diff * diff;
                    }
                    s
                })
                .collect()
        })
        .collect();
    let neighbours = m - b - 2;
    let mut best: Option<(f64, usize)> = None;
    for (i, row) in matrix.iter().enumerate() {
        let mut others: Vec<(f64, usize)> = (0..m).filter(|&j| j != i).map(|j| (row[j], j)).collect();
        others.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        let mut score = 0.0;
        for (dist, _) in others.iter().take(neighbours) {
            score += dist;
        }
        match best {
            Some((s, _)) if score.total_cmp(&s).is_ge() => {}
            _ => best = Some((score, i)),
        }
    }
    Ok(best.expect("m >= 3").1)
}

/// Coordinate-wise median via order-statistic counting.
pub fn median_bruteforce(g: &GradientSet) -> Result<ParamVector> {
    let d = check(g)?;
    let m = g.len();
    // The k-th smallest value (0-based) in `column`.
    let order_stat = |column: &[f64], k: usize| -> f64 {
        for &v in column {
            let below = column.iter().filter(|w| w.total_cmp(&v).is_lt()).count();
            let at_or_below = column.iter().filter(|w| w.total_cmp(&v).is_le()).count();
            if below <= k && k < at_or_below {
                return v;
            }
        }
        unreachable!("some value holds every rank")
    };
    let out: Vec<f64> = (0..d)
        .map(|j| {
            let column: Vec<f64> = g.candidates.iter().map(|c| c.as_slice()[j]).collect();
            if m % 2 == 1 {
                order_stat(&column, m / 2)
            } else {
                0.5 * order_stat(&column, m / 2 - 1) + 0.5 * order_stat(&column, m / 2)
            }
        })
        .collect();
    Ok(out.into())
}

/// Indices Zeno keeps, ascending: a candidate is kept when fewer than
/// `m − b` candidates outrank it (higher score, or equal score and lower
/// index). Each score is computed from scratch.
pub fn zeno_bruteforce(
    g: &GradientSet,
    b: usize,
    x: &ParamVector,
    oracle: &ScoreOracle<'_>,
) -> Result<Vec<usize>> {
    let d = check(g)?;
    let m = g.len();
    if b >= m {
        return Err(Error::NothingToAggregate { b, m });
    }
    if x.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: x.dim(),
        });
    }
    let scores: Vec<f64> = g
        .candidates
        .iter()
        .map(|u| {
            let before = loss_eval(oracle.task, x, oracle.batch)?;
            let moved: Vec<f64> = x
                .iter()
                .zip(u.iter())
                .map(|(xi, ui)| xi - oracle.gamma * ui)
                .collect();
            let after = loss_eval(oracle.task, &moved.into(), oracle.batch)?;
            let mut norm2 = 0.0;
            for v in u.iter() {
                norm2 += v * v;
            }
            let s = before - after - oracle.rho * norm2;
            Ok(if s.is_nan() { f64::NEG_INFINITY } else { s })
        })
        .collect::<Result<_>>()?;
    let keep = m - b;
    Ok((0..m)
        .filter(|&i| {
            let outranked_by = (0..m)
                .filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i))
                .count();
            outranked_by < keep
        })
        .collect())
}
