#![allow(dead_code)]

use zeno_core::rng::Rng;
use zeno_core::{
    make_task_with, sample_batch, DataPoint, GradientSet, ParamVector, TaskKind, TaskParams, TaskSpec,
};

/// A random scoring problem: a small noisy quadratic, a score batch, a point
/// and a candidate set.
pub struct Instance {
    pub task: TaskSpec,
    pub batch: Vec<DataPoint>,
    pub x: ParamVector,
    pub g: GradientSet,
    pub gamma: f64,
    pub rho: f64,
}

impl Instance {
    pub fn oracle(&self) -> zeno_core::ScoreOracle<'_> {
        zeno_core::ScoreOracle::new(&self.task, &self.batch, self.gamma, self.rho)
    }
}

pub fn random_vector(d: usize, scale: f64, rng: &mut Rng) -> ParamVector {
    (0..d).map(|_| scale * rng.normal()).collect::<Vec<_>>().into()
}

/// `duplicates` copies earlier candidates over later ones so that ties show
/// up in distances and scores.
pub fn instance(seed: u64, m: usize, d: usize, duplicates: bool) -> Instance {
    let mut rng = Rng::new(seed, 900);
    let params = TaskParams::new(TaskKind::Quadratic, d, 20);
    let (task, data) = make_task_with(&params, seed).unwrap();
    let n_r = 1 + rng.index(4);
    let batch = sample_batch(&data, n_r, &mut rng).unwrap();
    let x = random_vector(d, 1.0, &mut rng);
    let mut candidates: Vec<ParamVector> = (0..m).map(|_| random_vector(d, 2.0, &mut rng)).collect();
    if duplicates && m > 1 {
        for i in 1..m {
            if rng.uniform() < 0.3 {
                let j = rng.index(i);
                candidates[i] = candidates[j].clone();
            }
        }
    }
    Instance {
        task,
        batch,
        x,
        g: GradientSet::new(candidates).unwrap(),
        gamma: rng.uniform_in(0.01, 0.5),
        rho: rng.uniform_in(0.0, 0.01),
    }
}

pub fn max_abs_diff(a: &ParamVector, b: &ParamVector) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
