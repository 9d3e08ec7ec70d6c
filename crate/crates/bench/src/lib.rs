//! Fixtures shared by the benchmarks.

use zeno_core::{make_task_with, DataPoint, GradientSet, ParamVector, Rng, TaskKind, TaskParams, TaskSpec};

/// `m` Gaussian candidates of dimension `d`, plus a quadratic task of the
/// same dimension, a point `x` and a 4-point score batch.
pub struct Fixture {
    pub task: TaskSpec,
    pub batch: Vec<DataPoint>,
    pub x: ParamVector,
    pub candidates: GradientSet,
}

pub fn fixture(m: usize, d: usize, seed: u64) -> Fixture {
    let (task, data) =
        make_task_with(&TaskParams::new(TaskKind::Quadratic, d, 16), seed).expect("valid task");
    let mut rng = Rng::new(seed, 99);
    let mut gaussian = |n: usize| -> ParamVector { (0..n).map(|_| rng.normal()).collect::<Vec<_>>().into() };
    let x = gaussian(d);
    let candidates = GradientSet::new((0..m).map(|_| gaussian(d)).collect()).expect("non-empty");
    Fixture {
        task,
        batch: data.points[..4].to_vec(),
        x,
        candidates,
    }
}
