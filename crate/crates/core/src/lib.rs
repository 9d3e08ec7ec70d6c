//! Byzantine-tolerant synchronous SGD: the Zeno suspicion-based aggregation
//! rule, Mean/Median/Krum baselines, fault injectors and a deterministic
//! parameter-server simulator over small synthetic tasks.

pub mod aggregation;
pub mod error;
pub mod faults;
#[cfg(any(test, feature = "oracles"))]
pub mod oracles;
pub mod rng;
pub mod simulator;
pub mod task;
pub mod timing;
pub mod vector;

pub use aggregation::{
    aggregate, aggregate_krum, aggregate_mean, aggregate_median, aggregate_zeno, zeno_score, zeno_scores,
    Aggregate, AggregatorConfig, GradientSet, Rule, ScoreOracle, ZenoOutcome, DEFAULT_RHO,
};
pub use error::{Error, Result};
pub use faults::{
    apply_arbitrary, apply_bit_flip, flip_label, select_faulty, FaultKind, FaultSpec, Selection,
};
pub use rng::Rng;
pub use simulator::{
    evaluate, run_experiment, worker_step, DataMode, Evaluation, Init, LearningRate, MetricsRecord, RhoMode,
    SimConfig, Simulation, Trace, WorkerState,
};
pub use task::{
    grad_eval, loss_eval, make_task, make_task_with, partition_dataset, sample_batch, DataPoint, Dataset,
    Label, Model, TaskKind, TaskParams, TaskSpec,
};
pub use vector::ParamVector;
