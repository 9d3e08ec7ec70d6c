//! Deterministic synchronous parameter-server SGD.
//!
//! Each iteration: pick the faulty set, let every worker compute a gradient
//! at the current parameters (faulty label-flip workers on poisoned labels),
//! rewrite faulty gradients for gradient-level faults, and only then draw
//! the server's score batch, aggregate and step.
//!
//! Randomness is split into independent streams: one per worker, one for the
//! server's score batch, one for fault selection, one for the initial point.
//! Turning faults on or off never changes an honest worker's samples.

use std::collections::BTreeSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::aggregation::{aggregate, AggregatorConfig, GradientSet, Rule, ScoreOracle, DEFAULT_RHO};
use crate::error::{invalid, Error, Result};
use crate::faults::{apply_arbitrary, apply_bit_flip, flip_label, select_faulty, FaultKind, FaultSpec};
use crate::rng::{streams, Rng};
use crate::task::{
    grad_eval, loss_eval, make_task_with, partition_dataset, predict, sample_batch, Dataset, Label,
    TaskParams, TaskSpec, INIT_HALF_WIDTH,
};
use crate::vector::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearningRate {
    Constant(f64),
    /// `γ = 1 / (L √T)`.
    InverseSqrtT,
}

impl LearningRate {
    pub fn resolve(&self, smoothness: f64, iterations: usize) -> f64 {
        match *self {
            LearningRate::Constant(g) => g,
            LearningRate::InverseSqrtT => 1.0 / (smoothness * (iterations as f64).sqrt()),
        }
    }
}

/// Score regularization weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoMode {
    Fixed(f64),
    /// `ρ = βγ²/2`.
    Theory {
        beta: f64,
    },
}

impl RhoMode {
    pub fn resolve(&self, gamma: f64) -> f64 {
        match *self {
            RhoMode::Fixed(rho) => rho,
            RhoMode::Theory { beta } => beta * gamma * gamma / 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataMode {
    /// Every worker samples from the full training set.
    #[default]
    Iid,
    /// Worker `i` samples only from label-sorted shard `i`.
    Disjoint,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// Coordinates i.i.d. uniform in `[−0.5, 0.5]`.
    #[default]
    Uniform,
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub task: TaskParams,
    /// Size of the held-out set used for test accuracy (classification only).
    pub test_points: usize,
    /// `m`.
    pub workers: usize,
    /// `n`.
    pub worker_batch: usize,
    /// `n_r`.
    pub zeno_batch: usize,
    pub learning_rate: LearningRate,
    /// `T`.
    pub iterations: usize,
    pub aggregator: AggregatorConfig,
    pub rho: RhoMode,
    pub fault: FaultSpec,
    pub data_mode: DataMode,
    pub seed: u64,
    pub init: Init,
    /// Record aggregation wall-clock time. Off by default so traces are
    /// bit-reproducible.
    pub measure_time: bool,
}

impl SimConfig {
    pub fn new(task: TaskParams) -> Self {
        Self {
            task,
            test_points: 1000,
            workers: 20,
            worker_batch: 100,
            zeno_batch: 4,
            learning_rate: LearningRate::Constant(0.1),
            iterations: 100,
            aggregator: AggregatorConfig::zeno(4),
            rho: RhoMode::Fixed(DEFAULT_RHO),
            fault: FaultSpec::none(),
            data_mode: DataMode::Iid,
            seed: 0,
            init: Init::Uniform,
            measure_time: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        if self.iterations == 0 {
            return Err(invalid("iterations", "T must be at least 1"));
        }
        if self.workers == 0 {
            return Err(invalid("m", "need at least one worker"));
        }
        if self.worker_batch == 0 {
            return Err(invalid("worker_batch", "must be at least 1"));
        }
        if self.zeno_batch == 0 {
            return Err(invalid("n_r", "must be at least 1"));
        }
        match self.learning_rate {
            LearningRate::Constant(g) if !(g > 0.0 && g.is_finite()) => {
                return Err(invalid("gamma", "learning rate must be positive"));
            }
            _ => {}
        }
        match self.rho {
            RhoMode::Fixed(r) if !(r >= 0.0 && r.is_finite()) => {
                return Err(invalid("rho", "must be non-negative"));
            }
            RhoMode::Theory { beta } if !(beta >= 0.0 && beta.is_finite()) => {
                return Err(invalid("beta", "must be non-negative"));
            }
            _ => {}
        }
        if self.fault.effective_q() > self.workers {
            return Err(Error::TooManyFaulty {
                q: self.fault.q,
                m: self.workers,
            });
        }
        if self.fault.kind == FaultKind::LabelFlip && self.task.kind == crate::task::TaskKind::Quadratic {
            return Err(invalid("fault.kind", "label_flip needs a classification task"));
        }
        self.aggregator.validate(self.workers)?;
        if self.data_mode == DataMode::Disjoint && self.task.num_points < self.workers {
            return Err(Error::Partition {
                points: self.task.num_points,
                shards: self.workers,
            });
        }
        if let Init::Fixed(x0) = &self.init {
            if x0.iter().any(|v| !v.is_finite()) {
                return Err(invalid("init", "initial point must be finite"));
            }
        }
        Ok(())
    }
}

/// One worker's view for a single iteration.
#[derive(Debug, Clone, Copy)]
pub struct WorkerState<'a> {
    pub id: usize,
    pub data: &'a Dataset,
    pub faulty: bool,
}

/// Full-dataset loss and, for classification, top-1 accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    /// Iteration index; `0` is the initial point.
    pub t: usize,
    /// `F(xᵗ)` over the full training set.
    pub train_loss: f64,
    /// `‖∇F(xᵗ)‖` over the full training set.
    pub grad_norm: f64,
    pub test_accuracy: Option<f64>,
    pub faulty: Vec<usize>,
    /// Krum's choice or Zeno's kept indices.
    pub selected: Option<Vec<usize>>,
    pub wallclock_ns: u64,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub config: SimConfig,
    /// Metrics at `x⁰`.
    pub initial: MetricsRecord,
    /// One record per iteration, `t = 1..=T`.
    pub records: Vec<MetricsRecord>,
    pub final_params: ParamVector,
    /// Resolved step size and score weight.
    pub gamma: f64,
    pub rho: f64,
    /// First iteration whose parameters were non-finite.
    pub diverged_at: Option<usize>,
}

impl Trace {
    pub fn last(&self) -> &MetricsRecord {
        self.records.last().unwrap_or(&self.initial)
    }
}

/// Ordered log of what happened inside the last server step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepEvent {
    FaultsSelected,
    WorkerGradient(usize),
    FaultsInjected,
    ScoreBatchDrawn {
        server_draws_before: u64,
        server_draws_after: u64,
    },
    Aggregated,
}

pub fn evaluate(task: &TaskSpec, x: &ParamVector, dataset: &Dataset) -> Result<Evaluation> {
    let loss = loss_eval(task, x, &dataset.points)?;
    let accuracy = if dataset.is_classification() {
        let hits = dataset
            .points
            .iter()
            .filter(|p| predict(task, x, &p.features) == p.label.class())
            .count();
        Some(hits as f64 / dataset.len() as f64)
    } else {
        None
    };
    Ok(Evaluation { loss, accuracy })
}

/// Samples `batch_size` points from the worker's data and returns the batch
/// gradient. Faulty workers under label flipping see `ℓ → C − 1 − ℓ`.
pub fn worker_step(
    task: &TaskSpec,
    worker: &WorkerState<'_>,
    flip_labels: bool,
    x: &ParamVector,
    batch_size: usize,
    rng: &mut Rng,
) -> Result<ParamVector> {
    let mut batch = sample_batch(worker.data, batch_size, rng)?;
    if worker.faulty && flip_labels {
        let classes = worker.data.num_classes;
        for p in &mut batch {
            if let Label::Class(c) = p.label {
                p.label = Label::Class(flip_label(c, classes)?);
            }
        }
    }
    grad_eval(task, x, &batch)
}

/// A running simulation. [`Simulation::step`] is one server iteration.
#[derive(Debug)]
pub struct Simulation {
    cfg: SimConfig,
    task: TaskSpec,
    train: Dataset,
    test: Option<Dataset>,
    shards: Option<Vec<Dataset>>,
    worker_rngs: Vec<Rng>,
    server_rng: Rng,
    fault_rng: Rng,
    gamma: f64,
    rho: f64,
    x: ParamVector,
    t: usize,
    diverged_at: Option<usize>,
    events: Vec<StepEvent>,
}

impl Simulation {
    pub fn new(cfg: SimConfig) -> Result<Self> {
        cfg.validate()?;
        let (task, train) = make_task_with(&cfg.task, cfg.seed)?;
        let test = (task.num_classes() > 0 && cfg.test_points > 0)
            .then(|| task.sample_dataset(cfg.test_points, &mut Rng::new(cfg.seed, streams::TEST_DATA)));
        let shards = match cfg.data_mode {
            DataMode::Iid => None,
            DataMode::Disjoint => Some(partition_dataset(&train, cfg.workers)?),
        };
        let x = match &cfg.init {
            Init::Uniform => {
                let mut rng = Rng::new(cfg.seed, streams::INIT);
                (0..task.dimension)
                    .map(|_| rng.uniform_in(-INIT_HALF_WIDTH, INIT_HALF_WIDTH))
                    .collect::<Vec<_>>()
                    .into()
            }
            Init::Fixed(x0) => {
                let x0 = ParamVector::new(x0.clone());
                x0.ensure_dim(task.dimension)?;
                x0
            }
        };
        let gamma = cfg.learning_rate.resolve(task.smoothness, cfg.iterations);
        let rho = cfg.rho.resolve(gamma);
        Ok(Self {
            worker_rngs: (0..cfg.workers)
                .map(|i| Rng::new(cfg.seed, streams::worker(i)))
                .collect(),
            server_rng: Rng::new(cfg.seed, streams::SERVER),
            fault_rng: Rng::new(cfg.seed, streams::FAULT),
            gamma,
            rho,
            x,
            t: 0,
            diverged_at: None,
            events: Vec::new(),
            cfg,
            task,
            train,
            test,
            shards,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn task(&self) -> &TaskSpec {
        &self.task
    }

    pub fn train_set(&self) -> &Dataset {
        &self.train
    }

    pub fn params(&self) -> &ParamVector {
        &self.x
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn iteration(&self) -> usize {
        self.t
    }

    pub fn last_events(&self) -> &[StepEvent] {
        &self.events
    }

    pub fn server_draws(&self) -> u64 {
        self.server_rng.draws()
    }

    /// Metrics at the current parameters.
    pub fn metrics(&self) -> Result<MetricsRecord> {
        let train = evaluate(&self.task, &self.x, &self.train)?;
        let grad_norm = grad_eval(&self.task, &self.x, &self.train.points)?.norm();
        let test_accuracy = match &self.test {
            Some(test) => evaluate(&self.task, &self.x, test)?.accuracy,
            None => train.accuracy,
        };
        Ok(MetricsRecord {
            t: self.t,
            train_loss: train.loss,
            grad_norm,
            test_accuracy,
            faulty: Vec::new(),
            selected: None,
            wallclock_ns: 0,
            diverged: self.diverged_at.is_some(),
        })
    }

    /// Collects this iteration's `m` candidates, with faults applied.
    pub fn collect_gradients(&mut self) -> Result<GradientSet> {
        let m = self.cfg.workers;
        let fault = self.cfg.fault;
        let faulty = select_faulty(
            m,
            fault.effective_q(),
            fault.selection,
            self.t,
            &mut self.fault_rng,
        )?;
        self.events.push(StepEvent::FaultsSelected);

        let flip = fault.kind == FaultKind::LabelFlip;
        let mut candidates = Vec::with_capacity(m);
        for id in 0..m {
            let data = match &self.shards {
                Some(shards) => &shards[id],
                None => &self.train,
            };
            let worker = WorkerState {
                id,
                data,
                faulty: faulty.contains(&id),
            };
            let rng = &mut self.worker_rngs[id];
            candidates.push(worker_step(
                &self.task,
                &worker,
                flip,
                &self.x,
                self.cfg.worker_batch,
                rng,
            )?);
            self.events.push(StepEvent::WorkerGradient(id));
        }

        let set = GradientSet::new(candidates)?;
        let set = match fault.kind {
            FaultKind::BitFlip => apply_bit_flip(&set, &faulty)?,
            FaultKind::Arbitrary => apply_arbitrary(&set, &faulty, fault.magnitude, &mut self.fault_rng)?,
            FaultKind::None | FaultKind::LabelFlip => set.with_truth(faulty),
        };
        self.events.push(StepEvent::FaultsInjected);
        Ok(set)
    }

    /// Server half of an iteration: draws the score batch (after the
    /// candidates are fixed), aggregates, steps and records metrics.
    pub fn apply_candidates(&mut self, candidates: GradientSet) -> Result<MetricsRecord> {
        let d = candidates.dim()?;
        self.x.ensure_dim(d)?;
        if candidates.len() != self.cfg.workers {
            return Err(invalid("candidates", "expected one gradient per worker"));
        }
        let score_batch = if self.cfg.aggregator.rule == Rule::Zeno {
            let before = self.server_rng.draws();
            let batch = sample_batch(&self.train, self.cfg.zeno_batch, &mut self.server_rng)?;
            self.events.push(StepEvent::ScoreBatchDrawn {
                server_draws_before: before,
                server_draws_after: self.server_rng.draws(),
            });
            Some(batch)
        } else {
            None
        };
        let oracle = score_batch
            .as_deref()
            .map(|batch| ScoreOracle::new(&self.task, batch, self.gamma, self.rho));

        let started = self.cfg.measure_time.then(Instant::now);
        let agg = aggregate(&self.cfg.aggregator, &candidates, &self.x, oracle.as_ref())?;
        let wallclock_ns = started.map_or(0, |s| s.elapsed().as_nanos() as u64);
        self.events.push(StepEvent::Aggregated);

        self.x = self.x.axpy(-self.gamma, &agg.vector);
        self.t += 1;
        if self.diverged_at.is_none() && !self.x.is_finite() {
            self.diverged_at = Some(self.t);
        }
        let mut record = self.metrics()?;
        record.faulty = candidates
            .truth
            .map(|t| t.into_iter().collect())
            .unwrap_or_default();
        record.selected = agg.selected;
        record.wallclock_ns = wallclock_ns;
        Ok(record)
    }

    /// One full synchronous iteration. After divergence the parameters are
    /// frozen and the step only advances `t`.
    pub fn step(&mut self) -> Result<MetricsRecord> {
        self.events.clear();
        if self.diverged_at.is_some() {
            self.t += 1;
            return self.metrics();
        }
        let candidates = self.collect_gradients()?;
        self.apply_candidates(candidates)
    }

    pub fn run(mut self) -> Result<Trace> {
        let initial = self.metrics()?;
        let mut records = Vec::with_capacity(self.cfg.iterations);
        while self.t < self.cfg.iterations {
            records.push(self.step()?);
        }
        Ok(Trace {
            initial,
            records,
            final_params: self.x,
            gamma: self.gamma,
            rho: self.rho,
            diverged_at: self.diverged_at,
            config: self.cfg,
        })
    }
}

/// Runs `cfg.iterations` synchronous iterations from the seeded initial
/// point.
pub fn run_experiment(cfg: &SimConfig) -> Result<Trace> {
    Simulation::new(cfg.clone())?.run()
}

/// How many of the record's kept indices were faulty.
pub fn selection_overlap(record: &MetricsRecord) -> usize {
    let faulty: BTreeSet<usize> = record.faulty.iter().copied().collect();
    record
        .selected
        .as_ref()
        .map_or(0, |s| s.iter().filter(|i| faulty.contains(i)).count())
}
