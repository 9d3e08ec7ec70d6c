//! JSON experiment configuration.
//!
//! A minimal config is `{"task": "quadratic", "T": 100}`. The sweepable
//! fields (`aggregator`, `q`, `b`, `n_r`, `rho`) take a scalar or a list, and
//! the suite runs their Cartesian product.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use zeno_core::timing::TimingSpec;
use zeno_core::{
    AggregatorConfig, DataMode, Error as CoreError, FaultKind, FaultSpec, Init, LearningRate, RhoMode, Rule,
    Selection, SimConfig, TaskKind, TaskParams, DEFAULT_RHO,
};

use crate::error::{CliError, Result};

pub const DEFAULT_OUT_DIR: &str = "zeno-out";
pub const OUT_DIR_ENV: &str = "ZENO_OUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(vs) => vs.clone(),
        }
    }
}

/// `gamma` is a number or `"inverse_sqrt_t"` for `1 / (L √T)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GammaSpec {
    Value(f64),
    Schedule(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSection {
    pub kind: FaultKind,
    #[serde(default)]
    pub selection: Selection,
    #[serde(default = "default_magnitude")]
    pub magnitude: f64,
}

fn default_magnitude() -> f64 {
    FaultSpec::none().magnitude
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimingSection {
    pub rules: Vec<Rule>,
    pub m: Vec<usize>,
    pub dimension: usize,
    pub iterations: usize,
    pub n_r: usize,
}

impl Default for TimingSection {
    fn default() -> Self {
        let spec = TimingSpec::default();
        Self {
            rules: spec.rules,
            m: spec.workers,
            dimension: spec.dimension,
            iterations: spec.iterations,
            n_r: spec.zeno_batch,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    #[serde(default)]
    pub dimension: Option<usize>,
    #[serde(default)]
    pub num_points: Option<usize>,
    #[serde(default)]
    pub noise: Option<f64>,
    #[serde(default = "default_test_points")]
    pub test_points: usize,
    #[serde(rename = "T", alias = "iterations")]
    pub iterations: usize,
    #[serde(default = "default_m")]
    pub m: usize,
    /// Worker batch size `n`.
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_n_r")]
    pub n_r: OneOrMany<usize>,
    #[serde(default = "default_gamma")]
    pub gamma: GammaSpec,
    #[serde(default = "default_rho")]
    pub rho: OneOrMany<f64>,
    /// When set, `ρ = βγ²/2` and `rho` must be left out.
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default = "default_aggregator")]
    pub aggregator: OneOrMany<Rule>,
    #[serde(default = "default_b")]
    pub b: OneOrMany<usize>,
    #[serde(default = "default_q")]
    pub q: OneOrMany<usize>,
    #[serde(default)]
    pub fault: Option<FaultSection>,
    #[serde(default)]
    pub data_mode: DataMode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default = "default_epoch_length")]
    pub epoch_length: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Record per-iteration aggregation time. Traces stop being
    /// byte-reproducible when this is on.
    #[serde(default)]
    pub record_timing: bool,
    #[serde(default)]
    pub timing: TimingSection,
}

fn default_test_points() -> usize {
    1000
}
fn default_m() -> usize {
    20
}
fn default_n() -> usize {
    100
}
fn default_n_r() -> OneOrMany<usize> {
    OneOrMany::One(4)
}
fn default_gamma() -> GammaSpec {
    GammaSpec::Value(0.1)
}
fn default_rho() -> OneOrMany<f64> {
    OneOrMany::One(DEFAULT_RHO)
}
fn default_aggregator() -> OneOrMany<Rule> {
    OneOrMany::One(Rule::Zeno)
}
fn default_b() -> OneOrMany<usize> {
    OneOrMany::One(4)
}
fn default_q() -> OneOrMany<usize> {
    OneOrMany::One(0)
}
fn default_repeats() -> usize {
    10
}
fn default_epoch_length() -> usize {
    25
}

/// One point of the sweep grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Combination {
    pub aggregator: Rule,
    pub q: usize,
    pub b: usize,
    pub n_r: usize,
    pub rho: RhoMode,
}

impl Combination {
    /// File-name stem, unique within one grid.
    pub fn label(&self, fault: FaultKind) -> String {
        let rho = match self.rho {
            RhoMode::Fixed(r) => format!("rho{r}"),
            RhoMode::Theory { beta } => format!("beta{beta}"),
        };
        format!(
            "{}_{}_q{}_b{}_nr{}_{rho}",
            self.aggregator, fault, self.q, self.b, self.n_r
        )
    }
}

/// Maps a core validation error to the config key that caused it.
fn field_of(err: &CoreError) -> String {
    match err {
        CoreError::KrumCardinality { .. } | CoreError::NothingToAggregate { .. } => "b".into(),
        CoreError::TooManyFaulty { .. } | CoreError::FaultIndex { .. } => "q".into(),
        CoreError::Partition { .. } => "data_mode".into(),
        CoreError::InvalidConfig { field, .. } => match *field {
            "iterations" => "T".into(),
            "workers" => "m".into(),
            "worker_batch" => "n".into(),
            other => other.into(),
        },
        _ => "task".into(),
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|source| CliError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn fault_spec(&self, q: usize) -> FaultSpec {
        match &self.fault {
            Some(f) => FaultSpec::new(f.kind, q)
                .with_selection(f.selection)
                .with_magnitude(f.magnitude),
            None => FaultSpec::new(FaultKind::None, q),
        }
    }

    pub fn fault_kind(&self) -> FaultKind {
        self.fault.as_ref().map_or(FaultKind::None, |f| f.kind)
    }

    fn rho_modes(&self) -> Vec<RhoMode> {
        match self.beta {
            Some(beta) => vec![RhoMode::Theory { beta }],
            None => self.rho.to_vec().into_iter().map(RhoMode::Fixed).collect(),
        }
    }

    /// Every sweep combination in a fixed order: aggregator, q, b, n_r, ρ.
    pub fn combinations(&self) -> Vec<Combination> {
        let mut out = Vec::new();
        for aggregator in self.aggregator.to_vec() {
            for q in self.q.to_vec() {
                for b in self.b.to_vec() {
                    for n_r in self.n_r.to_vec() {
                        for rho in self.rho_modes() {
                            out.push(Combination {
                                aggregator,
                                q,
                                b,
                                n_r,
                                rho,
                            });
                        }
                    }
                }
            }
        }
        out
    }

    fn learning_rate(&self) -> Result<LearningRate> {
        match &self.gamma {
            GammaSpec::Value(g) => Ok(LearningRate::Constant(*g)),
            GammaSpec::Schedule(s) if s == "inverse_sqrt_t" => Ok(LearningRate::InverseSqrtT),
            GammaSpec::Schedule(s) => Err(CliError::field(
                "gamma",
                format!("expected a number or \"inverse_sqrt_t\", got \"{s}\""),
            )),
        }
    }

    fn task_params(&self) -> TaskParams {
        let defaults = TaskParams::default();
        let mut params = TaskParams::new(
            self.task,
            self.dimension.unwrap_or(defaults.dimension),
            self.num_points.unwrap_or(defaults.num_points),
        );
        if let Some(noise) = self.noise {
            params = params.with_noise(noise);
        }
        params
    }

    /// The simulator config for one combination and repeat `r`
    /// (seed `seed + r`).
    pub fn sim_config(&self, combo: &Combination, repeat: usize) -> Result<SimConfig> {
        let mut cfg = SimConfig::new(self.task_params());
        cfg.test_points = self.test_points;
        cfg.workers = self.m;
        cfg.worker_batch = self.n;
        cfg.zeno_batch = combo.n_r;
        cfg.learning_rate = self.learning_rate()?;
        cfg.iterations = self.iterations;
        cfg.aggregator = match combo.aggregator {
            Rule::Mean | Rule::Median => AggregatorConfig::new(combo.aggregator, 0),
            rule => AggregatorConfig::new(rule, combo.b),
        };
        cfg.rho = combo.rho;
        cfg.fault = self.fault_spec(combo.q);
        cfg.data_mode = self.data_mode;
        cfg.seed = self.seed.wrapping_add(repeat as u64);
        cfg.init = self.x0.clone().map_or(Init::Uniform, Init::Fixed);
        cfg.measure_time = self.record_timing;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(CliError::field("repeats", "must be at least 1"));
        }
        if self.epoch_length == 0 {
            return Err(CliError::field("epoch_length", "must be at least 1"));
        }
        for (field, empty) in [
            ("aggregator", self.aggregator.to_vec().is_empty()),
            ("q", self.q.to_vec().is_empty()),
            ("b", self.b.to_vec().is_empty()),
            ("n_r", self.n_r.to_vec().is_empty()),
            ("rho", self.rho.to_vec().is_empty()),
        ] {
            if empty {
                return Err(CliError::field(field, "sweep list is empty"));
            }
        }
        if let Some(&q) = self.q.to_vec().iter().find(|&&q| q > self.m) {
            return Err(CliError::field(
                "q",
                format!("{q} faulty workers requested but m = {}", self.m),
            ));
        }
        if self.beta.is_some() && self.rho != default_rho() {
            return Err(CliError::field("beta", "set either rho or beta, not both"));
        }
        if let Some(x0) = &self.x0 {
            let d = self.task_params().dimension;
            if self.task != TaskKind::Mlp && x0.len() != d {
                return Err(CliError::field(
                    "x0",
                    format!("expected {d} coordinates, got {}", x0.len()),
                ));
            }
        }
        for combo in self.combinations() {
            let sim = self.sim_config(&combo, 0)?;
            if let Err(err) = sim.validate() {
                return Err(CliError::field(
                    field_of(&err),
                    format!(
                        "{err} (aggregator {}, q = {}, b = {})",
                        combo.aggregator, combo.q, combo.b
                    ),
                ));
            }
        }
        let t = &self.timing;
        if t.rules.is_empty() || t.m.is_empty() {
            return Err(CliError::field("timing", "rules and m must be non-empty"));
        }
        if t.m.iter().any(|&m| m < 3) {
            return Err(CliError::field("timing.m", "every m must be at least 3"));
        }
        if t.iterations == 0 || t.dimension == 0 || t.n_r == 0 {
            return Err(CliError::field(
                "timing",
                "iterations, dimension and n_r must be positive",
            ));
        }
        Ok(())
    }

    pub fn timing_spec(&self) -> TimingSpec {
        TimingSpec {
            rules: self.timing.rules.clone(),
            workers: self.timing.m.clone(),
            dimension: self.timing.dimension,
            iterations: self.timing.iterations,
            zeno_batch: self.timing.n_r,
            seed: self.seed,
        }
    }

    /// `--out`, then the config's `output_dir`, then `ZENO_OUT_DIR`, then
    /// [`DEFAULT_OUT_DIR`].
    pub fn resolve_output_dir(&self, cli_override: Option<&Path>) -> PathBuf {
        cli_override
            .map(Path::to_path_buf)
            .or_else(|| self.output_dir.clone())
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
    }
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|source| CliError::ReadConfig {
        path: path.to_path_buf(),
        source,
    })?;
    ExperimentConfig::from_json(&text, path)
}
