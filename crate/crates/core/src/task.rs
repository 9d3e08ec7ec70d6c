//! Synthetic differentiable tasks with exact loss and gradient evaluation,
//! plus dataset sampling and partitioning.
//!
//! Three task families are provided:
//!
//! * `quadratic`: `f(x; z) = ½(x − z)ᵀA(x − z) − ½(z − x*)ᵀA(z − x*)` with a
//!   diagonal positive `A`. The dataset mean is `x*`, so the full-dataset loss
//!   is exactly `½(x − x*)ᵀA(x − x*)` and `L`, `μ` are the extreme diagonal
//!   entries of `A`.
//! * `logistic`: binary logistic regression (labels `{0, 1}`, encoded `±1` in
//!   the loss) on two Gaussian blobs placed symmetrically about the origin.
//! * `mlp`: one tanh hidden layer with a softmax output over `C` Gaussian
//!   blobs. Non-convex; its `L` and `μ` are estimates.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{streams, Rng};
use crate::vector::ParamVector;

/// Number of samples used to estimate `V` and `G` for non-quadratic tasks.
pub const ESTIMATE_SAMPLES: usize = 10_000;

/// Half-width of the box `x⁰` is drawn from.
pub const INIT_HALF_WIDTH: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Quadratic,
    Logistic,
    Mlp,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Quadratic => "quadratic",
            TaskKind::Logistic => "logistic",
            TaskKind::Mlp => "mlp",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quadratic" => Ok(TaskKind::Quadratic),
            "logistic" => Ok(TaskKind::Logistic),
            "mlp" => Ok(TaskKind::Mlp),
            other => Err(Error::UnknownTask(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Label {
    /// Class id in `0..C`.
    Class(usize),
    /// Real regression target.
    Target(f64),
}

impl Label {
    pub fn class(self) -> Option<usize> {
        match self {
            Label::Class(c) => Some(c),
            Label::Target(_) => None,
        }
    }

    fn sort_key(self) -> f64 {
        match self {
            Label::Class(c) => c as f64,
            Label::Target(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub features: Vec<f64>,
    pub label: Label,
}

impl DataPoint {
    pub fn new(features: Vec<f64>, label: Label) -> Self {
        Self { features, label }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub points: Vec<DataPoint>,
    /// `C` for classification, 0 for regression.
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(points: Vec<DataPoint>, num_classes: usize) -> Self {
        Self { points, num_classes }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_classification(&self) -> bool {
        self.num_classes > 0
    }
}

/// Model family and its fixed structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Model {
    Quadratic {
        /// Diagonal of `A`.
        curvature: Vec<f64>,
        /// `x*`, the exact mean of the training points.
        minimizer: Vec<f64>,
    },
    Logistic,
    Mlp {
        inputs: usize,
        hidden: usize,
        classes: usize,
    },
}

/// How fresh data is drawn for this task (test sets, extra samples).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Generator {
    Quadratic { center: Vec<f64>, noise: f64 },
    Blobs { centers: Vec<Vec<f64>>, sigma: f64 },
}

/// A differentiable training task with its smoothness constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub model: Model,
    /// Length of the parameter vector (the parameter count for `mlp`).
    pub dimension: usize,
    /// `L`.
    pub smoothness: f64,
    /// `μ`; negative for non-convex tasks.
    pub weak_convexity: f64,
    /// `G`, bound on the second moment of a single-sample gradient.
    pub moment_bound: Option<f64>,
    /// `V`, bound on the variance of a single-sample gradient. A worker
    /// batch of `n` points has variance `V / n`.
    pub variance_bound: Option<f64>,
    /// False for the quadratic task, whose constants are exact.
    pub constants_estimated: bool,
    pub generator_seed: u64,
    generator: Generator,
}

impl TaskSpec {
    pub fn kind(&self) -> TaskKind {
        match self.model {
            Model::Quadratic { .. } => TaskKind::Quadratic,
            Model::Logistic => TaskKind::Logistic,
            Model::Mlp { .. } => TaskKind::Mlp,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self.model {
            Model::Quadratic { .. } => 0,
            Model::Logistic => 2,
            Model::Mlp { classes, .. } => classes,
        }
    }

    /// Draws `num_points` fresh points from the task's generating
    /// distribution.
    pub fn sample_dataset(&self, num_points: usize, rng: &mut Rng) -> Dataset {
        let points = (0..num_points)
            .map(|i| match &self.generator {
                Generator::Quadratic { center, noise } => {
                    let features = center.iter().map(|c| c + noise * rng.normal()).collect();
                    DataPoint::new(features, Label::Target(0.0))
                }
                Generator::Blobs { centers, sigma } => {
                    let class = i % centers.len();
                    let features = centers[class].iter().map(|c| c + sigma * rng.normal()).collect();
                    DataPoint::new(features, Label::Class(class))
                }
            })
            .collect();
        Dataset::new(points, self.num_classes())
    }

    /// Closed-form `F(x)` for the quadratic task.
    pub fn quadratic_objective(&self, x: &ParamVector) -> Option<f64> {
        match &self.model {
            Model::Quadratic { curvature, minimizer } => Some(
                0.5 * curvature
                    .iter()
                    .zip(minimizer)
                    .zip(x.iter())
                    .map(|((a, s), v)| a * (v - s) * (v - s))
                    .sum::<f64>(),
            ),
            _ => None,
        }
    }

    /// Closed-form `∇F(x)` for the quadratic task.
    pub fn quadratic_gradient(&self, x: &ParamVector) -> Option<ParamVector> {
        match &self.model {
            Model::Quadratic { curvature, minimizer } => Some(
                curvature
                    .iter()
                    .zip(minimizer)
                    .zip(x.iter())
                    .map(|((a, s), v)| a * (v - s))
                    .collect::<Vec<_>>()
                    .into(),
            ),
            _ => None,
        }
    }
}

/// Generation parameters for [`make_task_with`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskParams {
    pub kind: TaskKind,
    /// Parameter dimension for `quadratic`/`logistic`; input feature
    /// dimension for `mlp`.
    pub dimension: usize,
    pub num_points: usize,
    /// Spread of points around their center (quadratic) or blob standard
    /// deviation (classification). Zero gives exact, noise-free gradients.
    pub noise: f64,
    /// `(μ, L)`: the diagonal of `A` is spaced linearly over this range.
    pub curvature: (f64, f64),
    /// Explicit `x*` for the quadratic task; random when absent.
    pub minimizer: Option<Vec<f64>>,
    /// Distance between the two logistic blob centers, in units of `noise`.
    pub separation: f64,
    pub hidden: usize,
    pub classes: usize,
}

impl Default for TaskParams {
    fn default() -> Self {
        Self {
            kind: TaskKind::Quadratic,
            dimension: 10,
            num_points: 2000,
            noise: 1.0,
            curvature: (0.5, 1.0),
            minimizer: None,
            separation: 4.0,
            hidden: 8,
            classes: 3,
        }
    }
}

impl TaskParams {
    pub fn new(kind: TaskKind, dimension: usize, num_points: usize) -> Self {
        Self {
            kind,
            dimension,
            num_points,
            ..Self::default()
        }
    }

    pub fn with_noise(mut self, noise: f64) -> Self {
        self.noise = noise;
        self
    }

    pub fn with_curvature(mut self, mu: f64, l: f64) -> Self {
        self.curvature = (mu, l);
        self
    }

    pub fn with_minimizer(mut self, minimizer: Vec<f64>) -> Self {
        self.minimizer = Some(minimizer);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension == 0 {
            return Err(invalid("dimension", "must be at least 1"));
        }
        if self.num_points == 0 {
            return Err(invalid("num_points", "must be at least 1"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(invalid("noise", "must be finite and non-negative"));
        }
        match self.kind {
            TaskKind::Quadratic => {
                let (mu, l) = self.curvature;
                if !(mu > 0.0 && mu <= l && l.is_finite()) {
                    return Err(invalid("curvature", "need 0 < mu <= L"));
                }
                if let Some(m) = &self.minimizer {
                    if m.len() != self.dimension {
                        return Err(invalid("minimizer", "length must equal dimension"));
                    }
                }
            }
            TaskKind::Logistic => {
                if self.noise == 0.0 {
                    return Err(invalid("noise", "logistic blobs need a positive spread"));
                }
            }
            TaskKind::Mlp => {
                if self.hidden == 0 || self.hidden > 16 {
                    return Err(invalid("hidden", "width must be in 1..=16"));
                }
                if self.classes < 2 {
                    return Err(invalid("classes", "need at least two classes"));
                }
            }
        }
        Ok(())
    }
}

/// Builds a task with default generation parameters.
pub fn make_task(
    kind: TaskKind,
    dimension: usize,
    num_points: usize,
    seed: u64,
) -> Result<(TaskSpec, Dataset)> {
    make_task_with(&TaskParams::new(kind, dimension, num_points), seed)
}

/// Builds a task and its training dataset from the `TRAIN_DATA` stream of
/// `seed`.
pub fn make_task_with(params: &TaskParams, seed: u64) -> Result<(TaskSpec, Dataset)> {
    params.validate()?;
    let mut rng = Rng::new(seed, streams::TRAIN_DATA);
    match params.kind {
        TaskKind::Quadratic => Ok(make_quadratic(params, seed, &mut rng)),
        TaskKind::Logistic => Ok(make_logistic(params, seed, &mut rng)),
        TaskKind::Mlp => Ok(make_mlp(params, seed, &mut rng)),
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![hi];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

fn make_quadratic(params: &TaskParams, seed: u64, rng: &mut Rng) -> (TaskSpec, Dataset) {
    let d = params.dimension;
    let curvature = linspace(params.curvature.0, params.curvature.1, d);
    let center = params
        .minimizer
        .clone()
        .unwrap_or_else(|| (0..d).map(|_| rng.uniform_in(-2.0, 2.0)).collect());
    let generator = Generator::Quadratic {
        center: center.clone(),
        noise: params.noise,
    };

    let mut spec = TaskSpec {
        model: Model::Quadratic {
            curvature: curvature.clone(),
            minimizer: center,
        },
        dimension: d,
        smoothness: curvature.iter().cloned().fold(f64::MIN, f64::max),
        weak_convexity: curvature.iter().cloned().fold(f64::MAX, f64::min),
        moment_bound: None,
        variance_bound: None,
        constants_estimated: false,
        generator_seed: seed,
        generator,
    };
    let data = spec.sample_dataset(params.num_points, rng);

    let minimizer = if params.noise == 0.0 {
        // Every point is exactly the center.
        match &spec.model {
            Model::Quadratic { minimizer, .. } => minimizer.clone(),
            _ => unreachable!(),
        }
    } else {
        let n = data.len() as f64;
        let mut mean = vec![0.0; d];
        for p in &data.points {
            for (m, z) in mean.iter_mut().zip(&p.features) {
                *m += z;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    };

    // V: mean single-sample gradient variance ‖A(z − x*)‖².
    let variance = data
        .points
        .iter()
        .map(|p| {
            p.features
                .iter()
                .zip(&minimizer)
                .zip(&curvature)
                .map(|((z, s), a)| (a * (z - s)).powi(2))
                .sum::<f64>()
        })
        .sum::<f64>()
        / data.len() as f64;
    // G: worst case of ‖∇F(x)‖² + V over the initialization box.
    let worst_grad: f64 = minimizer
        .iter()
        .zip(&curvature)
        .map(|(s, a)| {
            let far = (INIT_HALF_WIDTH + s.abs()).powi(2);
            a * a * far
        })
        .sum();
    spec.variance_bound = Some(variance);
    spec.moment_bound = Some(worst_grad + variance);
    spec.model = Model::Quadratic { curvature, minimizer };
    (spec, data)
}

fn random_unit(d: usize, rng: &mut Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn make_logistic(params: &TaskParams, seed: u64, rng: &mut Rng) -> (TaskSpec, Dataset) {
    let d = params.dimension;
    let sigma = params.noise;
    let direction = random_unit(d, rng);
    let half = 0.5 * params.separation * sigma;
    // Class 0 at −(sep/2)·u, class 1 at +(sep/2)·u.
    let centers = vec![
        direction.iter().map(|u| -half * u).collect::<Vec<_>>(),
        direction.iter().map(|u| half * u).collect::<Vec<_>>(),
    ];
    let mut spec = TaskSpec {
        model: Model::Logistic,
        dimension: d,
        smoothness: 0.0,
        weak_convexity: 0.0,
        moment_bound: None,
        variance_bound: None,
        constants_estimated: true,
        generator_seed: seed,
        generator: Generator::Blobs { centers, sigma },
    };
    let data = spec.sample_dataset(params.num_points, rng);
    // Per-sample Hessian is σ'(·) f fᵀ ≤ ¼‖f‖².
    spec.smoothness = data
        .points
        .iter()
        .map(|p| 0.25 * p.features.iter().map(|v| v * v).sum::<f64>())
        .fold(f64::MIN_POSITIVE, f64::max);
    let (v, g) = estimate_moments(&spec, &ParamVector::zeros(d), &data, seed);
    spec.variance_bound = Some(v);
    spec.moment_bound = Some(g);
    (spec, data)
}

fn mlp_param_count(inputs: usize, hidden: usize, classes: usize) -> usize {
    hidden * inputs + hidden + classes * hidden + classes
}

fn make_mlp(params: &TaskParams, seed: u64, rng: &mut Rng) -> (TaskSpec, Dataset) {
    let inputs = params.dimension;
    let (hidden, classes) = (params.hidden, params.classes);
    let centers = (0..classes)
        .map(|_| (0..inputs).map(|_| 2.0 * rng.normal()).collect())
        .collect();
    let mut spec = TaskSpec {
        model: Model::Mlp {
            inputs,
            hidden,
            classes,
        },
        dimension: mlp_param_count(inputs, hidden, classes),
        smoothness: 0.0,
        weak_convexity: 0.0,
        moment_bound: None,
        variance_bound: None,
        constants_estimated: true,
        generator_seed: seed,
        generator: Generator::Blobs {
            centers,
            sigma: params.noise.max(f64::MIN_POSITIVE),
        },
    };
    let data = spec.sample_dataset(params.num_points, rng);

    // Directional curvature ⟨∇f(x + hv) − ∇f(x − hv), v⟩ / 2h at random
    // points inside the initialization box.
    let mut est = Rng::new(seed, streams::ESTIMATE);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let h = 1e-4;
    for _ in 0..200 {
        let x: ParamVector = (0..spec.dimension)
            .map(|_| est.uniform_in(-INIT_HALF_WIDTH, INIT_HALF_WIDTH))
            .collect::<Vec<_>>()
            .into();
        let v: ParamVector = random_unit(spec.dimension, &mut est).into();
        let point = &data.points[est.index(data.len())];
        let batch = std::slice::from_ref(point);
        let gp = grad_eval(&spec, &x.axpy(h, &v), batch).expect("dims checked");
        let gm = grad_eval(&spec, &x.axpy(-h, &v), batch).expect("dims checked");
        let c = (gp.dot(&v) - gm.dot(&v)) / (2.0 * h);
        lo = lo.min(c);
        hi = hi.max(c);
    }
    spec.smoothness = hi.max(f64::MIN_POSITIVE);
    spec.weak_convexity = lo.min(spec.smoothness);
    let x0: ParamVector = (0..spec.dimension)
        .map(|_| est.uniform_in(-INIT_HALF_WIDTH, INIT_HALF_WIDTH))
        .collect::<Vec<_>>()
        .into();
    let (v, g) = estimate_moments(&spec, &x0, &data, seed);
    spec.variance_bound = Some(v);
    spec.moment_bound = Some(g);
    (spec, data)
}

/// Empirical single-sample gradient variance and second moment at `x`.
fn estimate_moments(spec: &TaskSpec, x: &ParamVector, data: &Dataset, seed: u64) -> (f64, f64) {
    let mut rng = Rng::new(seed, streams::ESTIMATE ^ 0xfeed);
    let grads: Vec<ParamVector> = (0..ESTIMATE_SAMPLES)
        .map(|_| {
            let p = &data.points[rng.index(data.len())];
            grad_eval(spec, x, std::slice::from_ref(p)).expect("dims checked")
        })
        .collect();
    let n = grads.len() as f64;
    let mut mean = ParamVector::zeros(spec.dimension);
    for g in &grads {
        mean.add_assign(g);
    }
    let mean = mean.scaled(1.0 / n);
    let second = grads.iter().map(|g| g.norm_squared()).sum::<f64>() / n;
    let variance = grads.iter().map(|g| g.squared_distance(&mean)).sum::<f64>() / n;
    (variance, second)
}

fn check_inputs(task: &TaskSpec, x: &ParamVector, batch: &[DataPoint]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    x.ensure_dim(task.dimension)
}

fn softplus(v: f64) -> f64 {
    v.max(0.0) + (-v.abs()).exp().ln_1p()
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn signed_label(label: Label) -> f64 {
    match label {
        Label::Class(0) => -1.0,
        Label::Class(_) => 1.0,
        Label::Target(t) => {
            if t > 0.0 {
                1.0
            } else {
                -1.0
            }
        }
    }
}

/// Views an `mlp` parameter vector as its four blocks.
struct MlpParams<'a> {
    w1: &'a [f64],
    b1: &'a [f64],
    w2: &'a [f64],
    b2: &'a [f64],
    inputs: usize,
    hidden: usize,
    classes: usize,
}

impl<'a> MlpParams<'a> {
    fn split(x: &'a [f64], inputs: usize, hidden: usize, classes: usize) -> Self {
        let (w1, rest) = x.split_at(hidden * inputs);
        let (b1, rest) = rest.split_at(hidden);
        let (w2, b2) = rest.split_at(classes * hidden);
        Self {
            w1,
            b1,
            w2,
            b2,
            inputs,
            hidden,
            classes,
        }
    }

    fn forward(&self, features: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let activations: Vec<f64> = (0..self.hidden)
            .map(|j| {
                let row = &self.w1[j * self.inputs..(j + 1) * self.inputs];
                let pre: f64 = row.iter().zip(features).map(|(w, f)| w * f).sum::<f64>() + self.b1[j];
                pre.tanh()
            })
            .collect();
        let logits = (0..self.classes)
            .map(|k| {
                let row = &self.w2[k * self.hidden..(k + 1) * self.hidden];
                row.iter().zip(&activations).map(|(w, h)| w * h).sum::<f64>() + self.b2[k]
            })
            .collect();
        (activations, logits)
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

fn point_loss(task: &TaskSpec, x: &[f64], p: &DataPoint) -> f64 {
    match &task.model {
        Model::Quadratic { curvature, minimizer } => {
            let mut acc = 0.0;
            for ((a, s), (v, z)) in curvature.iter().zip(minimizer).zip(x.iter().zip(&p.features)) {
                acc += a * ((v - z) * (v - z) - (z - s) * (z - s));
            }
            0.5 * acc
        }
        Model::Logistic => {
            let margin = signed_label(p.label) * dot(x, &p.features);
            softplus(-margin)
        }
        Model::Mlp {
            inputs,
            hidden,
            classes,
        } => {
            let net = MlpParams::split(x, *inputs, *hidden, *classes);
            let (_, logits) = net.forward(&p.features);
            let y = p.label.class().unwrap_or(0);
            log_sum_exp(&logits) - logits[y]
        }
    }
}

fn accumulate_point_grad(task: &TaskSpec, x: &[f64], p: &DataPoint, out: &mut [f64]) {
    match &task.model {
        Model::Quadratic { curvature, .. } => {
            for ((o, a), (v, z)) in out.iter_mut().zip(curvature).zip(x.iter().zip(&p.features)) {
                *o += a * (v - z);
            }
        }
        Model::Logistic => {
            let y = signed_label(p.label);
            let margin = y * dot(x, &p.features);
            let coeff = -y * sigmoid(-margin);
            for (o, f) in out.iter_mut().zip(&p.features) {
                *o += coeff * f;
            }
        }
        Model::Mlp {
            inputs,
            hidden,
            classes,
        } => {
            let (inputs, hidden, classes) = (*inputs, *hidden, *classes);
            let net = MlpParams::split(x, inputs, hidden, classes);
            let (act, logits) = net.forward(&p.features);
            let lse = log_sum_exp(&logits);
            let y = p.label.class().unwrap_or(0);
            let dlogits: Vec<f64> = logits
                .iter()
                .enumerate()
                .map(|(k, l)| (l - lse).exp() - if k == y { 1.0 } else { 0.0 })
                .collect();
            let (gw1, rest) = out.split_at_mut(hidden * inputs);
            let (gb1, rest) = rest.split_at_mut(hidden);
            let (gw2, gb2) = rest.split_at_mut(classes * hidden);
            for k in 0..classes {
                gb2[k] += dlogits[k];
                for j in 0..hidden {
                    gw2[k * hidden + j] += dlogits[k] * act[j];
                }
            }
            for j in 0..hidden {
                let back: f64 = (0..classes).map(|k| net.w2[k * hidden + j] * dlogits[k]).sum();
                let dpre = back * (1.0 - act[j] * act[j]);
                gb1[j] += dpre;
                for (i, f) in p.features.iter().enumerate() {
                    gw1[j * inputs + i] += dpre * f;
                }
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean loss `(1/|batch|) Σ f(x; z)` over the batch.
pub fn loss_eval(task: &TaskSpec, x: &ParamVector, batch: &[DataPoint]) -> Result<f64> {
    check_inputs(task, x, batch)?;
    let total: f64 = batch.iter().map(|p| point_loss(task, x, p)).sum();
    Ok(total / batch.len() as f64)
}

/// Gradient of the batch-mean loss.
pub fn grad_eval(task: &TaskSpec, x: &ParamVector, batch: &[DataPoint]) -> Result<ParamVector> {
    check_inputs(task, x, batch)?;
    let mut out = ParamVector::zeros(task.dimension);
    let acc = out.values_mut();
    for p in batch {
        accumulate_point_grad(task, x, p, acc);
    }
    let scale = 1.0 / batch.len() as f64;
    acc.iter_mut().for_each(|v| *v *= scale);
    Ok(out)
}

/// Predicted class: argmax of class scores, ties to the lowest index.
/// `None` for regression tasks.
pub fn predict(task: &TaskSpec, x: &ParamVector, features: &[f64]) -> Option<usize> {
    let scores = match &task.model {
        Model::Quadratic { .. } => return None,
        Model::Logistic => vec![0.0, dot(x, features)],
        Model::Mlp {
            inputs,
            hidden,
            classes,
        } => {
            MlpParams::split(x, *inputs, *hidden, *classes)
                .forward(features)
                .1
        }
    };
    let mut best = 0;
    for (k, s) in scores.iter().enumerate().skip(1) {
        if *s > scores[best] {
            best = k;
        }
    }
    Some(best)
}

/// Draws `size` points uniformly with replacement.
pub fn sample_batch(dataset: &Dataset, size: usize, rng: &mut Rng) -> Result<Vec<DataPoint>> {
    if size == 0 {
        return Err(Error::EmptyBatchRequested);
    }
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok((0..size)
        .map(|_| dataset.points[rng.index(dataset.len())].clone())
        .collect())
}

/// Splits the dataset into `m` disjoint shards whose sizes differ by at most
/// one. Points are stably sorted by label first, so contiguous shards are
/// as label-homogeneous as possible.
pub fn partition_dataset(dataset: &Dataset, m: usize) -> Result<Vec<Dataset>> {
    if m == 0 || dataset.len() < m {
        return Err(Error::Partition {
            points: dataset.len(),
            shards: m,
        });
    }
    let mut sorted = dataset.points.clone();
    sorted.sort_by(|a, b| a.label.sort_key().total_cmp(&b.label.sort_key()));

    let base = sorted.len() / m;
    let extra = sorted.len() % m;
    let mut rest = sorted.into_iter();
    Ok((0..m)
        .map(|i| {
            let size = base + usize::from(i < extra);
            Dataset::new(rest.by_ref().take(size).collect(), dataset.num_classes)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_quadratic() -> TaskSpec {
        let params = TaskParams::new(TaskKind::Quadratic, 1, 1)
            .with_noise(0.0)
            .with_curvature(1.0, 1.0)
            .with_minimizer(vec![0.0]);
        make_task_with(&params, 0).unwrap().0
    }

    fn origin_batch() -> Vec<DataPoint> {
        vec![DataPoint::new(vec![0.0], Label::Target(0.0))]
    }

    #[test]
    fn half_square_loss_and_gradient() {
        let task = unit_quadratic();
        let loss = loss_eval(&task, &vec![3.0].into(), &origin_batch()).unwrap();
        assert_eq!(loss, 4.5);
        let grad = grad_eval(&task, &vec![2.0].into(), &origin_batch()).unwrap();
        assert_eq!(grad.as_slice(), &[2.0]);
    }

    #[test]
    fn duplicated_batch_matches_single_point() {
        let (task, data) = make_task(TaskKind::Logistic, 4, 10, 1).unwrap();
        let x: ParamVector = vec![0.3, -0.2, 0.1, 0.5].into();
        let single = vec![data.points[3].clone()];
        let dup = vec![data.points[3].clone(); 7];
        let a = loss_eval(&task, &x, &single).unwrap();
        let b = loss_eval(&task, &x, &dup).unwrap();
        assert!((a - b).abs() <= 1e-15 * a.abs().max(1.0));
    }

    #[test]
    fn logistic_at_origin() {
        let (task, _) = make_task(TaskKind::Logistic, 2, 4, 1).unwrap();
        let x = ParamVector::zeros(2);
        let batch = vec![
            DataPoint::new(vec![1.0, 2.0], Label::Class(1)),
            DataPoint::new(vec![-3.0, 0.5], Label::Class(0)),
        ];
        let loss = loss_eval(&task, &x, &batch).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);

        let grad = grad_eval(&task, &x, &batch[..1]).unwrap();
        assert_eq!(grad.as_slice(), &[-0.5, -1.0]);
    }

    #[test]
    fn input_errors() {
        let task = unit_quadratic();
        assert_eq!(loss_eval(&task, &vec![1.0].into(), &[]), Err(Error::EmptyBatch));
        assert!(matches!(
            grad_eval(&task, &vec![1.0, 2.0].into(), &origin_batch()),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!("cnn".parse::<TaskKind>(), Err(Error::UnknownTask(_))));
    }

    #[test]
    fn identity_quadratic_constants() {
        let params = TaskParams::new(TaskKind::Quadratic, 5, 50).with_curvature(1.0, 1.0);
        let (task, data) = make_task_with(&params, 9).unwrap();
        assert_eq!(task.smoothness, 1.0);
        assert_eq!(task.weak_convexity, 1.0);
        assert!(!task.constants_estimated);
        let Model::Quadratic { minimizer, .. } = &task.model else {
            panic!("not quadratic")
        };
        let at_min = loss_eval(&task, &minimizer.clone().into(), &data.points).unwrap();
        assert!(at_min.abs() < 1e-12);
    }

    #[test]
    fn sample_batch_contract() {
        let (_, data) = make_task(TaskKind::Logistic, 3, 20, 4).unwrap();
        let a = sample_batch(&data, 8, &mut Rng::new(5, 9)).unwrap();
        let b = sample_batch(&data, 8, &mut Rng::new(5, 9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            sample_batch(&data, 0, &mut Rng::new(5, 9)),
            Err(Error::EmptyBatchRequested)
        );

        let one = Dataset::new(vec![data.points[0].clone()], 2);
        assert_eq!(
            sample_batch(&one, 1, &mut Rng::new(1, 1)).unwrap(),
            vec![data.points[0].clone()]
        );
    }

    #[test]
    fn partition_by_label() {
        let labels = [1, 0, 1, 0];
        let data = Dataset::new(
            labels
                .iter()
                .enumerate()
                .map(|(i, &l)| DataPoint::new(vec![i as f64], Label::Class(l)))
                .collect(),
            2,
        );
        let shards = partition_dataset(&data, 2).unwrap();
        assert!(shards[0].points.iter().all(|p| p.label == Label::Class(0)));
        assert!(shards[1].points.iter().all(|p| p.label == Label::Class(1)));
        assert_eq!(shards[0].len(), 2);

        let whole = partition_dataset(&data, 1).unwrap();
        assert_eq!(whole.len(), 1);
        assert_eq!(whole[0].len(), 4);

        assert!(matches!(
            partition_dataset(&data, 5),
            Err(Error::Partition { .. })
        ));
    }

    #[test]
    fn partition_ten_into_five() {
        let (_, data) = make_task(TaskKind::Logistic, 2, 10, 2).unwrap();
        let shards = partition_dataset(&data, 5).unwrap();
        assert!(shards.iter().all(|s| s.len() == 2));
        let total: usize = shards.iter().map(Dataset::len).sum();
        assert_eq!(total, 10);
    }

    #[test]
    fn predict_ties_to_lowest_class() {
        let (task, _) = make_task(TaskKind::Logistic, 2, 4, 1).unwrap();
        assert_eq!(predict(&task, &ParamVector::zeros(2), &[1.0, 1.0]), Some(0));
        assert_eq!(predict(&task, &vec![1.0, 0.0].into(), &[1.0, 1.0]), Some(1));
    }

    #[test]
    fn mlp_dimension_is_parameter_count() {
        let (task, data) = make_task(TaskKind::Mlp, 4, 30, 3).unwrap();
        assert_eq!(task.dimension, 8 * 4 + 8 + 3 * 8 + 3);
        assert_eq!(data.num_classes, 3);
        assert!(task.weak_convexity <= task.smoothness);
        assert!(task.constants_estimated);
    }
}
