//! Class- and domain-incremental training and evaluation.
//!
//! For every task `t` the model trains on the union of the replay buffer and
//! the task's training data, the buffer is rebalanced, and the model is
//! evaluated on the test set of every task seen so far. Classification is by
//! nearest label embedding over the candidate classes: all classes seen so
//! far (class-incremental) or the shared label set (domain-incremental).
//!
//! `A_t` is the pooled accuracy over the union of test sets `1..=t` for
//! class-incremental streams, and the unweighted mean of the per-domain
//! accuracies for domain-incremental streams.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::gcl::{GclEstimatorState, Temperature};
use crate::gdro::{GdroConfig, GdroEstimatorState};
use crate::memory::{sample_class_batch, MemoryBuffer};
use crate::model::{argmax_smallest_id, init_params, EncoderConfig, ParamVector};
use crate::optim::{OptimizerConfig, OptimizerState};
use crate::pairs::{log_sum_exp, SimilarityTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Protocol {
    #[serde(rename = "cil")]
    ClassIncremental,
    #[serde(rename = "dil")]
    DomainIncremental,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    /// Ascending.
    pub classes: Vec<u32>,
    pub domain: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskStream {
    pub protocol: Protocol,
    pub tasks: Vec<Task>,
}

impl TaskStream {
    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::InvalidStream("stream has no tasks".into()));
        }
        let mut seen: BTreeSet<u32> = BTreeSet::new();
        let mut ids: BTreeSet<u64> = BTreeSet::new();
        let mut dim = None;
        for (t, task) in self.tasks.iter().enumerate() {
            if task.train.is_empty() {
                return Err(Error::InvalidStream(format!("task {t} has no training data")));
            }
            if task.classes.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidStream(format!("task {t} class set is not sorted/unique")));
            }
            for s in task.train.iter().chain(&task.test) {
                if task.classes.binary_search(&s.class).is_err() {
                    return Err(Error::InvalidStream(format!(
                        "sample {} of task {t} has class {} outside the task's class set",
                        s.id, s.class
                    )));
                }
                if !ids.insert(s.id) {
                    return Err(Error::InvalidStream(format!("duplicate sample id {}", s.id)));
                }
                match dim {
                    None => dim = Some(s.x.len()),
                    Some(d) if d != s.x.len() => {
                        return Err(Error::InvalidStream(format!("sample {} has inconsistent dimension", s.id)))
                    }
                    _ => {}
                }
            }
            match self.protocol {
                Protocol::ClassIncremental => {
                    for c in &task.classes {
                        if !seen.insert(*c) {
                            return Err(Error::InvalidStream(format!(
                                "class {c} appears in more than one task of a class-incremental stream"
                            )));
                        }
                    }
                }
                Protocol::DomainIncremental => {
                    if task.classes != self.tasks[0].classes {
                        return Err(Error::InvalidStream(format!(
                            "task {t} class set differs from task 0 in a domain-incremental stream"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.tasks[0].train[0].x.len()
    }

    pub fn all_classes(&self) -> Vec<u32> {
        self.tasks
            .iter()
            .flat_map(|t| t.classes.iter().copied())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Smallest label table that covers every class in the stream.
    pub fn num_classes_max(&self) -> usize {
        self.all_classes().last().map_or(1, |&c| c as usize + 1)
    }

    /// Candidate classes for evaluation after task `t`.
    pub fn candidates_after(&self, t: usize) -> Vec<u32> {
        match self.protocol {
            Protocol::ClassIncremental => self.tasks[..=t]
                .iter()
                .flat_map(|task| task.classes.iter().copied())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
            Protocol::DomainIncremental => self.tasks[0].classes.clone(),
        }
    }

    /// All tasks concatenated into one.
    pub fn merged(&self) -> TaskStream {
        let mut train: Vec<Sample> = Vec::new();
        let mut test: Vec<Sample> = Vec::new();
        for t in &self.tasks {
            train.extend(t.train.iter().cloned().map(|s| Sample { task: 0, ..s }));
            test.extend(t.test.iter().cloned().map(|s| Sample { task: 0, ..s }));
        }
        TaskStream {
            protocol: self.protocol,
            tasks: vec![Task {
                train,
                test,
                classes: self.all_classes(),
                domain: None,
            }],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Gcl,
    Gdro,
    FinetuneCe,
    JointUpperBound,
    ZeroShot,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Gcl => "gcl",
            Method::Gdro => "gdro",
            Method::FinetuneCe => "finetune-ce",
            Method::JointUpperBound => "joint-upper-bound",
            Method::ZeroShot => "zero-shot",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [Method::Gcl, Method::Gdro, Method::FinetuneCe, Method::JointUpperBound, Method::ZeroShot]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderShape {
    pub hidden_dim: usize,
    pub embed_dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GdroParams {
    pub lambda: f64,
    pub margin: f64,
    pub batch_classes: usize,
    pub batch_per_class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub method: Method,
    pub epochs_per_task: usize,
    /// Mini-batch size for the GCL and cross-entropy objectives.
    pub batch_size: usize,
    pub memory_capacity: usize,
    pub tau: f64,
    /// Moving-average rate shared by the GCL and GDRO estimators.
    pub gamma: f64,
    pub gdro: GdroParams,
    pub optimizer: OptimizerConfig,
    pub encoder: EncoderShape,
    pub seed: u64,
    /// Objective used by the joint upper bound.
    pub joint_objective: Method,
    /// Epochs for the joint upper bound; defaults to `epochs_per_task`.
    pub joint_epochs: Option<usize>,
}

impl Default for EncoderShape {
    fn default() -> Self {
        Self {
            hidden_dim: 32,
            embed_dim: 16,
        }
    }
}

impl Default for GdroParams {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            margin: 0.5,
            batch_classes: 8,
            batch_per_class: 4,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: Method::Gdro,
            epochs_per_task: 10,
            batch_size: 32,
            memory_capacity: 100,
            tau: 0.1,
            gamma: 0.9,
            gdro: GdroParams::default(),
            optimizer: OptimizerConfig::default(),
            encoder: EncoderShape::default(),
            seed: 0,
            joint_objective: Method::FinetuneCe,
            joint_epochs: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs_per_task == 0 {
            return Err(Error::InvalidConfig("epochs_per_task must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        Temperature::new(self.tau)?;
        self.gdro_config().validate()?;
        if self.gdro.batch_classes < 2 {
            return Err(Error::InvalidConfig(
                "gdro.batch_classes must be >= 2 so every anchor has negatives".into(),
            ));
        }
        self.optimizer.validate()?;
        if self.encoder.embed_dim == 0 {
            return Err(Error::InvalidConfig("encoder.embed_dim must be >= 1".into()));
        }
        if !matches!(self.joint_objective, Method::Gcl | Method::Gdro | Method::FinetuneCe) {
            return Err(Error::InvalidConfig(format!(
                "joint_objective must be a trainable objective, got {}",
                self.joint_objective
            )));
        }
        if self.joint_epochs == Some(0) {
            return Err(Error::InvalidConfig("joint_epochs must be >= 1".into()));
        }
        Ok(())
    }

    pub fn temperature(&self) -> Temperature {
        Temperature::new(self.tau).expect("validated temperature")
    }

    pub fn gdro_config(&self) -> GdroConfig {
        GdroConfig {
            lambda: self.gdro.lambda,
            gamma: self.gamma,
            margin: self.gdro.margin,
            tau: Temperature::new(self.tau).unwrap_or(Temperature::new(1.0).unwrap()),
            batch_classes: self.gdro.batch_classes,
            batch_per_class: self.gdro.batch_per_class,
        }
    }

    pub fn encoder_config(&self, stream: &TaskStream) -> EncoderConfig {
        EncoderConfig {
            input_dim: stream.input_dim(),
            num_classes_max: stream.num_classes_max(),
            hidden_dim: self.encoder.hidden_dim,
            embed_dim: self.encoder.embed_dim,
            seed: self.seed,
        }
    }
}

/// Lower-triangular accuracy matrix: `entry(t, b)` is the accuracy on task
/// `b`'s test set after training through task `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    pub protocol: Protocol,
    rows: Vec<Vec<EvalCount>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCount {
    pub correct: usize,
    pub total: usize,
}

impl EvalCount {
    pub fn accuracy(self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

impl AccuracyMatrix {
    pub fn new(protocol: Protocol) -> Self {
        Self {
            protocol,
            rows: Vec::new(),
        }
    }

    pub fn push_row(&mut self, row: Vec<EvalCount>) {
        debug_assert_eq!(row.len(), self.rows.len() + 1);
        self.rows.push(row);
    }

    pub fn num_tasks(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, t: usize) -> Vec<f64> {
        self.rows[t].iter().map(|c| c.accuracy()).collect()
    }

    pub fn entry(&self, t: usize, b: usize) -> Option<f64> {
        self.rows.get(t)?.get(b).map(|c| c.accuracy())
    }

    /// `A_t` for row `t`.
    pub fn aggregate(&self, t: usize) -> f64 {
        let row = &self.rows[t];
        match self.protocol {
            Protocol::ClassIncremental => {
                let correct: usize = row.iter().map(|c| c.correct).sum();
                let total: usize = row.iter().map(|c| c.total).sum();
                EvalCount { correct, total }.accuracy()
            }
            Protocol::DomainIncremental => row.iter().map(|c| c.accuracy()).sum::<f64>() / row.len() as f64,
        }
    }

    pub fn curve(&self) -> Vec<f64> {
        (0..self.rows.len()).map(|t| self.aggregate(t)).collect()
    }

    pub fn final_aggregate(&self) -> f64 {
        self.aggregate(self.rows.len() - 1)
    }
}

/// One JSON-lines record of the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub task: usize,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub class_losses: Option<BTreeMap<u32, f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dro_weights: Option<BTreeMap<u32, f64>>,
}

/// Hooks into a run, for instrumentation.
pub trait RunObserver {
    fn on_step(&mut self, _record: &LogRecord) {}
    fn on_task_end(&mut self, _task: usize, _buffer: &MemoryBuffer) {}
}

pub struct NoopObserver;

impl RunObserver for NoopObserver {}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub matrix: AccuracyMatrix,
    pub params: ParamVector,
    pub log: Vec<LogRecord>,
}

/// Fraction of `test` classified correctly among `candidate_classes`.
pub fn evaluate(params: &ParamVector, test: &[Sample], candidate_classes: &[u32]) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Empty("test set"));
    }
    Ok(evaluate_counts(params, test, candidate_classes)?.accuracy())
}

pub fn evaluate_counts(params: &ParamVector, test: &[Sample], candidate_classes: &[u32]) -> Result<EvalCount> {
    if candidate_classes.is_empty() {
        return Err(Error::Empty("candidate class set"));
    }
    let labels = params.label_table(candidate_classes)?;
    let mut correct = 0;
    let mut scores = Vec::with_capacity(candidate_classes.len());
    for s in test {
        let e = params.encode_input(&s.x)?;
        scores.clear();
        scores.extend(candidate_classes.iter().zip(&labels).map(|(&c, l)| (c, e.dot(l))));
        if argmax_smallest_id(&scores) == s.class {
            correct += 1;
        }
    }
    Ok(EvalCount {
        correct,
        total: test.len(),
    })
}

/// Mean softmax cross-entropy of `s(x_i, y_c)/τ` over `candidates`.
pub fn ce_loss(params: &ParamVector, batch: &[Sample], candidates: &[u32], tau: Temperature) -> Result<f64> {
    let (loss, _) = ce_loss_and_grad(params, batch, candidates, tau, false)?;
    Ok(loss)
}

pub fn ce_gradient(params: &ParamVector, batch: &[Sample], candidates: &[u32], tau: Temperature) -> Result<ParamVector> {
    let (_, grad) = ce_loss_and_grad(params, batch, candidates, tau, true)?;
    Ok(grad.expect("gradient requested"))
}

fn ce_loss_and_grad(
    params: &ParamVector,
    batch: &[Sample],
    candidates: &[u32],
    tau: Temperature,
    want_grad: bool,
) -> Result<(f64, Option<ParamVector>)> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    for s in batch {
        if !candidates.contains(&s.class) {
            return Err(Error::InvalidConfig(format!("class {} is not among the candidates", s.class)));
        }
    }
    let rows: Vec<&Sample> = batch.iter().collect();
    let table = SimilarityTable::new(params, &rows, candidates)?;
    let cols: Vec<usize> = candidates
        .iter()
        .map(|&c| table.column_of(c).expect("candidate column"))
        .collect();
    let t = tau.get();
    let b = batch.len() as f64;
    let mut loss = 0.0;
    let mut coef = table.coefficients();
    for i in 0..batch.len() {
        let logits: Vec<f64> = cols.iter().map(|&c| table.sim(i, c) / t).collect();
        let lse = log_sum_exp(logits.iter().copied());
        let own = table.own_column(i);
        loss += lse - table.sim(i, own) / t;
        if want_grad {
            for (&c, z) in cols.iter().zip(&logits) {
                coef.add(i, c, (z - lse).exp() / (t * b));
            }
            coef.add(i, own, -1.0 / (t * b));
        }
    }
    let grad = want_grad.then(|| table.backprop(params, &rows, &coef));
    Ok((loss / b, grad))
}

struct Trainer<'a> {
    config: &'a RunConfig,
    method: Method,
    params: ParamVector,
    opt: OptimizerState,
    gcl: GclEstimatorState,
    gdro: GdroEstimatorState,
    rng: ChaCha8Rng,
    step: usize,
    log: Vec<LogRecord>,
}

impl<'a> Trainer<'a> {
    fn new(config: &'a RunConfig, method: Method, stream: &TaskStream) -> Result<Self> {
        let params = init_params(&config.encoder_config(stream))?;
        let opt = OptimizerState::new(config.optimizer, params.len())?;
        Ok(Self {
            config,
            method,
            opt,
            gcl: GclEstimatorState::new(config.gamma)?,
            gdro: GdroEstimatorState::new(config.gamma, config.gdro.lambda)?,
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_7a1e_0000_0001),
            params,
            step: 0,
            log: Vec::new(),
        })
    }

    fn apply(&mut self, task: usize, grad: &ParamVector, record: LogRecord, observer: &mut dyn RunObserver) -> Result<()> {
        let diverged = |reason: String| Error::Divergence {
            task,
            step: self.step,
            reason,
        };
        if !record.loss.is_finite() {
            return Err(diverged(format!("loss is {}", record.loss)));
        }
        self.opt.step(&mut self.params, grad).map_err(|e| diverged(e.to_string()))?;
        if !self.params.is_finite() {
            return Err(diverged("parameters became non-finite".into()));
        }
        observer.on_step(&record);
        self.log.push(record);
        self.step += 1;
        Ok(())
    }

    fn train_task(&mut self, task: usize, pool: &[Sample], epochs: usize, observer: &mut dyn RunObserver) -> Result<()> {
        for _ in 0..epochs {
            match self.method {
                Method::Gcl => self.gcl_epoch(task, pool, observer)?,
                Method::Gdro => self.gdro_epoch(task, pool, observer)?,
                Method::FinetuneCe => self.ce_epoch(task, pool, observer)?,
                Method::ZeroShot | Method::JointUpperBound => {}
            }
        }
        Ok(())
    }

    fn shuffled_batches(&mut self, pool: &[Sample]) -> Vec<Vec<Sample>> {
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.shuffle(&mut self.rng);
        order
            .chunks(self.config.batch_size)
            .map(|c| c.iter().map(|&i| pool[i].clone()).collect())
            .collect()
    }

    fn gcl_epoch(&mut self, task: usize, pool: &[Sample], observer: &mut dyn RunObserver) -> Result<()> {
        let tau = self.config.temperature();
        for batch in self.shuffled_batches(pool) {
            self.gcl.update(&self.params, &batch, pool.len(), tau)?;
            let grad = self.gcl.gradient_estimate(&self.params, &batch, pool.len(), tau)?;
            let loss = self.gcl.loss_estimate(&self.params, &batch, tau)?;
            let record = LogRecord {
                step: self.step,
                task,
                loss,
                class_losses: None,
                dro_weights: None,
            };
            self.apply(task, &grad, record, observer)?;
        }
        Ok(())
    }

    fn ce_epoch(&mut self, task: usize, pool: &[Sample], observer: &mut dyn RunObserver) -> Result<()> {
        let tau = self.config.temperature();
        let candidates: Vec<u32> = pool.iter().map(|s| s.class).collect::<BTreeSet<_>>().into_iter().collect();
        for batch in self.shuffled_batches(pool) {
            let (loss, grad) = ce_loss_and_grad(&self.params, &batch, &candidates, tau, true)?;
            let record = LogRecord {
                step: self.step,
                task,
                loss,
                class_losses: None,
                dro_weights: None,
            };
            self.apply(task, &grad.expect("gradient requested"), record, observer)?;
        }
        Ok(())
    }

    fn gdro_epoch(&mut self, task: usize, pool: &[Sample], observer: &mut dyn RunObserver) -> Result<()> {
        let cfg = self.config.gdro_config();
        let mut by_class: BTreeMap<u32, Vec<Sample>> = BTreeMap::new();
        for s in pool {
            by_class.entry(s.class).or_default().push(s.clone());
        }
        let classes: Vec<u32> = by_class.keys().copied().collect();
        if classes.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "task {task}: GDRO needs at least two classes in the training pool, found {}",
                classes.len()
            )));
        }
        let per_step = cfg.batch_classes * cfg.batch_per_class;
        let steps = pool.len().div_ceil(per_step);
        for _ in 0..steps {
            let k = cfg.batch_classes.min(classes.len());
            let mut class_batch: Vec<u32> = index::sample(&mut self.rng, classes.len(), k)
                .into_iter()
                .map(|i| classes[i])
                .collect();
            class_batch.sort_unstable();
            let mut per_class = BTreeMap::new();
            for &c in &class_batch {
                let seed = self.rng.random::<u64>();
                per_class.insert(c, sample_class_batch(&by_class[&c], c, cfg.batch_per_class, seed)?);
            }
            self.gdro.update(&self.params, &class_batch, &per_class, &cfg)?;
            let grad = self.gdro.gradient_estimate(&self.params, &class_batch, &per_class, &cfg)?;
            let record = LogRecord {
                step: self.step,
                task,
                loss: self.gdro.objective_estimate().unwrap_or(f64::NAN),
                class_losses: Some(self.gdro.class_estimates().clone()),
                dro_weights: Some(self.gdro.weights()),
            };
            self.apply(task, &grad, record, observer)?;
        }
        Ok(())
    }
}

/// Runs the continual protocol with `config.method`.
pub fn run(stream: &TaskStream, config: &RunConfig) -> Result<RunOutput> {
    run_observed(stream, config, &mut NoopObserver)
}

pub fn run_observed(stream: &TaskStream, config: &RunConfig, observer: &mut dyn RunObserver) -> Result<RunOutput> {
    config.validate()?;
    stream.validate()?;
    if config.method == Method::JointUpperBound {
        return run_joint(stream, config, observer);
    }
    continual(stream, config, config.method, config.epochs_per_task, observer)
}

fn continual(
    stream: &TaskStream,
    config: &RunConfig,
    method: Method,
    epochs: usize,
    observer: &mut dyn RunObserver,
) -> Result<RunOutput> {
    let mut trainer = Trainer::new(config, method, stream)?;
    let mut buffer = MemoryBuffer::new(config.memory_capacity, config.seed ^ 0xb0ff_e700_0000_0002);
    let mut matrix = AccuracyMatrix::new(stream.protocol);

    for (t, task) in stream.tasks.iter().enumerate() {
        let pool = buffer.union_view(&task.train);
        trainer.train_task(t, &pool, epochs, observer)?;
        buffer.rebalance_after_task(&task.train);
        observer.on_task_end(t, &buffer);

        let candidates = stream.candidates_after(t);
        let row = stream.tasks[..=t]
            .iter()
            .map(|b| evaluate_counts(&trainer.params, &b.test, &candidates))
            .collect::<Result<Vec<_>>>()?;
        matrix.push_row(row);
    }
    Ok(RunOutput {
        matrix,
        params: trainer.params,
        log: trainer.log,
    })
}

fn run_joint(stream: &TaskStream, config: &RunConfig, observer: &mut dyn RunObserver) -> Result<RunOutput> {
    let merged = stream.merged();
    let epochs = config.joint_epochs.unwrap_or(config.epochs_per_task);
    continual(&merged, config, config.joint_objective, epochs, observer)
}

/// Accuracy on the union test set after training once on all tasks' data.
pub fn joint_upper_bound(stream: &TaskStream, config: &RunConfig) -> Result<f64> {
    let cfg = RunConfig {
        method: Method::JointUpperBound,
        ..config.clone()
    };
    Ok(run(stream, &cfg)?.matrix.final_aggregate())
}

/// The continual protocol trained with softmax cross-entropy over the
/// classes present in each task's pool.
pub fn finetune_ce_baseline(stream: &TaskStream, config: &RunConfig) -> Result<AccuracyMatrix> {
    let cfg = RunConfig {
        method: Method::FinetuneCe,
        ..config.clone()
    };
    Ok(run(stream, &cfg)?.matrix)
}
