//! Supervised pre-training of action encoders and random hyperparameter
//! search over it.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{ActionEncoder, EncoderKind};
use super::conditional::{ConditionalFlow, FlowArch, DEFAULT_S_MAX};
use super::vae::{ConditionalVae, VaeArch};
use crate::autodiff::{Adam, Module, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::Activation;
use crate::rng::{derived, standard_normal, SeededRng};
use crate::scalar::Real;

/// Paired `(state, action)` rows used for encoder training.
#[derive(Clone, Debug)]
pub struct ActionData<T> {
    pub states: Tensor<T>,
    pub actions: Tensor<T>,
}

impl<T: Real> ActionData<T> {
    pub fn new(states: Tensor<T>, actions: Tensor<T>) -> Result<Self> {
        if states.rows() != actions.rows() && !states.is_empty() {
            return Err(Error::Shape {
                op: "action data",
                left: states.shape().to_vec(),
                right: actions.shape().to_vec(),
            });
        }
        if actions.rows() == 0 {
            return Err(Error::Config("action data must be non-empty".into()));
        }
        Ok(Self { states, actions })
    }

    /// Unconditional data: states have zero columns.
    pub fn unconditional(actions: Tensor<T>) -> Result<Self> {
        let rows = actions.rows();
        Self::new(Tensor::zeros(&[rows, 0]), actions)
    }

    pub fn len(&self) -> usize {
        self.actions.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn state_dim(&self) -> usize {
        self.states.cols()
    }

    pub fn action_dim(&self) -> usize {
        self.actions.cols()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            states: self.states.select_rows(idx),
            actions: self.actions.select_rows(idx),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowTrainConfig {
    pub kind: EncoderKind,
    /// Coupling layers (flows only).
    pub layers: usize,
    pub hidden: usize,
    /// Hidden layers per conditioner / encoder / decoder network.
    pub hidden_layers: usize,
    pub s_max: f64,
    pub atanh_input: bool,
    pub vae_beta: f64,
    pub steps: usize,
    pub eval_interval: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub validation_fraction: f64,
    /// Evaluations in a row with non-finite validation loss before aborting.
    pub max_nonfinite_evals: usize,
    pub seed: u64,
}

impl Default for FlowTrainConfig {
    fn default() -> Self {
        Self {
            kind: EncoderKind::Cnf,
            layers: 4,
            hidden: 64,
            hidden_layers: 2,
            s_max: DEFAULT_S_MAX,
            atanh_input: false,
            vae_beta: 0.5,
            steps: 100_000,
            eval_interval: 1000,
            batch_size: 512,
            learning_rate: 1e-3,
            weight_decay: 0.0,
            validation_fraction: 0.1,
            max_nonfinite_evals: 10,
            seed: 0,
        }
    }
}

impl FlowTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config(format!(
                "validation_fraction must lie in (0, 1), got {}",
                self.validation_fraction
            )));
        }
        if self.layers == 0 && self.kind != EncoderKind::Vae {
            return Err(Error::Config("flow needs at least one coupling layer".into()));
        }
        if self.eval_interval == 0 || self.batch_size == 0 {
            return Err(Error::Config("eval_interval and batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("learning rate and weight decay must be non-negative".into()));
        }
        Ok(())
    }

    fn hidden_sizes(&self) -> Vec<usize> {
        vec![self.hidden; self.hidden_layers]
    }

    /// Untrained encoder for data of the given dimensions.
    pub fn build<T: Real>(&self, state_dim: usize, action_dim: usize) -> Result<ActionEncoder<T>> {
        let init_seed = self.seed.wrapping_add(0x9e37_79b9);
        Ok(match self.kind {
            EncoderKind::Vae => {
                let mut arch = VaeArch::new(action_dim, state_dim, self.hidden_sizes());
                arch.beta = self.vae_beta;
                ActionEncoder::Vae(ConditionalVae::new(arch, init_seed)?)
            }
            kind => {
                let mut arch = if kind == EncoderKind::Cnf {
                    FlowArch::cnf(action_dim, state_dim, self.layers, self.hidden_sizes())
                } else {
                    FlowArch::nf_normal(action_dim, state_dim, self.layers, self.hidden_sizes())
                };
                arch.s_max = self.s_max;
                arch.atanh_input = self.atanh_input;
                arch.activation = Activation::Relu;
                ActionEncoder::Flow(ConditionalFlow::new(arch, init_seed)?)
            }
        })
    }
}

/// A model trainable by minibatch descent on a per-batch loss.
pub trait Pretrainable<T: Real>: Module<T> + Clone {
    fn batch_loss<'t>(
        &self,
        tape: &'t Tape<T>,
        actions: Var<'t, T>,
        states: Var<'t, T>,
        rng: &mut SeededRng,
    ) -> Result<Var<'t, T>>;
}

impl<T: Real> Pretrainable<T> for ConditionalFlow<T> {
    fn batch_loss<'t>(&self, tape: &'t Tape<T>, a: Var<'t, T>, s: Var<'t, T>, _: &mut SeededRng) -> Result<Var<'t, T>> {
        self.nll_on(tape, a, s)
    }
}

impl<T: Real> Pretrainable<T> for ConditionalVae<T> {
    fn batch_loss<'t>(
        &self,
        tape: &'t Tape<T>,
        a: Var<'t, T>,
        s: Var<'t, T>,
        rng: &mut SeededRng,
    ) -> Result<Var<'t, T>> {
        let eps = standard_normal(rng, a.rows(), self.latent_dim());
        self.elbo_loss_on(tape, a, s, &eps, T::lit(self.arch().beta))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
    pub best_step: usize,
    pub best_val_loss: f64,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,train_nll,val_nll\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{}\n", r.step, r.train_loss, r.val_loss));
        }
        s
    }

    pub fn last(&self) -> Option<&LogRow> {
        self.rows.last()
    }
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome<M> {
    /// Snapshot with the lowest validation loss.
    pub model: M,
    pub log: TrainingLog,
}

/// Deterministic random split; validation gets `ceil(fraction · n)` rows.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    if n < 2 {
        return (idx.clone(), idx);
    }
    idx.shuffle(&mut derived(seed, 1));
    let n_val = ((fraction * n as f64).ceil() as usize).clamp(1, n - 1);
    let val = idx[..n_val].to_vec();
    let train = idx[n_val..].to_vec();
    (train, val)
}

const EVAL_CHUNK: usize = 4096;

/// Mean loss over a full data set, with a fixed noise stream for models
/// whose loss is stochastic.
pub fn dataset_loss<T: Real, M: Pretrainable<T>>(model: &M, data: &ActionData<T>, seed: u64) -> Result<f64> {
    let mut rng = derived(seed, 7);
    let n = data.len();
    let mut total = 0.0;
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_CHUNK).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let chunk = data.subset(&idx);
        let tape = Tape::new();
        let loss = model.batch_loss(
            &tape,
            tape.constant(chunk.actions),
            tape.constant(chunk.states),
            &mut rng,
        )?;
        total += loss.item().as_f64() * (end - start) as f64;
        start = end;
    }
    Ok(total / n as f64)
}

/// Minibatch Adam on the model's loss. Returns the best-validation snapshot.
pub fn fit<T: Real, M: Pretrainable<T>>(
    mut model: M,
    data: &ActionData<T>,
    cfg: &FlowTrainConfig,
) -> Result<PretrainOutcome<M>> {
    cfg.validate()?;
    let (train_idx, val_idx) = split_indices(data.len(), cfg.validation_fraction, cfg.seed);
    let train = data.subset(&train_idx);
    let val = data.subset(&val_idx);
    let mut rng = derived(cfg.seed, 2);
    let mut opt = Adam::with_weight_decay(T::lit(cfg.learning_rate), T::lit(cfg.weight_decay));

    let mut log = TrainingLog {
        best_val_loss: f64::INFINITY,
        ..Default::default()
    };
    let mut best = model.clone();
    let mut nonfinite_streak = 0;
    let eval_seed = cfg.seed.wrapping_add(17);

    let mut evaluate = |model: &M, step: usize, log: &mut TrainingLog, best: &mut M| -> Result<()> {
        let train_loss = dataset_loss(model, &train, eval_seed)?;
        let val_loss = dataset_loss(model, &val, eval_seed)?;
        log.rows.push(LogRow {
            step,
            train_loss,
            val_loss,
        });
        if val_loss.is_finite() {
            nonfinite_streak = 0;
            if val_loss < log.best_val_loss {
                log.best_val_loss = val_loss;
                log.best_step = step;
                *best = model.clone();
            }
        } else {
            nonfinite_streak += 1;
            if nonfinite_streak >= cfg.max_nonfinite_evals {
                return Err(Error::Diverged(format!(
                    "validation loss non-finite for {nonfinite_streak} consecutive evaluations (last at step {step})"
                )));
            }
        }
        Ok(())
    };

    evaluate(&model, 0, &mut log, &mut best)?;
    for step in 1..=cfg.steps {
        let idx: Vec<usize> = (0..cfg.batch_size)
            .map(|_| train_idx_pick(&mut rng, train.len()))
            .collect();
        let batch = train.subset(&idx);
        let tape = Tape::new();
        let loss = model.batch_loss(
            &tape,
            tape.constant(batch.actions),
            tape.constant(batch.states),
            &mut rng,
        )?;
        if loss.item().is_finite() {
            let grads = tape.backward(loss)?;
            grads.accumulate(model.parameters_mut());
            opt.step(model.parameters_mut());
        } else {
            log::warn!("non-finite training loss at step {step}; update skipped");
        }
        if step % cfg.eval_interval == 0 {
            evaluate(&model, step, &mut log, &mut best)?;
        }
    }
    Ok(PretrainOutcome { model: best, log })
}

fn train_idx_pick(rng: &mut SeededRng, n: usize) -> usize {
    rng.random_range(0..n)
}

/// Pre-trains the encoder family selected by `cfg.kind`.
pub fn pretrain<T: Real>(data: &ActionData<T>, cfg: &FlowTrainConfig) -> Result<PretrainOutcome<ActionEncoder<T>>> {
    check_actions(data, cfg)?;
    match cfg.build::<T>(data.state_dim(), data.action_dim())? {
        ActionEncoder::Flow(f) => {
            let out = fit(f, data, cfg)?;
            Ok(PretrainOutcome {
                model: ActionEncoder::Flow(out.model),
                log: out.log,
            })
        }
        ActionEncoder::Vae(v) => {
            let out = fit(v, data, cfg)?;
            Ok(PretrainOutcome {
                model: ActionEncoder::Vae(out.model),
                log: out.log,
            })
        }
    }
}

fn check_actions<T: Real>(data: &ActionData<T>, cfg: &FlowTrainConfig) -> Result<()> {
    let one = T::one();
    let bad = data.actions.data().iter().find(|v| {
        if cfg.atanh_input {
            !(v.abs() < one)
        } else {
            !(v.abs() <= one)
        }
    });
    match bad {
        Some(v) => Err(Error::Config(format!("action value {v} outside the normalized range"))),
        None => Ok(()),
    }
}

/// Sampling ranges for random search. Defaults are the pre-training ranges
/// used for the published runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    pub lr_min: f64,
    pub lr_max: f64,
    pub wd_min: f64,
    pub wd_max: f64,
    pub batch_sizes: Vec<usize>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            lr_min: 1e-5,
            lr_max: 3e-3,
            wd_min: 0.0,
            wd_max: 1e-2,
            batch_sizes: vec![512, 1024, 2048],
        }
    }
}

impl SearchSpace {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> TrialParams {
        let lr = if self.lr_max > self.lr_min {
            rng.random_range(self.lr_min..self.lr_max)
        } else {
            self.lr_min
        };
        let wd = if self.wd_max > self.wd_min {
            rng.random_range(self.wd_min..self.wd_max)
        } else {
            self.wd_min
        };
        let batch_size = self.batch_sizes[rng.random_range(0..self.batch_sizes.len())];
        TrialParams {
            learning_rate: lr,
            weight_decay: wd,
            batch_size,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialParams {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrialResult {
    pub index: usize,
    pub params: TrialParams,
    pub best_val_loss: Option<f64>,
    pub best_step: Option<usize>,
    pub final_train_loss: Option<f64>,
    pub error: Option<String>,
    #[serde(skip)]
    pub log: TrainingLog,
}

#[derive(Clone, Debug)]
pub struct SearchOutcome<T> {
    pub best: ActionEncoder<T>,
    pub best_index: usize,
    pub trials: Vec<TrialResult>,
    /// Trial indices from best to worst validation loss; failed trials last.
    pub ranking: Vec<usize>,
}

/// Runs `pretrain` once per trial (all trials share the data split) and
/// keeps the lowest validation loss.
pub fn run_trials<T: Real>(
    data: &ActionData<T>,
    base: &FlowTrainConfig,
    trials: &[TrialParams],
) -> Result<SearchOutcome<T>> {
    if trials.is_empty() {
        return Err(Error::Config("hyperparameter search needs at least one trial".into()));
    }
    let mut results = Vec::with_capacity(trials.len());
    let mut best: Option<(f64, usize, ActionEncoder<T>)> = None;
    for (index, params) in trials.iter().enumerate() {
        let cfg = FlowTrainConfig {
            learning_rate: params.learning_rate,
            weight_decay: params.weight_decay,
            batch_size: params.batch_size,
            ..base.clone()
        };
        match pretrain(data, &cfg) {
            Ok(out) if out.log.best_val_loss.is_finite() => {
                let v = out.log.best_val_loss;
                if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
                    best = Some((v, index, out.model));
                }
                results.push(TrialResult {
                    index,
                    params: params.clone(),
                    best_val_loss: Some(v),
                    best_step: Some(out.log.best_step),
                    final_train_loss: out.log.last().map(|r| r.train_loss),
                    error: None,
                    log: out.log,
                });
            }
            Ok(out) => results.push(TrialResult {
                index,
                params: params.clone(),
                best_val_loss: None,
                best_step: None,
                final_train_loss: None,
                error: Some("validation loss never finite".into()),
                log: out.log,
            }),
            Err(e) => results.push(TrialResult {
                index,
                params: params.clone(),
                best_val_loss: None,
                best_step: None,
                final_train_loss: None,
                error: Some(e.to_string()),
                log: TrainingLog::default(),
            }),
        }
    }
    let Some((_, best_index, best)) = best else {
        let diag: Vec<String> = results
            .iter()
            .map(|r| format!("trial {}: {}", r.index, r.error.as_deref().unwrap_or("unknown")))
            .collect();
        return Err(Error::Diverged(format!("all trials failed: {}", diag.join("; "))));
    };
    let mut ranking: Vec<usize> = (0..results.len()).collect();
    ranking.sort_by(|&a, &b| {
        let key = |i: usize| results[i].best_val_loss.unwrap_or(f64::INFINITY);
        key(a).total_cmp(&key(b)).then(a.cmp(&b))
    });
    Ok(SearchOutcome {
        best,
        best_index,
        trials: results,
        ranking,
    })
}

/// Random search: draws `n_trials` settings from `space` and runs them.
pub fn hyperparameter_search<T: Real>(
    data: &ActionData<T>,
    base: &FlowTrainConfig,
    space: &SearchSpace,
    n_trials: usize,
    rng: &mut SeededRng,
) -> Result<SearchOutcome<T>> {
    if n_trials == 0 {
        return Err(Error::Config("n_trials must be at least 1".into()));
    }
    if space.batch_sizes.is_empty() {
        return Err(Error::Config("search space has no batch sizes".into()));
    }
    let trials: Vec<TrialParams> = (0..n_trials).map(|_| space.sample(rng)).collect();
    run_trials(data, base, &trials)
}
