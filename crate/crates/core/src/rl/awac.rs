use rand::Rng;
use serde::{Deserialize, Serialize};

use super::critic::TwinCritic;
use super::decoder::{ActionCodec, ActionDecoder, IdentityDecoder};
use super::policy::{LatentPolicy, Squash};
use crate::autodiff::{Adam, Module, Tape, Tensor, Var};
use crate::envs::{rollout, support_violation_rate, EnvSpec, OfflineDataset};
use crate::error::{Error, Result};
use crate::flow::EncoderKind;
use crate::nn::Activation;
use crate::rng::{derived, SeededRng};
use crate::scalar::Real;

/// Upper clamp on `Â/λ` before exponentiation.
pub const MAX_EXPONENT: f64 = 20.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TargetMode {
    /// Targets use the live critics.
    Off,
    Polyak { tau: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AwacConfig {
    /// Advantage temperature λ.
    pub lambda: f64,
    pub gamma: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    /// Seed of the evaluation start states, shared by every agent.
    pub eval_seed: u64,
    /// Steps between "train" metric records.
    pub log_interval: usize,
    pub target: TargetMode,
    pub seed: u64,
}

impl Default for AwacConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0 / 3.0,
            gamma: 0.99,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            batch_size: 256,
            steps: 50_000,
            hidden: vec![256, 256],
            activation: Activation::Relu,
            eval_interval: 5000,
            eval_episodes: 10,
            eval_seed: 7777,
            log_interval: 1000,
            target: TargetMode::Off,
            seed: 0,
        }
    }
}

impl AwacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::Config(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if !(self.actor_lr >= 0.0 && self.critic_lr >= 0.0) {
            return Err(Error::Config("learning rates must be non-negative".into()));
        }
        if self.batch_size == 0 || self.eval_interval == 0 || self.log_interval == 0 {
            return Err(Error::Config("batch_size, eval_interval and log_interval must be positive".into()));
        }
        if let TargetMode::Polyak { tau } = self.target {
            if !(tau > 0.0 && tau <= 1.0) {
                return Err(Error::Config(format!("polyak tau must lie in (0, 1], got {tau}")));
            }
        }
        Ok(())
    }
}

/// Which encoder and policy head an agent uses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Variant {
    Cnf,
    NfNormal,
    NfClipped(f64),
    Vae,
    LatentDirect,
}

impl Variant {
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || {
            Error::Config(format!(
                "unknown variant `{s}` (valid: cnf, nf-normal, nf-clipped:<amplitude>, vae, latent-direct)"
            ))
        };
        match s {
            "cnf" => Ok(Variant::Cnf),
            "nf-normal" => Ok(Variant::NfNormal),
            "vae" => Ok(Variant::Vae),
            "latent-direct" => Ok(Variant::LatentDirect),
            _ => {
                let a: f64 = s.strip_prefix("nf-clipped:").ok_or_else(bad)?.parse().map_err(|_| bad())?;
                if !(a > 0.0 && a.is_finite()) {
                    return Err(Error::Config(format!("clipping amplitude must be positive, got {a}")));
                }
                Ok(Variant::NfClipped(a))
            }
        }
    }

    pub fn name(&self) -> String {
        match self {
            Variant::Cnf => "cnf".into(),
            Variant::NfNormal => "nf-normal".into(),
            Variant::NfClipped(a) => format!("nf-clipped:{a}"),
            Variant::Vae => "vae".into(),
            Variant::LatentDirect => "latent-direct".into(),
        }
    }

    pub fn encoder_kind(&self) -> EncoderKind {
        match self {
            Variant::Cnf | Variant::LatentDirect => EncoderKind::Cnf,
            Variant::NfNormal | Variant::NfClipped(_) => EncoderKind::NfNormal,
            Variant::Vae => EncoderKind::Vae,
        }
    }

    pub fn squash(&self) -> Squash {
        match *self {
            Variant::Cnf | Variant::LatentDirect => Squash::Tanh,
            Variant::NfNormal => Squash::None,
            Variant::NfClipped(a) => Squash::Amplitude { a },
            Variant::Vae => Squash::Amplitude { a: 2.0 },
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.name())
    }
}

impl Serialize for Variant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for Variant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Variant::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Transition tensors with `m` rows.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub states: Tensor<T>,
    pub actions: Tensor<T>,
    pub rewards: Tensor<T>,
    pub next_states: Tensor<T>,
    pub terminals: Tensor<T>,
}

impl<T: Real> Batch<T> {
    pub fn from_dataset(ds: &OfflineDataset) -> Self {
        Self {
            states: ds.states_tensor(),
            actions: ds.actions_tensor(),
            rewards: ds.rewards_tensor(),
            next_states: ds.next_states_tensor(),
            terminals: ds.terminals_tensor(),
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            states: self.states.select_rows(idx),
            actions: self.actions.select_rows(idx),
            rewards: self.rewards.select_rows(idx),
            next_states: self.next_states.select_rows(idx),
            terminals: self.terminals.select_rows(idx),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, size: usize) -> Self {
        let n = self.len();
        let idx: Vec<usize> = (0..size).map(|_| rng.random_range(0..n)).collect();
        self.select(&idx)
    }
}

/// `â = decoder(policy_sample(s), s)` on `tape`, with the decoder frozen.
pub fn decoded_sample_on<'t, T: Real, D: ActionDecoder<T> + ?Sized>(
    tape: &'t Tape<T>,
    policy: &LatentPolicy<T>,
    decoder: &D,
    s: Var<'t, T>,
    eta: &Tensor<T>,
) -> Result<Var<'t, T>> {
    tape.freeze(decoder.frozen_ids());
    let z = policy.sample_on(tape, s, eta)?;
    decoder.decode_on(tape, z, s)
}

fn decoded_sample<T: Real, D: ActionDecoder<T> + ?Sized>(
    policy: &LatentPolicy<T>,
    decoder: &D,
    s: &Tensor<T>,
    eta: &Tensor<T>,
) -> Result<Tensor<T>> {
    let tape = Tape::new();
    Ok(decoded_sample_on(&tape, policy, decoder, tape.constant(s.clone()), eta)?.value())
}

/// `y = r + γ (1 − terminal) min_i Q_i(s′, a′)` with `a′` decoded from a
/// policy sample at `s′`; `eta` is the sample noise.
pub fn critic_target<T: Real, D: ActionDecoder<T> + ?Sized>(
    batch: &Batch<T>,
    decoder: &D,
    policy: &LatentPolicy<T>,
    critics: &TwinCritic<T>,
    gamma: f64,
    eta: &Tensor<T>,
) -> Result<Tensor<T>> {
    let a_next = decoded_sample(policy, decoder, &batch.next_states, eta)?;
    let q_next = critics.min_q(&batch.next_states, &a_next)?;
    let g = T::lit(gamma);
    let mut y = batch.rewards.clone();
    for ((yi, q), d) in y.data_mut().iter_mut().zip(q_next.data()).zip(batch.terminals.data()) {
        *yi += g * (T::one() - *d) * *q;
    }
    Ok(y)
}

/// Batch mean of `(Q₁(s,a) − y)² + (Q₂(s,a) − y)²`.
pub fn critic_loss_on<'t, T: Real>(
    tape: &'t Tape<T>,
    critics: &TwinCritic<T>,
    states: &Tensor<T>,
    actions: &Tensor<T>,
    targets: &Tensor<T>,
) -> Result<Var<'t, T>> {
    let (q1, q2) = critics.q_on(tape, tape.constant(states.clone()), tape.constant(actions.clone()))?;
    let y = tape.constant(targets.clone());
    Ok(q1.sub(y)?.square().add(q2.sub(y)?.square())?.mean())
}

/// Advantage weights `ω = exp(min(Â/λ, 20))` with
/// `Â = min Q(s, a) − min Q(s, â)`, as an `m×1` tensor, plus the number of
/// clamped entries.
pub fn advantage_weights_from<T: Real>(
    critics: &TwinCritic<T>,
    states: &Tensor<T>,
    actions: &Tensor<T>,
    policy_actions: &Tensor<T>,
    lambda: f64,
) -> Result<(Tensor<T>, usize)> {
    let q_data = critics.min_q(states, actions)?;
    let q_pi = critics.min_q(states, policy_actions)?;
    let cap = T::lit(MAX_EXPONENT);
    let lam = T::lit(lambda);
    let mut clamped = 0;
    let mut w = q_data;
    for (wi, &qp) in w.data_mut().iter_mut().zip(q_pi.data()) {
        let e = (*wi - qp) / lam;
        if e > cap {
            clamped += 1;
        }
        *wi = e.min(cap).exp();
    }
    Ok((w, clamped))
}

/// Advantage weights with a fresh single-sample value baseline.
pub fn advantage_weights<T: Real, D: ActionDecoder<T> + ?Sized>(
    batch: &Batch<T>,
    decoder: &D,
    policy: &LatentPolicy<T>,
    critics: &TwinCritic<T>,
    lambda: f64,
    eta: &Tensor<T>,
) -> Result<(Tensor<T>, usize)> {
    let a_pi = decoded_sample(policy, decoder, &batch.states, eta)?;
    advantage_weights_from(critics, &batch.states, &batch.actions, &a_pi, lambda)
}

/// Mean over batch and action dims of `ω · |a − â|`, with gradients
/// reaching the policy through the frozen decoder.
pub fn policy_loss_on<'t, T: Real, D: ActionDecoder<T> + ?Sized>(
    tape: &'t Tape<T>,
    policy: &LatentPolicy<T>,
    decoder: &D,
    states: &Tensor<T>,
    actions: &Tensor<T>,
    weights: &Tensor<T>,
    eta: &Tensor<T>,
) -> Result<Var<'t, T>> {
    let a_hat = decoded_sample_on(tape, policy, decoder, tape.constant(states.clone()), eta)?;
    let cols = actions.cols();
    let tiled: Vec<T> = weights.data().iter().flat_map(|&w| std::iter::repeat_n(w, cols)).collect();
    let w = tape.constant(Tensor::new(&[weights.rows(), cols], tiled)?);
    Ok(tape.constant(actions.clone()).sub(a_hat)?.abs().mul(w)?.mean())
}

/// Trained latent policy with its critics.
#[derive(Clone, Debug)]
pub struct Agent<T> {
    pub variant: Variant,
    pub policy: LatentPolicy<T>,
    pub critics: TwinCritic<T>,
    pub config: AwacConfig,
    pub steps: u64,
}

impl<T: Real> Agent<T> {
    /// Fresh agent; `action_dim` is the critic's action input width.
    pub fn new(variant: Variant, state_dim: usize, latent_dim: usize, action_dim: usize, config: AwacConfig) -> Self {
        let mut prng = derived(config.seed, 10);
        let mut crng = derived(config.seed, 11);
        let policy = LatentPolicy::new(
            state_dim,
            latent_dim,
            &config.hidden,
            config.activation,
            variant.squash(),
            &mut prng,
        );
        let critics = TwinCritic::new(state_dim, action_dim, &config.hidden, config.activation, &mut crng);
        Self {
            variant,
            policy,
            critics,
            config,
            steps: 0,
        }
    }

    /// Environment actions for a batch of states.
    pub fn act<D: ActionDecoder<T> + ?Sized>(
        &self,
        decoder: &D,
        states: &Tensor<T>,
        rng: &mut SeededRng,
        deterministic: bool,
    ) -> Result<Tensor<T>> {
        let z = if deterministic {
            self.policy.mean(states)?
        } else {
            self.policy.sample(states, rng)?
        };
        decoder.decode(&z, states)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Losses {
    pub critic: f64,
    pub policy: f64,
    pub mean_weight: f64,
    pub clamped_weights: usize,
}

/// One line of the JSON-lines metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: u64,
    pub event: String,
    pub losses: Option<Losses>,
    pub mean_return: Option<f64>,
    pub support_violation_rate: Option<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct Metrics {
    pub records: Vec<MetricRecord>,
}

impl Metrics {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("metric record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn evals(&self) -> impl Iterator<Item = &MetricRecord> {
        self.records.iter().filter(|r| r.event == "eval")
    }

    /// Mean return of the last evaluation.
    pub fn final_return(&self) -> Option<f64> {
        self.evals().last().and_then(|r| r.mean_return)
    }

    /// Average of all evaluation returns.
    pub fn average_return(&self) -> Option<f64> {
        let v: Vec<f64> = self.evals().filter_map(|r| r.mean_return).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    /// Agent after the last completed step; on divergence, the state before
    /// the failing step.
    pub agent: Agent<T>,
    pub metrics: Metrics,
    pub diverged: Option<String>,
}

/// Evaluation summary over deterministic rollouts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub episodes: usize,
    pub mean_return: f64,
    pub std_return: f64,
    pub support_violation_rate: Option<f64>,
}

pub fn evaluate<T: Real, D: ActionDecoder<T> + ?Sized>(
    agent: &Agent<T>,
    decoder: &D,
    env_spec: &EnvSpec,
    episodes: usize,
    seed: u64,
) -> Result<Evaluation> {
    let env = env_spec.build();
    let mut rng = derived(seed, 0);
    let mut act_rng = derived(seed, 1);
    let r = rollout(&env, episodes, &mut rng, |s, _| {
        let st = Tensor::new(&[1, s.len()], s.iter().map(|&v| T::lit(v)).collect())?;
        Ok(agent.act(decoder, &st, &mut act_rng, true)?.to_f64_vec())
    })?;
    let svr = env_spec
        .support()
        .map(|spec| support_violation_rate(&r.actions, decoder.action_dim(), &spec));
    Ok(Evaluation {
        episodes,
        mean_return: r.mean_return(),
        std_return: r.std_return(),
        support_violation_rate: svr,
    })
}

struct Trainer<'a, T: Real, D: ?Sized, E: ?Sized> {
    cfg: &'a AwacConfig,
    data: &'a Batch<T>,
    train_decoder: &'a D,
    eval_decoder: &'a E,
    env: &'a EnvSpec,
}

impl<T: Real, D: ActionDecoder<T> + ?Sized, E: ActionDecoder<T> + ?Sized> Trainer<'_, T, D, E> {
    fn eval_record(&self, agent: &Agent<T>) -> Result<MetricRecord> {
        let ev = evaluate(agent, self.eval_decoder, self.env, self.cfg.eval_episodes, self.cfg.eval_seed)?;
        Ok(MetricRecord {
            step: agent.steps,
            event: "eval".into(),
            losses: None,
            mean_return: Some(ev.mean_return),
            support_violation_rate: ev.support_violation_rate,
        })
    }

    fn step(
        &self,
        agent: &mut Agent<T>,
        target: &mut Option<TwinCritic<T>>,
        critic_opt: &mut Adam<T>,
        actor_opt: &mut Adam<T>,
        batch_rng: &mut SeededRng,
        noise_rng: &mut SeededRng,
    ) -> Result<Losses> {
        let cfg = self.cfg;
        let b = self.data.sample(batch_rng, cfg.batch_size);
        let m = b.len();

        let eta = agent.policy.noise(noise_rng, m);
        let y = critic_target(
            &b,
            self.train_decoder,
            &agent.policy,
            target.as_ref().unwrap_or(&agent.critics),
            cfg.gamma,
            &eta,
        )?;
        let tape = Tape::new();
        let closs = critic_loss_on(&tape, &agent.critics, &b.states, &b.actions, &y)?;
        let critic_value = closs.item().as_f64();
        if !critic_value.is_finite() {
            return Err(Error::Diverged(format!("critic loss {critic_value}")));
        }
        tape.backward(closs)?.accumulate(agent.critics.parameters_mut());
        critic_opt.step(agent.critics.parameters_mut());
        if let (Some(t), TargetMode::Polyak { tau }) = (target.as_mut(), cfg.target) {
            t.polyak_from(&agent.critics, T::lit(tau));
        }

        let eta = agent.policy.noise(noise_rng, m);
        let (w, clamped) = advantage_weights(&b, self.train_decoder, &agent.policy, &agent.critics, cfg.lambda, &eta)?;
        if clamped > 0 {
            log::debug!("step {}: {clamped} advantage exponents clamped at {MAX_EXPONENT}", agent.steps);
        }
        let eta = agent.policy.noise(noise_rng, m);
        let tape = Tape::new();
        let ploss = policy_loss_on(&tape, &agent.policy, self.train_decoder, &b.states, &b.actions, &w, &eta)?;
        let policy_value = ploss.item().as_f64();
        if !policy_value.is_finite() {
            return Err(Error::Diverged(format!("policy loss {policy_value}")));
        }
        tape.backward(ploss)?.accumulate(agent.policy.parameters_mut());
        actor_opt.step(agent.policy.parameters_mut());

        Ok(Losses {
            critic: critic_value,
            policy: policy_value,
            mean_weight: w.sum().as_f64() / m as f64,
            clamped_weights: clamped,
        })
    }

    fn run(&self, mut agent: Agent<T>) -> Result<TrainOutcome<T>> {
        let cfg = self.cfg;
        cfg.validate()?;
        if self.data.is_empty() {
            return Err(Error::Config("empty training batch".into()));
        }
        let mut batch_rng = derived(cfg.seed, 1);
        let mut noise_rng = derived(cfg.seed, 2);
        let mut critic_opt = Adam::new(T::lit(cfg.critic_lr));
        let mut actor_opt = Adam::new(T::lit(cfg.actor_lr));
        let mut target = match cfg.target {
            TargetMode::Off => None,
            TargetMode::Polyak { .. } => Some(agent.critics.detached_copy()),
        };
        let mut metrics = Metrics::default();
        metrics.records.push(self.eval_record(&agent)?);
        let mut window = Vec::new();
        for _ in 0..cfg.steps {
            let snapshot = agent.clone();
            match self.step(
                &mut agent,
                &mut target,
                &mut critic_opt,
                &mut actor_opt,
                &mut batch_rng,
                &mut noise_rng,
            ) {
                Ok(l) => window.push(l),
                Err(Error::Diverged(msg)) => {
                    log::error!("training diverged at step {}: {msg}", snapshot.steps);
                    return Ok(TrainOutcome {
                        agent: snapshot,
                        metrics,
                        diverged: Some(msg),
                    });
                }
                Err(e) => return Err(e),
            }
            agent.steps += 1;
            let step = agent.steps as usize;
            if step % cfg.log_interval == 0 {
                let n = window.len() as f64;
                let losses = Losses {
                    critic: window.iter().map(|l| l.critic).sum::<f64>() / n,
                    policy: window.iter().map(|l| l.policy).sum::<f64>() / n,
                    mean_weight: window.iter().map(|l| l.mean_weight).sum::<f64>() / n,
                    clamped_weights: window.iter().map(|l| l.clamped_weights).sum(),
                };
                window.clear();
                metrics.records.push(MetricRecord {
                    step: agent.steps,
                    event: "train".into(),
                    losses: Some(losses),
                    mean_return: None,
                    support_violation_rate: None,
                });
            }
            if step % cfg.eval_interval == 0 || step == cfg.steps {
                let rec = self.eval_record(&agent)?;
                log::info!("step {step}: mean return {:.4}", rec.mean_return.unwrap_or(f64::NAN));
                metrics.records.push(rec);
            }
        }
        Ok(TrainOutcome {
            agent,
            metrics,
            diverged: None,
        })
    }
}

fn check_dims<T: Real>(data: &Batch<T>, action_dim: usize, env: &EnvSpec) -> Result<()> {
    let built = env.build();
    use crate::envs::Env;
    if data.states.cols() != built.state_dim() || action_dim != built.action_dim() {
        return Err(Error::Config(format!(
            "dataset dims (state {}, action {}) do not match env (state {}, action {})",
            data.states.cols(),
            action_dim,
            built.state_dim(),
            built.action_dim()
        )));
    }
    Ok(())
}

/// AWAC with a frozen latent decoder: the policy acts in latent space, the
/// critics and the weighted L1 loss act on decoded actions.
pub fn train<T: Real, D: ActionDecoder<T> + ?Sized>(
    data: &Batch<T>,
    decoder: &D,
    variant: Variant,
    env: &EnvSpec,
    config: &AwacConfig,
) -> Result<TrainOutcome<T>> {
    check_dims(data, decoder.action_dim(), env)?;
    if data.actions.cols() != decoder.action_dim() {
        return Err(Error::Config("dataset action width differs from the decoder's".into()));
    }
    let agent = Agent::new(
        variant,
        data.states.cols(),
        decoder.latent_dim(),
        decoder.action_dim(),
        config.clone(),
    );
    Trainer {
        cfg: config,
        data,
        train_decoder: decoder,
        eval_decoder: decoder,
        env,
    }
    .run(agent)
}

/// AWAC run entirely in the encoder's latent space: dataset actions are
/// replaced by their encodings, and the encoder is used only to decode
/// actions at evaluation time.
pub fn train_latent_direct<T: Real, C: ActionCodec<T> + ?Sized>(
    data: &Batch<T>,
    codec: &C,
    env: &EnvSpec,
    config: &AwacConfig,
) -> Result<TrainOutcome<T>> {
    check_dims(data, codec.action_dim(), env)?;
    let latent = Batch {
        actions: codec.encode(&data.actions, &data.states)?,
        ..data.clone()
    };
    let dim = codec.latent_dim();
    let agent = Agent::new(Variant::LatentDirect, data.states.cols(), dim, dim, config.clone());
    Trainer {
        cfg: config,
        data: &latent,
        train_decoder: &IdentityDecoder { dim },
        eval_decoder: codec,
        env,
    }
    .run(agent)
}
