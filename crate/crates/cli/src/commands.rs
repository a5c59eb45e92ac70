use std::path::{Path, PathBuf};

use serde::Serialize;

use cnf_core::envs::{generate_dataset, load_dataset, save_dataset, EnvSpec, OfflineDataset, Tier};
use cnf_core::flow::{hyperparameter_search, run_trials, ActionEncoder, EncoderKind, TrialParams};
use cnf_core::io::{atomic_write, sha256_file};
use cnf_core::rl::{evaluate, train, train_latent_direct, AgentCheckpoint, Batch, Evaluation, Metrics, TrainOutcome, Variant};
use cnf_core::rng::derived;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::{manifest_path, sibling, RunManifest};
use crate::svg::{line_chart, Series};

/// Refuses to replace an existing output unless `force` is set.
pub fn check_fresh(path: &Path, force: bool) -> CliResult<()> {
    if path.exists() && !force {
        return Err(CliError::Usage(format!(
            "{} already exists; outputs are write-once (pass --force to replace)",
            path.display()
        )));
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    Ok(())
}

/// Runs `body` under a manifest, marking it failed on error.
pub fn with_manifest<T>(mut m: RunManifest, body: impl FnOnce(&mut RunManifest) -> CliResult<T>) -> CliResult<T> {
    match body(&mut m) {
        Ok(v) => {
            m.finish()?;
            Ok(v)
        }
        Err(e) => {
            m.fail(&e.to_string())?;
            Err(e)
        }
    }
}

fn read_dataset(path: &Path) -> CliResult<OfflineDataset> {
    if !path.exists() {
        return Err(CliError::Runtime(format!("dataset {} not found", path.display())));
    }
    load_dataset(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn read_encoder(path: &Path) -> CliResult<ActionEncoder<f64>> {
    if !path.exists() {
        return Err(CliError::Runtime(format!("encoder checkpoint {} not found", path.display())));
    }
    ActionEncoder::load(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

#[derive(Clone, Debug)]
pub struct GenDataArgs {
    pub env: String,
    pub tier: Tier,
    pub n: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub config: Option<PathBuf>,
    pub force: bool,
}

pub fn gen_data(a: &GenDataArgs) -> CliResult<PathBuf> {
    let mut cfg = ExperimentConfig::load(a.config.as_deref())?;
    let spec = EnvSpec::from_name(&a.env).map_err(|e| CliError::Usage(e.to_string()))?;
    if a.n == 0 {
        return Err(CliError::Usage("--n must be positive".into()));
    }
    cfg.env.name = a.env.clone();
    cfg.env.tier = a.tier;
    cfg.dataset.n = a.n;
    cfg.dataset.seed = a.seed;
    let out = cfg.output_path(&a.out);
    check_fresh(&out, a.force)?;
    let mut m = RunManifest::begin("gen-data", &manifest_path(&out), &cfg, a.seed)?;
    m.arg("env", &a.env);
    m.arg("tier", a.tier);
    m.arg("n", a.n);
    with_manifest(m, |m| {
        let ds = generate_dataset(&spec.build(), &spec.behavior(a.tier), a.n, a.seed)?;
        save_dataset(&ds, &out)?;
        m.output(&out)?;
        Ok(out.clone())
    })
}

#[derive(Clone, Debug)]
pub struct PretrainArgs {
    pub data: PathBuf,
    pub config: Option<PathBuf>,
    pub trials: usize,
    pub kind: Option<EncoderKind>,
    pub out: PathBuf,
    pub force: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct PretrainSummary {
    pub best_index: usize,
    pub ranking: Vec<usize>,
    pub trials: Vec<cnf_core::flow::TrialResult>,
}

pub fn pretrain_flow(a: &PretrainArgs) -> CliResult<PretrainSummary> {
    let mut cfg = ExperimentConfig::load(a.config.as_deref())?;
    if a.trials == 0 {
        return Err(CliError::Usage("--trials must be at least 1".into()));
    }
    if let Some(k) = a.kind {
        cfg.flow.train.kind = k;
    }
    let out = cfg.output_path(&a.out);
    check_fresh(&out, a.force)?;
    let ds = read_dataset(&a.data)?;
    let mut m = RunManifest::begin("pretrain-flow", &manifest_path(&out), &cfg, cfg.flow.train.seed)?;
    m.arg("trials", a.trials);
    m.arg("kind", cfg.flow.train.kind);
    with_manifest(m, |m| {
        m.input(&a.data)?;
        let data = ds.action_data::<f64>()?;
        let base = &cfg.flow.train;
        // A single trial uses the configured settings rather than a random draw.
        let search = if a.trials == 1 {
            run_trials(
                &data,
                base,
                &[TrialParams {
                    learning_rate: base.learning_rate,
                    weight_decay: base.weight_decay,
                    batch_size: base.batch_size,
                }],
            )?
        } else {
            let mut rng = derived(cfg.flow.search_seed, 0);
            hyperparameter_search(&data, base, &cfg.flow.search, a.trials, &mut rng)?
        };
        search.best.save(&out)?;
        m.output(&out)?;
        for t in &search.trials {
            let p = sibling(&out, &format!("trial-{}.csv", t.index));
            atomic_write(&p, t.log.to_csv().as_bytes())?;
            m.output(&p)?;
        }
        let summary = PretrainSummary {
            best_index: search.best_index,
            ranking: search.ranking,
            trials: search.trials,
        };
        m.extra = serde_json::to_value(&summary).expect("summary serializes");
        Ok(summary)
    })
}

#[derive(Clone, Debug)]
pub struct TrainArgs {
    pub data: PathBuf,
    pub flow: PathBuf,
    pub config: Option<PathBuf>,
    pub variant: String,
    pub out: PathBuf,
    pub force: bool,
}

/// Checks that an encoder checkpoint suits a variant.
pub fn check_variant(variant: Variant, encoder: &ActionEncoder<f64>) -> CliResult<()> {
    let need = variant.encoder_kind();
    if encoder.kind() != need {
        return Err(CliError::Usage(format!(
            "variant {} needs a {need} encoder checkpoint, got {}",
            variant.name(),
            encoder.kind()
        )));
    }
    Ok(())
}

/// Trains one agent, dispatching on the variant.
pub fn run_variant(
    data: &Batch<f64>,
    encoder: &ActionEncoder<f64>,
    variant: Variant,
    env: &EnvSpec,
    cfg: &cnf_core::rl::AwacConfig,
) -> CliResult<TrainOutcome<f64>> {
    check_variant(variant, encoder)?;
    Ok(match variant {
        Variant::LatentDirect => train_latent_direct(data, encoder, env, cfg)?,
        v => train(data, encoder, v, env, cfg)?,
    })
}

pub fn learning_curve_svg(title: &str, metrics: &Metrics) -> String {
    let points = metrics
        .evals()
        .filter_map(|r| r.mean_return.map(|v| (r.step as f64, v)))
        .collect();
    line_chart(
        title,
        "training step",
        "mean return",
        &[Series {
            name: "eval".into(),
            points,
        }],
    )
}

/// Writes `<out>`, `<out>.metrics.jsonl` and `<out>.curve.svg`.
pub fn save_agent_outputs(
    out: &Path,
    outcome: &TrainOutcome<f64>,
    encoder_path: &Path,
    env: &EnvSpec,
    m: Option<&mut RunManifest>,
) -> CliResult<()> {
    let ck = AgentCheckpoint {
        agent: outcome.agent.clone(),
        encoder_path: encoder_path.display().to_string(),
        encoder_sha256: sha256_file(encoder_path)?,
        env: Some(env.clone()),
    };
    ck.save(out)?;
    let metrics = sibling(out, "metrics.jsonl");
    atomic_write(&metrics, outcome.metrics.to_jsonl().as_bytes())?;
    let curve = sibling(out, "curve.svg");
    let title = format!("{} learning curve", outcome.agent.variant.name());
    atomic_write(&curve, learning_curve_svg(&title, &outcome.metrics).as_bytes())?;
    if let Some(m) = m {
        for p in [out, &metrics, &curve] {
            m.output(p)?;
        }
    }
    Ok(())
}

pub fn train_rl(a: &TrainArgs) -> CliResult<TrainOutcome<f64>> {
    let cfg = ExperimentConfig::load(a.config.as_deref())?;
    let variant = Variant::parse(&a.variant).map_err(|e| CliError::Usage(e.to_string()))?;
    let out = cfg.output_path(&a.out);
    check_fresh(&out, a.force)?;
    let ds = read_dataset(&a.data)?;
    let encoder = read_encoder(&a.flow)?;
    check_variant(variant, &encoder)?;
    let env = cfg.env.spec()?;
    let mut m = RunManifest::begin("train-rl", &manifest_path(&out), &cfg, cfg.rl.seed)?;
    m.arg("variant", variant.name());
    with_manifest(m, |m| {
        m.input(&a.data)?;
        m.input(&a.flow)?;
        let outcome = run_variant(&Batch::from_dataset(&ds), &encoder, variant, &env, &cfg.rl)?;
        save_agent_outputs(&out, &outcome, &a.flow, &env, Some(m))?;
        if let Some(msg) = &outcome.diverged {
            return Err(CliError::Runtime(format!(
                "training diverged at step {} ({msg}); last good checkpoint kept at {}",
                outcome.agent.steps,
                out.display()
            )));
        }
        Ok(outcome)
    })
}

#[derive(Clone, Debug)]
pub struct EvalArgs {
    pub agent: PathBuf,
    pub episodes: usize,
    pub seed: u64,
    pub flow: Option<PathBuf>,
    pub env: Option<String>,
}

/// Encoder path recorded in an agent checkpoint, tried as given and then
/// relative to the agent's directory.
fn locate_encoder(agent_path: &Path, recorded: &str) -> PathBuf {
    let p = PathBuf::from(recorded);
    if p.exists() || p.is_absolute() {
        return p;
    }
    agent_path.parent().map(|d| d.join(&p)).unwrap_or(p)
}

pub fn eval(a: &EvalArgs) -> CliResult<Evaluation> {
    if a.episodes == 0 {
        return Err(CliError::Usage("--episodes must be positive".into()));
    }
    if !a.agent.exists() {
        return Err(CliError::Runtime(format!("agent checkpoint {} not found", a.agent.display())));
    }
    let ck = AgentCheckpoint::<f64>::load(&a.agent)?;
    let enc_path = a.flow.clone().unwrap_or_else(|| locate_encoder(&a.agent, &ck.encoder_path));
    if !enc_path.exists() {
        return Err(CliError::Runtime(format!("encoder checkpoint {} not found", enc_path.display())));
    }
    ck.verify_encoder(&std::fs::read(&enc_path)?)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let encoder = read_encoder(&enc_path)?;
    let env = match (&a.env, &ck.env) {
        (Some(name), _) => EnvSpec::from_name(name).map_err(|e| CliError::Usage(e.to_string()))?,
        (None, Some(spec)) => spec.clone(),
        (None, None) => return Err(CliError::Usage("agent checkpoint records no environment; pass --env".into())),
    };
    Ok(evaluate(&ck.agent, &encoder, &env, a.episodes, a.seed)?)
}
