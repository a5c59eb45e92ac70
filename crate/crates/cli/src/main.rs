use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cnf_cli::ablate::{ablate, AblateArgs, Suite};
use cnf_cli::commands::{eval, gen_data, pretrain_flow, train_rl, EvalArgs, GenDataArgs, PretrainArgs, TrainArgs};
use cnf_cli::study::{toy_moons, ToyMoonsArgs};
use cnf_cli::CliResult;
use cnf_core::envs::Tier;
use cnf_core::flow::EncoderKind;

#[derive(Parser)]
#[command(name = "cnf", version, about = "Offline RL with conservative normalizing flows")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Roll out a behavior policy and write a CNFD dataset.
    GenData {
        #[arg(long, default_value = "point-nav")]
        env: String,
        #[arg(long, default_value = "medium")]
        tier: Tier,
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Pre-train an action encoder with random hyperparameter search.
    PretrainFlow {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        trials: usize,
        /// Encoder family; defaults to the config's `flow.train.kind`.
        #[arg(long, value_parser = parse_kind)]
        kind: Option<EncoderKind>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Train a latent policy over a frozen encoder.
    TrainRl {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        flow: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "cnf")]
        variant: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Evaluate an agent checkpoint and print a JSON summary.
    Eval {
        #[arg(long)]
        agent: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Encoder checkpoint, if it moved since training.
        #[arg(long)]
        flow: Option<PathBuf>,
        /// Environment, for checkpoints that do not record one.
        #[arg(long)]
        env: Option<String>,
    },
    /// Run the two-moons density study and draw its figures.
    ToyMoons {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Train every variant of an ablation suite over several seeds.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        suite: Suite,
        #[arg(long, default_value_t = 3)]
        seeds: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
}

fn parse_kind(s: &str) -> Result<EncoderKind, String> {
    match s {
        "cnf" => Ok(EncoderKind::Cnf),
        "nf-normal" => Ok(EncoderKind::NfNormal),
        "vae" => Ok(EncoderKind::Vae),
        other => Err(format!("unknown encoder kind `{other}` (valid: cnf, nf-normal, vae)")),
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::GenData {
            env,
            tier,
            n,
            seed,
            out,
            config,
            force,
        } => {
            let path = gen_data(&GenDataArgs {
                env,
                tier,
                n,
                seed,
                out,
                config,
                force,
            })?;
            log::info!("wrote {}", path.display());
        }
        Command::PretrainFlow {
            data,
            config,
            trials,
            kind,
            out,
            force,
        } => {
            let s = pretrain_flow(&PretrainArgs {
                data,
                config,
                trials,
                kind,
                out,
                force,
            })?;
            log::info!("best trial {} of {}", s.best_index, s.trials.len());
        }
        Command::TrainRl {
            data,
            flow,
            config,
            variant,
            out,
            force,
        } => {
            let o = train_rl(&TrainArgs {
                data,
                flow,
                config,
                variant,
                out,
                force,
            })?;
            log::info!("final return {:?}", o.metrics.final_return());
        }
        Command::Eval {
            agent,
            episodes,
            seed,
            flow,
            env,
        } => {
            let e = eval(&EvalArgs {
                agent,
                episodes,
                seed,
                flow,
                env,
            })?;
            println!("{}", serde_json::to_string(&e).expect("evaluation serializes"));
        }
        Command::ToyMoons { config, out, force } => {
            toy_moons(&ToyMoonsArgs { config, out, force })?;
        }
        Command::Ablate {
            data,
            suite,
            seeds,
            out,
            config,
            force,
        } => {
            ablate(&AblateArgs {
                data,
                suite,
                seeds,
                out,
                config,
                force,
            })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // clap exits with 2 on bad flags on its own.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
