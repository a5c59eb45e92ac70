use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use cnf_core::envs::{EnvSpec, OfflineDataset};
use cnf_core::flow::{pretrain, ActionEncoder, EncoderKind, FlowTrainConfig};
use cnf_core::io::atomic_write;
use cnf_core::rl::{AwacConfig, Batch, Variant};

use crate::commands::{check_fresh, run_variant, save_agent_outputs, with_manifest};
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;
use crate::svg::{grouped_bar_chart, BarGroup};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    /// Bounded uniform latent vs unbounded normal latent.
    LatentKind,
    /// Normal latent clipped at amplitudes 1, 2, 3 vs the uniform latent.
    Clipping,
    /// Flow encoder vs VAE encoder.
    Encoder,
    /// Policy trained through the decoder vs directly on encoded actions.
    LatentDirect,
}

impl Suite {
    pub const NAMES: [&'static str; 4] = ["latent-kind", "clipping", "encoder", "latent-direct"];

    pub fn variants(&self) -> Vec<Variant> {
        match self {
            Suite::LatentKind => vec![Variant::Cnf, Variant::NfNormal],
            Suite::Clipping => vec![
                Variant::NfClipped(1.0),
                Variant::NfClipped(2.0),
                Variant::NfClipped(3.0),
                Variant::Cnf,
            ],
            Suite::Encoder => vec![Variant::Cnf, Variant::Vae],
            Suite::LatentDirect => vec![Variant::Cnf, Variant::LatentDirect],
        }
    }
}

impl std::str::FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "latent-kind" => Ok(Suite::LatentKind),
            "clipping" => Ok(Suite::Clipping),
            "encoder" => Ok(Suite::Encoder),
            "latent-direct" => Ok(Suite::LatentDirect),
            other => Err(format!("unknown suite `{other}` (expected {})", Suite::NAMES.join(", "))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub variant: String,
    pub seed: u64,
    pub final_return: Option<f64>,
    pub average_return: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub cells: Vec<Cell>,
}

impl AblationReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,seed,final_return,average_return,error\n");
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for c in &self.cells {
            let err = c.error.as_deref().unwrap_or("").replace(['\n', ','], " ");
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                c.variant,
                c.seed,
                fmt(c.final_return),
                fmt(c.average_return),
                err
            );
        }
        s
    }

    /// Final returns of successful cells, per variant, in seed order.
    pub fn finals(&self) -> BTreeMap<String, Vec<f64>> {
        let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for c in &self.cells {
            if let Some(r) = c.final_return {
                out.entry(c.variant.clone()).or_default().push(r);
            }
        }
        out
    }

    pub fn mean_final(&self, variant: &str) -> Option<f64> {
        let f = self.finals();
        let v = f.get(variant)?;
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn bar_chart(&self, title: &str, order: &[String]) -> String {
        let finals = self.finals();
        let groups: Vec<BarGroup> = order
            .iter()
            .map(|name| {
                let v = finals.get(name).cloned().unwrap_or_default();
                let n = v.len().max(1) as f64;
                let mean = v.iter().sum::<f64>() / n;
                let sd = if v.len() > 1 {
                    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
                } else {
                    0.0
                };
                BarGroup {
                    label: name.clone(),
                    bars: vec![(name.clone(), mean, sd)],
                }
            })
            .collect();
        grouped_bar_chart(title, "final mean return", &groups)
    }
}

fn file_stem(v: &Variant) -> String {
    v.name().replace(':', "-")
}

/// Pre-trained encoders keyed by kind, so one pre-training run serves every
/// variant and seed that needs it.
pub fn encoders_for(
    variants: &[Variant],
    data: &OfflineDataset,
    flow: &FlowTrainConfig,
) -> CliResult<BTreeMap<&'static str, ActionEncoder<f64>>> {
    let actions = data.action_data::<f64>()?;
    let mut out = BTreeMap::new();
    for v in variants {
        let kind: EncoderKind = v.encoder_kind();
        if out.contains_key(kind.name()) {
            continue;
        }
        let cfg = FlowTrainConfig {
            kind,
            ..flow.clone()
        };
        log::info!("pre-training {kind} encoder");
        out.insert(kind.name(), pretrain(&actions, &cfg)?.model);
    }
    Ok(out)
}

/// Runs `variants × seeds` training cells. Cell failures are recorded and
/// the matrix continues. When `out_dir` is given, encoders, agents and
/// metrics are written there.
pub fn run_matrix(
    data: &OfflineDataset,
    env: &EnvSpec,
    variants: &[Variant],
    seeds: usize,
    flow: &FlowTrainConfig,
    rl: &AwacConfig,
    out_dir: Option<&Path>,
) -> CliResult<AblationReport> {
    let encoders = encoders_for(variants, data, flow)?;
    let mut enc_paths = BTreeMap::new();
    if let Some(dir) = out_dir {
        for (name, enc) in &encoders {
            let p = dir.join(format!("encoder-{name}.cnfm"));
            enc.save(&p)?;
            enc_paths.insert(*name, p);
        }
    }
    let batch = Batch::from_dataset(data);
    let mut report = AblationReport::default();
    for v in variants {
        let encoder = &encoders[v.encoder_kind().name()];
        for i in 0..seeds {
            let seed = rl.seed + i as u64;
            let cfg = AwacConfig { seed, ..rl.clone() };
            log::info!("ablation cell {} seed {seed}", v.name());
            let cell = match run_variant(&batch, encoder, *v, env, &cfg) {
                Ok(outcome) => {
                    if let Some(dir) = out_dir {
                        let p = dir.join(format!("{}-seed{seed}.cnfa", file_stem(v)));
                        save_agent_outputs(&p, &outcome, &enc_paths[v.encoder_kind().name()], env, None)?;
                    }
                    Cell {
                        variant: v.name(),
                        seed,
                        final_return: outcome.metrics.final_return(),
                        average_return: outcome.metrics.average_return(),
                        error: outcome.diverged.map(|m| format!("diverged: {m}")),
                    }
                }
                Err(e) => {
                    log::error!("cell {} seed {seed} failed: {e}", v.name());
                    Cell {
                        variant: v.name(),
                        seed,
                        final_return: None,
                        average_return: None,
                        error: Some(e.to_string()),
                    }
                }
            };
            report.cells.push(cell);
        }
    }
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct AblateArgs {
    pub data: PathBuf,
    pub suite: Suite,
    pub seeds: usize,
    pub out: PathBuf,
    pub config: Option<PathBuf>,
    pub force: bool,
}

pub fn ablate(a: &AblateArgs) -> CliResult<AblationReport> {
    let cfg = ExperimentConfig::load(a.config.as_deref())?;
    if a.seeds == 0 {
        return Err(CliError::Usage("--seeds must be at least 1".into()));
    }
    let out = cfg.output_path(&a.out);
    let csv = out.join("ablation.csv");
    check_fresh(&csv, a.force)?;
    std::fs::create_dir_all(&out)?;
    if !a.data.exists() {
        return Err(CliError::Runtime(format!("dataset {} not found", a.data.display())));
    }
    let data = cnf_core::envs::load_dataset(&a.data)?;
    let env = cfg.env.spec()?;
    let mut m = RunManifest::begin("ablate", &out.join("manifest.json"), &cfg, cfg.rl.seed)?;
    m.arg("suite", Suite::NAMES[a.suite as usize]);
    m.arg("seeds", a.seeds);
    with_manifest(m, |m| {
        m.input(&a.data)?;
        let variants = a.suite.variants();
        let report = run_matrix(&data, &env, &variants, a.seeds, &cfg.flow.train, &cfg.rl, Some(&out))?;
        atomic_write(&csv, report.to_csv().as_bytes())?;
        let svg = out.join("ablation.svg");
        let order: Vec<String> = variants.iter().map(Variant::name).collect();
        let title = format!("{} ablation", Suite::NAMES[a.suite as usize]);
        atomic_write(&svg, report.bar_chart(&title, &order).as_bytes())?;
        m.output(&csv)?;
        m.output(&svg)?;
        m.extra = serde_json::to_value(&report).expect("report serializes");
        Ok(report)
    })
}
