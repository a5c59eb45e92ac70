//! The two-moons study: both base distributions per seed, normalization
//! check, base-sample and amplitude-sweep OOD fractions, and figures.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use cnf_core::flow::{BaseKind, FlowTrainConfig};
use cnf_core::io::atomic_write;
use cnf_core::moons::{
    base_sample_ood, density_grid, emit_figures, fit_toy_flow, make_moons, run_sweep, sweep_csv, FigureSet,
    MoonsConfig, SweepRow,
};

use crate::commands::{check_fresh, with_manifest};
use crate::config::{ExperimentConfig, MoonsSection};
use crate::error::CliResult;
use crate::manifest::RunManifest;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub base: String,
    pub train_nll: f64,
    pub val_nll: f64,
    /// Grid integral of the learned density over the unit box.
    pub mass: f64,
    /// OOD fraction of samples from the flow's own base distribution.
    pub base_ood: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub uniform: FitReport,
    pub normal: FitReport,
    pub sweep: Vec<SweepRow>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MoonsReport {
    pub seeds: Vec<SeedReport>,
}

impl MoonsReport {
    pub fn normalization_csv(&self) -> String {
        let mut s = String::from("seed,base,train_nll,val_nll,mass,base_ood\n");
        for r in &self.seeds {
            for f in [&r.uniform, &r.normal] {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{}",
                    r.seed, f.base, f.train_nll, f.val_nll, f.mass, f.base_ood
                );
            }
        }
        s
    }

    pub fn sweep_rows(&self) -> Vec<SweepRow> {
        self.seeds.iter().flat_map(|r| r.sweep.iter().cloned()).collect()
    }
}

/// Wall-clock seconds per fit, kept out of the report so reruns compare
/// byte-for-byte.
pub type FitTimings = Vec<(u64, String, f64)>;

/// Runs every seed; panels are drawn for the first seed when `figures_dir`
/// is given.
pub fn run_moons_study(section: &MoonsSection, figures_dir: Option<&Path>) -> CliResult<(MoonsReport, FitTimings, Vec<PathBuf>)> {
    let mut report = MoonsReport::default();
    let mut timings = Vec::new();
    let mut panels = Vec::new();
    for (i, &seed) in section.seeds.iter().enumerate() {
        let moons = make_moons(&MoonsConfig {
            seed,
            ..section.data.clone()
        })?;
        let points = moons.tensor();
        let noise = section.data.noise;
        let flow_cfg = FlowTrainConfig {
            seed,
            ..section.flow.clone()
        };
        let mut fits = Vec::new();
        for base in [BaseKind::Uniform, BaseKind::Normal] {
            let t = Instant::now();
            let fit = fit_toy_flow(&points, base, &flow_cfg)?;
            let name = match base {
                BaseKind::Uniform => "uniform",
                BaseKind::Normal => "normal",
            };
            timings.push((seed, name.to_string(), t.elapsed().as_secs_f64()));
            log::info!("moons seed {seed} {name}: val nll {:.4}", fit.val_nll);
            let grid = density_grid(&fit.flow, section.mass_resolution)?;
            let (ood, samples) = base_sample_ood(&fit.flow, &moons, noise, section.sweep.k, section.base_samples, seed)?;
            fits.push((
                FitReport {
                    base: name.into(),
                    train_nll: fit.train_nll,
                    val_nll: fit.val_nll,
                    mass: grid.mass(),
                    base_ood: ood,
                },
                fit.flow,
                samples,
            ));
        }
        let (sweep, sweep_samples) = run_sweep(&fits[1].1, &moons, noise, &section.sweep, seed)?;
        if let (0, Some(dir)) = (i, figures_dir) {
            let nd = density_grid(&fits[1].1, section.figure_resolution)?;
            let ud = density_grid(&fits[0].1, section.figure_resolution)?;
            panels = emit_figures(
                &FigureSet {
                    normal_density: &nd,
                    uniform_density: &ud,
                    normal_samples: &fits[1].2,
                    uniform_samples: &fits[0].2,
                    sweep: &sweep_samples,
                },
                dir,
            )?;
        }
        let mut it = fits.into_iter().map(|f| f.0);
        let uniform = it.next().expect("two fits");
        let normal = it.next().expect("two fits");
        report.seeds.push(SeedReport {
            seed,
            uniform,
            normal,
            sweep,
        });
    }
    Ok((report, timings, panels))
}

#[derive(Clone, Debug)]
pub struct ToyMoonsArgs {
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub force: bool,
}

pub fn toy_moons(a: &ToyMoonsArgs) -> CliResult<MoonsReport> {
    let cfg = ExperimentConfig::load(a.config.as_deref())?;
    let out = cfg.output_path(&a.out);
    let report_path = out.join("report.json");
    check_fresh(&report_path, a.force)?;
    std::fs::create_dir_all(&out)?;
    let seed = cfg.moons.seeds[0];
    let mut m = RunManifest::begin("toy-moons", &out.join("manifest.json"), &cfg, seed)?;
    m.arg("seeds", format!("{:?}", cfg.moons.seeds));
    with_manifest(m, |m| {
        let (report, timings, panels) = run_moons_study(&cfg.moons, Some(&out))?;
        let sweep = out.join("sweep.csv");
        atomic_write(&sweep, sweep_csv(&report.sweep_rows()).as_bytes())?;
        let norm = out.join("normalization.csv");
        atomic_write(&norm, report.normalization_csv().as_bytes())?;
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        atomic_write(&report_path, json.as_bytes())?;
        for p in panels.iter().chain([&sweep, &norm, &report_path]) {
            m.output(p)?;
        }
        m.extra = serde_json::json!({ "fit_seconds": timings });
        Ok(report)
    })
}
