//! Two-moons density study: unconditional flows with either base
//! distribution, density grids, amplitude-scaled latent sampling and an
//! out-of-distribution measure.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::flow::{
    fit, split_indices, ActionData, ActionEncoder, BaseKind, ConditionalFlow, EncoderKind, FlowTrainConfig, PretrainOutcome,
    TrainingLog,
};
use crate::io::atomic_write;
use crate::rng::{derived, seeded, SeededRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MoonsConfig {
    pub n: usize,
    /// Standard deviation of the isotropic Gaussian noise, before squeezing.
    pub noise: f64,
    pub seed: u64,
    /// Gap between the squeezed noise-free bounding box and the unit box.
    pub margin: f64,
}

impl Default for MoonsConfig {
    fn default() -> Self {
        Self {
            n: 10_000,
            noise: 0.05,
            seed: 0,
            margin: 0.1,
        }
    }
}

impl MoonsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Config(format!("moons needs n >= 2, got {}", self.n)));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::Config("moons noise must be non-negative".into()));
        }
        if !(self.margin > 0.0 && self.margin < 0.5) {
            return Err(Error::Config(format!("squeeze margin must lie in (0, 0.5), got {}", self.margin)));
        }
        Ok(())
    }
}

/// Affine map of the noise-free bounding box `[−1, 2] × [−0.5, 1]` onto
/// `[−1 + m, 1 − m]²`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Squeeze {
    scale: [f64; 2],
    offset: [f64; 2],
}

const BOX_LO: [f64; 2] = [-1.0, -0.5];
const BOX_HI: [f64; 2] = [2.0, 1.0];

impl Squeeze {
    pub fn new(margin: f64) -> Self {
        let mut scale = [0.0; 2];
        let mut offset = [0.0; 2];
        for k in 0..2 {
            scale[k] = (2.0 - 2.0 * margin) / (BOX_HI[k] - BOX_LO[k]);
            offset[k] = -1.0 + margin - scale[k] * BOX_LO[k];
        }
        Self { scale, offset }
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        [self.scale[0] * p[0] + self.offset[0], self.scale[1] * p[1] + self.offset[1]]
    }

    pub fn invert(&self, q: [f64; 2]) -> [f64; 2] {
        [(q[0] - self.offset[0]) / self.scale[0], (q[1] - self.offset[1]) / self.scale[1]]
    }
}

/// Point on moon `moon` at angle `t`, before noise and squeezing.
pub fn moon_point(moon: usize, t: f64) -> [f64; 2] {
    if moon == 0 {
        [t.cos(), t.sin()]
    } else {
        [1.0 - t.cos(), 0.5 - t.sin()]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Moons {
    /// Noisy points before squeezing.
    pub raw: Vec<[f64; 2]>,
    /// Squeezed points, inside (−1, 1)².
    pub points: Vec<[f64; 2]>,
    pub labels: Vec<usize>,
    pub squeeze: Squeeze,
}

impl Moons {
    pub fn tensor(&self) -> Tensor<f64> {
        let flat: Vec<f64> = self.points.iter().flatten().copied().collect();
        Tensor::new(&[self.points.len(), 2], flat).expect("n×2")
    }
}

/// Noise draws that would push a squeezed point outside (−1, 1)² are redrawn.
pub fn make_moons(cfg: &MoonsConfig) -> Result<Moons> {
    cfg.validate()?;
    let squeeze = Squeeze::new(cfg.margin);
    let mut rng = seeded(cfg.seed);
    let (mut raw, mut points, mut labels) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..cfg.n {
        let moon = usize::from(rng.random_bool(0.5));
        let t = rng.random_range(0.0..std::f64::consts::PI);
        let base = moon_point(moon, t);
        loop {
            let (ex, ey): (f64, f64) = if cfg.noise > 0.0 {
                (
                    cfg.noise * Distribution::<f64>::sample(&StandardNormal, &mut rng),
                    cfg.noise * Distribution::<f64>::sample(&StandardNormal, &mut rng),
                )
            } else {
                (0.0, 0.0)
            };
            let p = [base[0] + ex, base[1] + ey];
            let q = squeeze.apply(p);
            if q[0].abs() < 1.0 && q[1].abs() < 1.0 {
                raw.push(p);
                points.push(q);
                labels.push(moon);
                break;
            }
        }
    }
    Ok(Moons {
        raw,
        points,
        labels,
        squeeze,
    })
}

#[derive(Clone, Debug)]
pub struct ToyFit {
    pub flow: ConditionalFlow<f64>,
    pub log: TrainingLog,
    pub train_nll: f64,
    pub val_nll: f64,
}

/// Fits an unconditional arc-tanh-input flow to points inside (−1, 1)².
pub fn fit_toy_flow(points: &Tensor<f64>, base: BaseKind, cfg: &FlowTrainConfig) -> Result<ToyFit> {
    cfg.validate()?;
    if points.data().iter().any(|v| !(v.abs() < 1.0)) {
        return Err(Error::Domain {
            op: "fit_toy_flow",
            detail: "points must lie strictly inside (-1, 1)^2".into(),
        });
    }
    let kind = match base {
        BaseKind::Uniform => EncoderKind::Cnf,
        BaseKind::Normal => EncoderKind::NfNormal,
    };
    let cfg = FlowTrainConfig {
        kind,
        atanh_input: true,
        ..cfg.clone()
    };
    let data = ActionData::unconditional(points.clone())?;
    let ActionEncoder::Flow(flow) = cfg.build::<f64>(0, 2)? else {
        unreachable!("flow kinds build flows")
    };
    let PretrainOutcome { model: flow, log } = fit(flow, &data, &cfg)?;
    let (train_idx, val_idx) = split_indices(data.len(), cfg.validation_fraction, cfg.seed);
    let empty = Tensor::zeros(&[0, 0]);
    let train_nll = flow.nll(&points.select_rows(&train_idx), &empty)?;
    let val_nll = flow.nll(&points.select_rows(&val_idx), &empty)?;
    Ok(ToyFit {
        flow,
        log,
        train_nll,
        val_nll,
    })
}

/// Density values at the centers of a `resolution × resolution` grid on
/// (−1, 1)², row-major with row 0 at the bottom.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityGrid {
    pub resolution: usize,
    pub values: Vec<f64>,
}

impl DensityGrid {
    pub fn cell_area(&self) -> f64 {
        let h = 2.0 / self.resolution as f64;
        h * h
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_area()
    }

    pub fn center(resolution: usize, i: usize) -> f64 {
        -1.0 + (2.0 * i as f64 + 1.0) / resolution as f64
    }
}

pub fn density_grid(flow: &ConditionalFlow<f64>, resolution: usize) -> Result<DensityGrid> {
    if resolution < 50 {
        return Err(Error::Config(format!("density grid resolution must be at least 50, got {resolution}")));
    }
    if flow.state_dim() != 0 || flow.action_dim() != 2 {
        return Err(Error::Config("density grids need an unconditional 2-D flow".into()));
    }
    let mut values = Vec::with_capacity(resolution * resolution);
    let empty = Tensor::zeros(&[0, 0]);
    for r in 0..resolution {
        let y = DensityGrid::center(resolution, r);
        let row: Vec<f64> = (0..resolution)
            .flat_map(|c| [DensityGrid::center(resolution, c), y])
            .collect();
        let lp = flow.log_prob(&Tensor::new(&[resolution, 2], row)?, &empty)?;
        values.extend(lp.into_iter().map(f64::exp));
    }
    Ok(DensityGrid { resolution, values })
}

/// Decodes latents drawn from `amplitude · N(0, I)`.
pub fn amplitude_sample(flow: &ConditionalFlow<f64>, amplitude: f64, n: usize, rng: &mut SeededRng) -> Result<Tensor<f64>> {
    if flow.base() == BaseKind::Uniform {
        return Err(Error::Config(
            "amplitude sampling needs a normal-base flow: a uniform base already covers its whole bounded support, \
             so there is nothing to amplify"
                .into(),
        ));
    }
    if !(amplitude > 0.0) {
        return Err(Error::Config(format!("amplitude must be positive, got {amplitude}")));
    }
    let normal = Normal::new(0.0, amplitude).expect("positive amplitude");
    let z: Vec<f64> = (0..n * 2).map(|_| normal.sample(rng)).collect();
    flow.inverse(&Tensor::new(&[n, 2], z)?, &Tensor::zeros(&[0, 0]))
}

/// Fraction of `samples` whose nearest reference point is farther than
/// `threshold`.
pub fn ood_fraction(samples: &[[f64; 2]], reference: &[[f64; 2]], threshold: f64) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::Config("ood_fraction needs a non-empty reference set".into()));
    }
    if !(threshold > 0.0) {
        return Err(Error::Config(format!("ood threshold must be positive, got {threshold}")));
    }
    if samples.is_empty() {
        return Ok(0.0);
    }
    let cell = |p: &[f64; 2]| ((p[0] / threshold).floor() as i64, (p[1] / threshold).floor() as i64);
    let mut buckets: std::collections::HashMap<(i64, i64), Vec<[f64; 2]>> = std::collections::HashMap::new();
    for p in reference {
        buckets.entry(cell(p)).or_default().push(*p);
    }
    let t2 = threshold * threshold;
    let outside = samples
        .iter()
        .filter(|s| {
            let (cx, cy) = cell(s);
            !(-1..=1).any(|dx| {
                (-1..=1).any(|dy| {
                    buckets.get(&(cx + dx, cy + dy)).is_some_and(|pts| {
                        pts.iter()
                            .any(|p| (p[0] - s[0]).powi(2) + (p[1] - s[1]).powi(2) <= t2)
                    })
                })
            })
        })
        .count();
    Ok(outside as f64 / samples.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AmplitudeSweep {
    pub amplitudes: Vec<f64>,
    pub samples: usize,
    /// OOD threshold in units of the moons noise level.
    pub k: f64,
}

impl Default for AmplitudeSweep {
    fn default() -> Self {
        Self {
            amplitudes: vec![1.0, 2.0, 4.0, 10.0, 30.0],
            samples: 2000,
            k: 3.0,
        }
    }
}

impl AmplitudeSweep {
    pub fn validate(&self) -> Result<()> {
        if self.amplitudes.is_empty() || self.amplitudes.iter().any(|a| !(*a > 0.0)) {
            return Err(Error::Config("amplitudes must be positive".into()));
        }
        if self.amplitudes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("amplitudes must be strictly ascending".into()));
        }
        if self.samples == 0 || !(self.k > 0.0) {
            return Err(Error::Config("sweep needs samples > 0 and k > 0".into()));
        }
        Ok(())
    }
}

fn rows(t: &Tensor<f64>) -> Vec<[f64; 2]> {
    t.data().chunks_exact(2).map(|c| [c[0], c[1]]).collect()
}

fn unsqueeze(squeeze: &Squeeze, pts: &[[f64; 2]]) -> Vec<[f64; 2]> {
    pts.iter().map(|p| squeeze.invert(*p)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub amplitude: f64,
    pub seed: u64,
    pub ood_fraction: f64,
}

/// Samples drawn for each amplitude of a sweep, in squeezed coordinates.
#[derive(Clone, Debug)]
pub struct SweepSamples {
    pub amplitude: f64,
    pub samples: Vec<[f64; 2]>,
}

/// OOD fractions of an NF-normal toy flow over the sweep's amplitudes.
/// Every amplitude scales the same standard-normal draws.
pub fn run_sweep(
    flow: &ConditionalFlow<f64>,
    moons: &Moons,
    noise: f64,
    sweep: &AmplitudeSweep,
    seed: u64,
) -> Result<(Vec<SweepRow>, Vec<SweepSamples>)> {
    sweep.validate()?;
    let threshold = sweep.k * noise;
    let mut rows_out = Vec::new();
    let mut samples_out = Vec::new();
    for &a in &sweep.amplitudes {
        let mut rng = derived(seed, 100);
        let s = rows(&amplitude_sample(flow, a, sweep.samples, &mut rng)?);
        let frac = ood_fraction(&unsqueeze(&moons.squeeze, &s), &moons.raw, threshold)?;
        rows_out.push(SweepRow {
            amplitude: a,
            seed,
            ood_fraction: frac,
        });
        samples_out.push(SweepSamples { amplitude: a, samples: s });
    }
    Ok((rows_out, samples_out))
}

/// OOD fraction of samples drawn from a flow's own base distribution.
pub fn base_sample_ood(flow: &ConditionalFlow<f64>, moons: &Moons, noise: f64, k: f64, n: usize, seed: u64) -> Result<(f64, Vec<[f64; 2]>)> {
    let mut rng = derived(seed, 200);
    let s = rows(&flow.sample(&Tensor::zeros(&[0, 0]), n, &mut rng)?);
    let frac = ood_fraction(&unsqueeze(&moons.squeeze, &s), &moons.raw, k * noise)?;
    Ok((frac, s))
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("amplitude,seed,ood_fraction\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.amplitude, r.seed, r.ood_fraction);
    }
    out
}

const PANEL: f64 = 400.0;

fn to_px(v: f64) -> f64 {
    (v + 1.0) / 2.0 * PANEL
}

fn svg_open(title: &str) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n\
         <svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <title>{title}</title>\n\
         <rect x=\"0\" y=\"0\" width=\"{w}\" height=\"{w}\" fill=\"#ffffff\" stroke=\"#000000\"/>\n\
         <text x=\"{cx}\" y=\"{ty}\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">{title}</text>\n",
        w = PANEL,
        h = PANEL + 24.0,
        cx = PANEL / 2.0,
        ty = PANEL + 18.0,
    )
}

/// Five-stop dark-blue to yellow ramp.
fn ramp(t: f64) -> String {
    const STOPS: [[f64; 3]; 5] = [
        [68.0, 1.0, 84.0],
        [59.0, 82.0, 139.0],
        [33.0, 145.0, 140.0],
        [94.0, 201.0, 98.0],
        [253.0, 231.0, 37.0],
    ];
    let x = t.clamp(0.0, 1.0) * 4.0;
    let i = (x.floor() as usize).min(3);
    let f = x - i as f64;
    let c: Vec<u8> = (0..3)
        .map(|k| (STOPS[i][k] + f * (STOPS[i + 1][k] - STOPS[i][k])).round() as u8)
        .collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

pub fn density_svg(grid: &DensityGrid, title: &str) -> String {
    let mut s = svg_open(title);
    let max = grid.values.iter().cloned().fold(0.0, f64::max).max(1e-300);
    let cell = PANEL / grid.resolution as f64;
    for r in 0..grid.resolution {
        for c in 0..grid.resolution {
            let v = grid.values[r * grid.resolution + c];
            let _ = writeln!(
                s,
                "<rect x=\"{:.3}\" y=\"{:.3}\" width=\"{:.3}\" height=\"{:.3}\" fill=\"{}\"/>",
                c as f64 * cell,
                PANEL - (r + 1) as f64 * cell,
                cell,
                cell,
                ramp(v / max)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

pub fn scatter_svg(points: &[[f64; 2]], title: &str) -> String {
    let mut s = svg_open(title);
    for p in points {
        let _ = writeln!(
            s,
            "<circle cx=\"{:.3}\" cy=\"{:.3}\" r=\"1.5\" fill=\"#1f4e99\" fill-opacity=\"0.5\"/>",
            to_px(p[0].clamp(-1.0, 1.0)),
            PANEL - to_px(p[1].clamp(-1.0, 1.0))
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Inputs for the figure panels.
pub struct FigureSet<'a> {
    pub normal_density: &'a DensityGrid,
    pub uniform_density: &'a DensityGrid,
    pub normal_samples: &'a [[f64; 2]],
    pub uniform_samples: &'a [[f64; 2]],
    pub sweep: &'a [SweepSamples],
}

/// Writes one SVG per panel: two densities, two base-distribution sample
/// sets, and one panel per sweep amplitude.
pub fn emit_figures(figs: &FigureSet<'_>, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut panels: Vec<(String, String)> = vec![
        ("density_nf_normal.svg".into(), density_svg(figs.normal_density, "NF-Normal density")),
        ("density_nf_uniform.svg".into(), density_svg(figs.uniform_density, "NF-Uniform density")),
        ("samples_nf_normal.svg".into(), scatter_svg(figs.normal_samples, "NF-Normal samples")),
        ("samples_nf_uniform.svg".into(), scatter_svg(figs.uniform_samples, "NF-Uniform samples")),
    ];
    for s in figs.sweep {
        panels.push((
            format!("amplitude_{}.svg", s.amplitude),
            scatter_svg(&s.samples, &format!("Amplitude = {}", s.amplitude)),
        ));
    }
    let mut paths = Vec::new();
    for (name, body) in panels {
        let p = dir.join(name);
        atomic_write(&p, body.as_bytes())?;
        paths.push(p);
    }
    Ok(paths)
}
