use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Dataset quality tier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Random,
    Medium,
    Expert,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::Random, Tier::Medium, Tier::Expert];

    pub fn name(&self) -> &'static str {
        match self {
            Tier::Random => "random",
            Tier::Medium => "medium",
            Tier::Expert => "expert",
        }
    }

    /// Standard deviation σ_b of the Gaussian action noise.
    pub fn noise(&self) -> f64 {
        match self {
            Tier::Random => 0.6,
            Tier::Medium => 0.3,
            Tier::Expert => 0.05,
        }
    }

    /// Length of the per-episode waypoint offset, whose direction is uniform.
    pub fn waypoint_error(&self) -> f64 {
        match self {
            Tier::Random => 0.7,
            Tier::Medium => 0.3,
            Tier::Expert => 0.0,
        }
    }
}

impl std::str::FromStr for Tier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Tier::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown tier `{s}` (valid: random, medium, expert)")))
    }
}

impl std::fmt::Display for Tier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Distance at which the waypoint follower advances to its next waypoint.
const WAYPOINT_RADIUS: f64 = 0.15;
/// Distance below which the commanded speed shrinks linearly.
const SLOWDOWN_RADIUS: f64 = 0.1;

/// Scripted data-collection policy.
#[derive(Clone, Debug, PartialEq)]
pub enum BehaviorPolicy {
    /// Steers toward a sequence of waypoints, each shifted by one
    /// per-episode offset, with truncated Gaussian action noise.
    Waypoint {
        waypoints: Vec<[f64; 2]>,
        tier: Tier,
        offset: [f64; 2],
        next: usize,
    },
    /// Uniform over the annulus `r_min ≤ ‖a‖ ≤ r_max`, by rejection.
    Ring { r_min: f64, r_max: f64 },
    /// Uniform on `[−1, 1]²`.
    Uniform,
}

impl BehaviorPolicy {
    pub fn waypoint(waypoints: Vec<[f64; 2]>, tier: Tier) -> Self {
        BehaviorPolicy::Waypoint {
            waypoints,
            tier,
            offset: [0.0; 2],
            next: 0,
        }
    }

    pub fn ring(r_min: f64, r_max: f64) -> Self {
        BehaviorPolicy::Ring { r_min, r_max }
    }

    pub fn begin_episode(&mut self, rng: &mut SeededRng) {
        if let BehaviorPolicy::Waypoint { tier, offset, next, .. } = self {
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            let len = tier.waypoint_error();
            *offset = [len * theta.cos(), len * theta.sin()];
            *next = 0;
        }
    }

    pub fn act(&mut self, state: &[f64], rng: &mut SeededRng) -> Vec<f64> {
        match self {
            BehaviorPolicy::Waypoint {
                waypoints,
                tier,
                offset,
                next,
            } => {
                let target = |i: usize| {
                    [
                        (waypoints[i][0] + offset[0]).clamp(-1.0, 1.0),
                        (waypoints[i][1] + offset[1]).clamp(-1.0, 1.0),
                    ]
                };
                let dist = |t: [f64; 2]| ((t[0] - state[0]).powi(2) + (t[1] - state[1]).powi(2)).sqrt();
                while *next + 1 < waypoints.len() && dist(target(*next)) < WAYPOINT_RADIUS {
                    *next += 1;
                }
                let t = target(*next);
                let d = dist(t);
                let speed = if d > 0.0 { (d / SLOWDOWN_RADIUS).min(1.0) / d } else { 0.0 };
                let sigma = tier.noise();
                (0..2)
                    .map(|k| truncated_normal((t[k] - state[k]) * speed, sigma, rng))
                    .collect()
            }
            BehaviorPolicy::Ring { r_min, r_max } => loop {
                let a: [f64; 2] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                let r = (a[0] * a[0] + a[1] * a[1]).sqrt();
                if r >= *r_min && r <= *r_max {
                    return a.to_vec();
                }
            },
            BehaviorPolicy::Uniform => (0..2).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }
}

/// Draw from N(mean, σ²) restricted to the open interval (−1, 1).
fn truncated_normal(mean: f64, sigma: f64, rng: &mut SeededRng) -> f64 {
    let n = Normal::new(mean, sigma).expect("positive sigma");
    for _ in 0..10_000 {
        let v: f64 = n.sample(rng);
        if v > -1.0 && v < 1.0 {
            return v;
        }
    }
    mean.clamp(-0.999, 0.999)
}
