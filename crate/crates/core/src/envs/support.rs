use serde::{Deserialize, Serialize};

/// Membership test for the behavior policy's action support.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SupportSpec {
    /// Annulus `r_min ≤ ‖a‖₂ ≤ r_max`.
    Ring { r_min: f64, r_max: f64 },
    /// Union of balls of `radius` around each point (row-major, `dim` columns).
    Points { points: Vec<f64>, dim: usize, radius: f64 },
}

impl SupportSpec {
    pub fn contains(&self, a: &[f64]) -> bool {
        match self {
            SupportSpec::Ring { r_min, r_max } => {
                let r = a.iter().map(|v| v * v).sum::<f64>().sqrt();
                r >= *r_min && r <= *r_max
            }
            SupportSpec::Points { points, dim, radius } => {
                let r2 = radius * radius;
                points
                    .chunks_exact(*dim)
                    .any(|p| p.iter().zip(a).map(|(x, y)| (x - y).powi(2)).sum::<f64>() <= r2)
            }
        }
    }
}

/// Fraction of `actions` (row-major, `dim` columns) outside `spec`.
pub fn support_violation_rate(actions: &[f64], dim: usize, spec: &SupportSpec) -> f64 {
    let n = actions.len() / dim;
    if n == 0 {
        return 0.0;
    }
    let outside = actions.chunks_exact(dim).filter(|a| !spec.contains(a)).count();
    outside as f64 / n as f64
}
