//! Robust kernels applied to squared (Mahalanobis or pixel) residual norms.

use serde::{Deserialize, Serialize};

/// A robust loss `ρ(s)` of the squared residual norm `s`, normalized so that
/// `ρ(s) ≈ s` near zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RobustKernel {
    None,
    /// Quadratic up to `delta²`, linear in the residual norm beyond.
    Huber { delta: f64 },
    /// Redescending; constant cost beyond `c²`.
    Tukey { c: f64 },
}

impl RobustKernel {
    pub fn cost(&self, s: f64) -> f64 {
        match *self {
            RobustKernel::None => s,
            RobustKernel::Huber { delta } => {
                if s <= delta * delta {
                    s
                } else {
                    2.0 * delta * s.sqrt() - delta * delta
                }
            }
            RobustKernel::Tukey { c } => {
                let c2 = c * c;
                if s <= c2 {
                    let u = 1.0 - s / c2;
                    c2 / 3.0 * (1.0 - u * u * u)
                } else {
                    c2 / 3.0
                }
            }
        }
    }

    /// `dρ/ds`, the IRLS weight.
    pub fn weight(&self, s: f64) -> f64 {
        match *self {
            RobustKernel::None => 1.0,
            RobustKernel::Huber { delta } => {
                if s <= delta * delta {
                    1.0
                } else {
                    delta / s.sqrt()
                }
            }
            RobustKernel::Tukey { c } => {
                let c2 = c * c;
                if s <= c2 {
                    let u = 1.0 - s / c2;
                    u * u
                } else {
                    0.0
                }
            }
        }
    }
}
