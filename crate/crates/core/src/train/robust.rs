//! M-estimator sample weights for iteratively reweighted least squares.

use serde::{Deserialize, Serialize};

/// Normal-consistency factor for the median absolute deviation.
pub const MAD_SCALE: f64 = 1.4826;
pub const BISQUARE_C: f64 = 4.685;
pub const HUBER_C: f64 = 1.345;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Plain least squares: every weight is 1.
    Squared,
    Huber,
    #[default]
    Bisquare,
}

/// Default lower bound on the cutoff `c * s`.
///
/// With {0, 1} targets most residuals of a good fit are near zero, so the MAD scale
/// collapses and every minority-class sample would be rejected. Residuals of a
/// probability output lie in (-1, 1); a cutoff above 0.5 only rejects samples the
/// model places firmly on the other side of a 0.5 decision.
pub const DEFAULT_MIN_CUTOFF: f64 = 0.75;

/// Default number of unit-weight LM iterations before reweighting starts.
pub const DEFAULT_WARMUP: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustConfig {
    pub estimator: Estimator,
    /// Tuning constant `c`; defaults to 4.685 (bisquare) or 1.345 (Huber).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tuning: Option<f64>,
    /// The cutoff `c * s` is raised to at least this value when `s > 0`. Zero gives the
    /// plain MAD rule.
    #[serde(default = "default_min_cutoff")]
    pub min_cutoff: f64,
    /// LM iterations run with unit weights before reweighting starts.
    #[serde(default = "default_warmup")]
    pub warmup_iterations: usize,
}

fn default_min_cutoff() -> f64 {
    DEFAULT_MIN_CUTOFF
}

fn default_warmup() -> usize {
    DEFAULT_WARMUP
}

impl Default for RobustConfig {
    fn default() -> Self {
        Self {
            estimator: Estimator::Bisquare,
            tuning: None,
            min_cutoff: DEFAULT_MIN_CUTOFF,
            warmup_iterations: DEFAULT_WARMUP,
        }
    }
}

impl RobustConfig {
    pub fn squared() -> Self {
        Self {
            estimator: Estimator::Squared,
            ..Self::default()
        }
    }

    pub fn bisquare() -> Self {
        Self::default()
    }

    pub fn huber() -> Self {
        Self {
            estimator: Estimator::Huber,
            ..Self::default()
        }
    }

    /// The textbook rule: cutoff `c * s` with no lower bound.
    pub fn unfloored(self) -> Self {
        Self {
            min_cutoff: 0.0,
            ..self
        }
    }

    pub fn tuning_constant(&self) -> f64 {
        self.tuning.unwrap_or(match self.estimator {
            Estimator::Huber => HUBER_C,
            _ => BISQUARE_C,
        })
    }

    pub fn weights(&self, residuals: &[f64]) -> Vec<f64> {
        robust_weights(residuals, self)
    }
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Robust residual scale `1.4826 * median(|r - median(r)|)`.
pub fn mad_scale(residuals: &[f64]) -> f64 {
    let mut r = residuals.to_vec();
    let med = median(&mut r);
    let mut dev: Vec<f64> = residuals.iter().map(|v| (v - med).abs()).collect();
    MAD_SCALE * median(&mut dev)
}

/// Per-sample weights in [0, 1]. A zero scale gives all-ones weights.
///
/// Bisquare: `(1 - (r / k)^2)^2` for `|r| < k`, else 0. Huber: `min(1, k / |r|)`.
/// Here `k = max(c * s, min_cutoff)` and `s` is the MAD scale.
pub fn robust_weights(residuals: &[f64], config: &RobustConfig) -> Vec<f64> {
    if residuals.is_empty() || config.estimator == Estimator::Squared {
        return vec![1.0; residuals.len()];
    }
    let s = mad_scale(residuals);
    if s == 0.0 {
        return vec![1.0; residuals.len()];
    }
    let cut = (config.tuning_constant() * s).max(config.min_cutoff);
    match config.estimator {
        Estimator::Squared => unreachable!(),
        Estimator::Bisquare => residuals
            .iter()
            .map(|r| {
                if r.abs() < cut {
                    let t = r / cut;
                    (1.0 - t * t).powi(2)
                } else {
                    0.0
                }
            })
            .collect(),
        Estimator::Huber => residuals
            .iter()
            .map(|r| if r.abs() <= cut { 1.0 } else { cut / r.abs() })
            .collect(),
    }
}
