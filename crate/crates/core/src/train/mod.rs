//! Multi-restart training: Nguyen-Widrow initialization followed by robust
//! Levenberg-Marquardt, keeping the restart with the lowest validation criterion.

mod init;
mod lm;
mod robust;

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::EncodedDataset;
use crate::error::{Error, Result};
use crate::net::{Mlp, ModelMeta};

pub use init::{nguyen_widrow_beta, nguyen_widrow_init};
pub use lm::{
    apply_step, lm_step, mse, residuals, run_lm, weighted_criterion, Batch, LmModel, LmOutcome,
    LmSettings, LmSystem, StopReason, TraceStep,
};
pub use robust::{
    mad_scale, robust_weights, Estimator, RobustConfig, BISQUARE_C, HUBER_C, MAD_SCALE,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub n1_initial: usize,
    pub restarts: usize,
    pub max_lm_iterations: usize,
    pub lambda_init: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    pub lambda_max: f64,
    pub convergence_tol: f64,
    pub robust: RobustConfig,
    pub master_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n1_initial: 25,
            restarts: 100,
            max_lm_iterations: 200,
            lambda_init: 1e-2,
            lambda_up: 10.0,
            lambda_down: 0.1,
            lambda_max: 1e10,
            convergence_tol: 1e-8,
            robust: RobustConfig::default(),
            master_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.restarts < 1 {
            return bad("restarts must be >= 1");
        }
        if self.n1_initial < 1 {
            return bad("n1_initial must be >= 1");
        }
        if !(self.lambda_up > 1.0) {
            return bad("lambda_up must be > 1");
        }
        if !(self.lambda_down > 0.0 && self.lambda_down < 1.0) {
            return bad("lambda_down must be in (0, 1)");
        }
        if !(self.lambda_init > 0.0 && self.lambda_max >= self.lambda_init) {
            return bad("need 0 < lambda_init <= lambda_max");
        }
        if !(self.convergence_tol > 0.0) {
            return bad("convergence_tol must be > 0");
        }
        if let Some(c) = self.robust.tuning {
            if !(c > 0.0) {
                return bad("robust tuning constant must be > 0");
            }
        }
        Ok(())
    }

    pub fn lm_settings(&self) -> LmSettings {
        LmSettings {
            max_iterations: self.max_lm_iterations,
            lambda_init: self.lambda_init,
            lambda_up: self.lambda_up,
            lambda_down: self.lambda_down,
            lambda_max: self.lambda_max,
            convergence_tol: self.convergence_tol,
            robust: self.robust,
        }
    }
}

/// Seed of restart `index`, derived from the master seed with a SplitMix64 mix.
pub fn restart_seed(master_seed: u64, index: usize) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(master_seed ^ mix(index as u64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartRecord {
    pub index: usize,
    pub seed: u64,
    /// Final weighted identification criterion; `None` if the restart broke down.
    pub train_criterion: Option<f64>,
    pub validation_criterion: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<StopReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub restarts: Vec<RestartRecord>,
    pub best_restart: Option<usize>,
    pub best_trace: Vec<TraceStep>,
}

impl TrainReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:>7}  {:>20}  {:>14}  {:>14}  {:>5}  {:>9}",
            "restart", "seed", "train_crit", "valid_crit", "iters", "converged"
        );
        let fmt = |v: Option<f64>| v.map_or("breakdown".to_string(), |v| format!("{v:.6e}"));
        for r in &self.restarts {
            let mark = if Some(r.index) == self.best_restart {
                " *"
            } else {
                ""
            };
            let _ = writeln!(
                s,
                "{:>7}  {:>20}  {:>14}  {:>14}  {:>5}  {:>9}{mark}",
                r.index,
                r.seed,
                fmt(r.train_criterion),
                fmt(r.validation_criterion),
                r.iterations,
                r.converged
            );
        }
        s
    }
}

struct RestartResult {
    record: RestartRecord,
    outcome: Option<LmOutcome>,
}

fn run_restart(
    index: usize,
    ident: Batch<'_>,
    valid: Batch<'_>,
    cfg: &TrainConfig,
) -> RestartResult {
    let seed = restart_seed(cfg.master_seed, index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let result = nguyen_widrow_init(ident.width, cfg.n1_initial, &mut rng)
        .and_then(|m| run_lm(m, ident, &cfg.lm_settings()));
    match result {
        Ok(out) => RestartResult {
            record: RestartRecord {
                index,
                seed,
                train_criterion: Some(out.criterion),
                validation_criterion: Some(mse(&out.model, valid)),
                iterations: out.iterations,
                converged: out.converged(),
                stop: Some(out.stop),
            },
            outcome: Some(out),
        },
        Err(_) => RestartResult {
            record: RestartRecord {
                index,
                seed,
                train_criterion: None,
                validation_criterion: None,
                iterations: 0,
                converged: false,
                stop: None,
            },
            outcome: None,
        },
    }
}

/// Trains on raw batches. The returned network carries no metadata.
pub fn train_batches(
    ident: Batch<'_>,
    valid: Batch<'_>,
    config: &TrainConfig,
) -> Result<(Mlp, TrainReport)> {
    config.validate()?;
    if ident.is_empty() || valid.is_empty() {
        return Err(Error::Config(
            "identification and validation sets must be nonempty".into(),
        ));
    }
    if ident.width != valid.width {
        return Err(Error::Dimension {
            expected: ident.width,
            got: valid.width,
        });
    }
    let results: Vec<RestartResult> = (0..config.restarts)
        .into_par_iter()
        .map(|i| run_restart(i, ident, valid, config))
        .collect();

    // lowest validation criterion, ties to the lower index
    let best = results
        .iter()
        .filter_map(|r| r.record.validation_criterion.map(|v| (v, r.record.index)))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, i)| i);

    let mut records = Vec::with_capacity(results.len());
    let mut best_outcome = None;
    for r in results {
        if Some(r.record.index) == best {
            best_outcome = r.outcome;
        }
        records.push(r.record);
    }
    let mut report = TrainReport {
        restarts: records,
        best_restart: best,
        best_trace: Vec::new(),
    };
    match best_outcome {
        Some(out) => {
            report.best_trace = out.trace;
            Ok((out.model, report))
        }
        None => Err(Error::AllRestartsFailed(Box::new(report))),
    }
}

/// Trains one network per defect dataset and attaches the identification set's
/// encoding to the result.
pub fn train(
    ident: &EncodedDataset,
    valid: &EncodedDataset,
    config: &TrainConfig,
) -> Result<(Mlp, TrainReport)> {
    if ident.encoding.columns != valid.encoding.columns {
        return Err(Error::Config(
            "identification and validation column layouts differ".into(),
        ));
    }
    let (mlp, report) = train_batches(ident.into(), valid.into(), config)?;
    let meta = ModelMeta {
        defect_name: ident.defect_name.clone(),
        schema_fingerprint: ident.schema_fingerprint.clone(),
        encoding: Some(ident.encoding.clone()),
    };
    Ok((mlp.with_meta(meta)?, report))
}
