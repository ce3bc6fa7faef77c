//! Greedy elimination: remove the least salient hidden neuron, input factor or
//! parameter, retrain briefly, and keep the removal while the validation criterion
//! stays within tolerance.
//!
//! Removing a hidden weight replaces its input by the identification mean, so the
//! neuron bias absorbs `w * mean` when the bias is still active. Standardized columns
//! have mean zero and are plainly zeroed; one-hot columns would otherwise carry part
//! of the bias with them.
//!
//! Each candidate is the better, on validation, of the plain removal and its
//! retrained version.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::EncodedDataset;
use crate::error::Result;
use crate::net::{sigmoid, Mlp, ParamId};
use crate::train::{
    mse, residuals, run_lm, weighted_criterion, Batch, LmSettings, RobustConfig, TrainConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PruneConfig {
    /// Allowed relative validation-criterion increase over the best accepted value.
    pub tolerance: f64,
    pub retrain_iterations: usize,
    pub min_hidden: usize,
    /// Try whole input factors and whole hidden neurons before single parameters.
    pub units_first: bool,
    /// Consecutive rejected single parameters tolerated before stopping. A rejected
    /// parameter is kept and skipped until the next accepted removal. Zero stops at
    /// the first rejection.
    pub patience: usize,
    /// Upper bound on removal attempts.
    pub max_removals: Option<usize>,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            tolerance: 0.01,
            retrain_iterations: 20,
            min_hidden: 1,
            units_first: true,
            patience: 0,
            max_removals: None,
        }
    }
}

impl PruneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance >= 0.0) || !self.tolerance.is_finite() {
            return Err(crate::Error::Config("prune tolerance must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovalStep {
    /// Flat index of the first parameter removed.
    pub index: usize,
    /// Parameter name, `neuron[i]`, or `input:<factor>`.
    pub param: String,
    pub saliency: f64,
    /// Best accepted validation criterion before this attempt.
    pub criterion_before: f64,
    /// Validation criterion of the candidate.
    pub criterion_after: f64,
    pub accepted: bool,
    /// Whether the candidate is the retrained network (otherwise the plain removal).
    pub retrained: bool,
    /// The other parameters removed with this one.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cascaded: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub log: Vec<RemovalStep>,
    pub eliminated_neurons: Vec<usize>,
    pub eliminated_factors: Vec<String>,
    pub initial_validation_criterion: f64,
    pub final_validation_criterion: f64,
    pub initial_active: usize,
    pub final_active: usize,
}

impl PruneReport {
    pub fn accepted(&self) -> usize {
        self.log.iter().filter(|s| s.accepted).count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "active parameters: {} -> {}  validation criterion: {:.6e} -> {:.6e}",
            self.initial_active,
            self.final_active,
            self.initial_validation_criterion,
            self.final_validation_criterion
        );
        let _ = writeln!(
            s,
            "eliminated hidden neurons: {:?}",
            self.eliminated_neurons
        );
        let factors = if self.eliminated_factors.is_empty() {
            "none".to_string()
        } else {
            self.eliminated_factors.join(", ")
        };
        let _ = writeln!(s, "eliminated inputs: {factors}");
        let _ = writeln!(
            s,
            "{:>5}  {:>12}  {:>12}  {:>14}  {:>14}  accepted",
            "step", "param", "saliency", "before", "after"
        );
        for (k, r) in self.log.iter().enumerate() {
            let _ = writeln!(
                s,
                "{:>5}  {:>12}  {:>12.4e}  {:>14.6e}  {:>14.6e}  {}",
                k + 1,
                r.param,
                r.saliency,
                r.criterion_before,
                r.criterion_after,
                r.accepted
            );
        }
        s
    }
}

/// Increase of the weighted criterion `sum w e^2 / N` when each active parameter alone
/// is removed as [`remove_param`] does with the batch column means, in ascending
/// flat-index order of the active parameters. Cascaded clean-up never changes the
/// output, so it is not evaluated.
pub fn saliency(mlp: &Mlp, batch: Batch<'_>, weights: &[f64]) -> Vec<(usize, f64)> {
    let means = batch.column_means();
    let (n0, n1) = (mlp.n0(), mlp.n1());
    let w1 = mlp.hidden_weights();
    let b1 = mlp.hidden_biases();
    let w2 = mlp.output_weights();
    let b = mlp.output_bias();
    let active = mlp.active_indices();
    let mut delta = vec![0.0; active.len()];
    let mut u = vec![0.0; n1];
    let mut h = vec![0.0; n1];
    for k in 0..batch.len() {
        let x = batch.row(k);
        let y = batch.targets[k];
        let wk = weights[k];
        let out = mlp.preactivations(x, &mut u, &mut h);
        let e0 = y - sigmoid(out);
        let base = e0 * e0;
        let cost = |out2: f64| {
            let e = y - sigmoid(out2);
            wk * (e * e - base)
        };
        for (slot, &idx) in delta.iter_mut().zip(&active) {
            let change = match mlp.param_id(idx) {
                ParamId::HiddenWeight {
                    neuron: i,
                    input: j,
                } => {
                    let shift = if mlp.is_active(mlp.index_of(ParamId::HiddenBias { neuron: i })) {
                        means[j]
                    } else {
                        0.0
                    };
                    let u2 = u[i] - w1[i * n0 + j] * (x[j] - shift);
                    cost(out - w2[i] * (h[i] - u2.tanh()))
                }
                ParamId::HiddenBias { neuron: i } => {
                    cost(out - w2[i] * (h[i] - (u[i] - b1[i]).tanh()))
                }
                ParamId::OutputWeight { neuron: i } => cost(out - w2[i] * h[i]),
                ParamId::OutputBias => cost(out - b),
            };
            *slot += change;
        }
    }
    let n = batch.len().max(1) as f64;
    active
        .into_iter()
        .zip(delta)
        .map(|(i, d)| (i, d / n))
        .collect()
}

/// Removes parameter `idx` and any parameters left without effect: a neuron without
/// output weight loses everything; a neuron without input weights is constant and,
/// when the output bias is active, is folded into it. A removed hidden weight on
/// input `j` adds `w * means[j]` to its neuron's bias when that bias is active.
/// Returns the extra removals.
pub fn remove_param(mlp: &mut Mlp, idx: usize, means: &[f64]) -> Vec<usize> {
    let mut extra = Vec::new();
    let id = mlp.param_id(idx);
    if let ParamId::HiddenWeight { neuron, input } = id {
        let bias = ParamId::HiddenBias { neuron };
        if mlp.is_active(mlp.index_of(bias)) && means[input] != 0.0 {
            let b = mlp.param(bias) + mlp.params()[idx] * means[input];
            mlp.set_param(bias, b).expect("active, finite");
        }
    }
    mlp.deactivate(idx);
    let neuron = match id {
        ParamId::HiddenWeight { neuron, .. }
        | ParamId::OutputWeight { neuron }
        | ParamId::HiddenBias { neuron } => neuron,
        ParamId::OutputBias => return extra,
    };
    let n0 = mlp.n0();
    let out_idx = mlp.index_of(ParamId::OutputWeight { neuron });
    let bias_idx = mlp.index_of(ParamId::HiddenBias { neuron });
    let inputs: Vec<usize> = (0..n0)
        .map(|h| neuron * n0 + h)
        .filter(|&i| mlp.is_active(i))
        .collect();
    let mut drop = |mlp: &mut Mlp, i: usize| {
        if mlp.is_active(i) {
            mlp.deactivate(i);
            extra.push(i);
        }
    };
    if !mlp.is_active(out_idx) {
        for i in inputs {
            drop(mlp, i);
        }
        drop(mlp, bias_idx);
    } else if inputs.is_empty() {
        let b_idx = mlp.index_of(ParamId::OutputBias);
        if mlp.is_active(b_idx) {
            let constant = mlp.params()[out_idx] * mlp.params()[bias_idx].tanh();
            let b = mlp.params()[b_idx] + constant;
            mlp.set_param(ParamId::OutputBias, b)
                .expect("active, finite");
            drop(mlp, out_idx);
            drop(mlp, bias_idx);
        }
    }
    extra
}

fn kills_neuron(mlp: &Mlp, idx: usize) -> Option<usize> {
    match mlp.param_id(idx) {
        ParamId::OutputWeight { neuron } => Some(neuron),
        ParamId::HiddenWeight { neuron, input } => {
            let n0 = mlp.n0();
            let others = (0..n0).any(|h| h != input && mlp.is_active(neuron * n0 + h));
            (!others).then_some(neuron)
        }
        _ => None,
    }
    .filter(|&i| mlp.is_neuron_alive(i))
}

/// LM settings used for the short retraining after each removal. Reweighting starts
/// immediately since the network is already fitted.
pub fn retrain_settings(train: &TrainConfig, prune: &PruneConfig) -> LmSettings {
    let mut s = train.lm_settings();
    s.max_iterations = prune.retrain_iterations;
    s.robust = RobustConfig {
        warmup_iterations: 0,
        ..train.robust
    };
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Neurons,
    Inputs,
    Weights,
}

/// A removal candidate: one parameter, a whole hidden neuron, or every weight of an
/// input factor.
#[derive(Debug, Clone, PartialEq)]
enum Unit {
    Param(usize),
    Neuron(usize),
    Input(String, Vec<usize>),
}

impl Unit {
    fn label(&self, mlp: &Mlp) -> String {
        match self {
            Unit::Param(idx) => mlp.param_id(*idx).to_string(),
            Unit::Neuron(i) => format!("neuron[{i}]"),
            Unit::Input(name, _) => format!("input:{name}"),
        }
    }

    /// Applies the removal; returns every parameter that went inactive, in order.
    fn remove(&self, mlp: &mut Mlp, means: &[f64]) -> Vec<usize> {
        let mut gone = Vec::new();
        let mut take = |mlp: &mut Mlp, idx: usize| {
            if mlp.is_active(idx) {
                gone.push(idx);
                gone.extend(remove_param(mlp, idx, means));
            }
        };
        match self {
            Unit::Param(idx) => take(mlp, *idx),
            Unit::Neuron(i) => take(mlp, mlp.index_of(ParamId::OutputWeight { neuron: *i })),
            Unit::Input(_, cols) => {
                for i in 0..mlp.n1() {
                    for &c in cols {
                        take(mlp, i * mlp.n0() + c);
                    }
                }
            }
        }
        gone
    }
}

/// Input factor groups: encoding factors when known, single columns otherwise.
fn input_groups(mlp: &Mlp) -> Vec<(String, Vec<usize>)> {
    match mlp.encoding() {
        Some(enc) => enc
            .factors()
            .into_iter()
            .map(|f| (f.to_string(), enc.columns_of(f)))
            .collect(),
        None => (0..mlp.n0()).map(|j| (format!("x{j}"), vec![j])).collect(),
    }
}

fn candidates(
    stage: Stage,
    mlp: &Mlp,
    batch: Batch<'_>,
    weights: &[f64],
    means: &[f64],
    min_hidden: usize,
) -> Vec<(Unit, f64)> {
    let alive = mlp.alive_neurons();
    let units: Vec<Unit> = match stage {
        Stage::Weights => {
            return saliency(mlp, batch, weights)
                .into_iter()
                .filter(|&(idx, _)| kills_neuron(mlp, idx).is_none() || alive.len() > min_hidden)
                .map(|(idx, s)| (Unit::Param(idx), s))
                .collect();
        }
        Stage::Neurons if alive.len() <= min_hidden => Vec::new(),
        Stage::Neurons => alive.into_iter().map(Unit::Neuron).collect(),
        Stage::Inputs => input_groups(mlp)
            .into_iter()
            .filter(|(_, cols)| cols.iter().any(|&c| mlp.is_input_live(c)))
            .map(|(name, cols)| Unit::Input(name, cols))
            .filter(|u| {
                let mut probe = mlp.clone();
                u.remove(&mut probe, means);
                probe.alive_neurons().len() >= min_hidden
            })
            .collect(),
    };
    let base = weighted_criterion(mlp, batch, weights);
    units
        .into_iter()
        .map(|u| {
            let mut probe = mlp.clone();
            u.remove(&mut probe, means);
            let s = weighted_criterion(&probe, batch, weights) - base;
            (u, s)
        })
        .collect()
}

/// Prunes on raw batches with the given retraining settings.
///
/// With `units_first`, whole input factors are tried first, then whole hidden
/// neurons, each stage running until all its remaining candidates were rejected once.
/// Single parameters come last and stop after `patience` consecutive rejections. The
/// three stages repeat while a round removes anything.
pub fn prune_batches(
    start: &Mlp,
    ident: Batch<'_>,
    valid: Batch<'_>,
    config: &PruneConfig,
    lm: &LmSettings,
) -> Result<(Mlp, PruneReport)> {
    config.validate()?;
    let mut mlp = start.clone();
    let initial = mse(&mlp, valid);
    let initial_active = mlp.active_count();
    let means = ident.column_means();
    let mut best = initial;
    let mut log = Vec::new();
    let stages: &[Stage] = if config.units_first {
        &[Stage::Inputs, Stage::Neurons, Stage::Weights]
    } else {
        &[Stage::Weights]
    };

    'cycles: loop {
        let before_cycle = mlp.active_count();
        for &stage in stages {
            let mut rejected: Vec<Unit> = Vec::new();
            loop {
                if config.max_removals.is_some_and(|m| log.len() >= m) {
                    break 'cycles;
                }
                let weights = lm.robust.weights(&residuals(&mlp, ident));
                let Some((unit, s)) =
                    candidates(stage, &mlp, ident, &weights, &means, config.min_hidden)
                        .into_iter()
                        .filter(|(u, _)| !rejected.contains(u))
                        .min_by(|a, b| a.1.total_cmp(&b.1))
                else {
                    break;
                };

                let mut plain = mlp.clone();
                let gone = unit.remove(&mut plain, &means);
                let plain_crit = mse(&plain, valid);
                // the retrained network is kept only when it validates at least as well
                let retrained = (plain.active_count() > 0)
                    .then(|| run_lm(plain.clone(), ident, lm).ok())
                    .flatten()
                    .map(|o| {
                        let c = mse(&o.model, valid);
                        (o.model, c)
                    })
                    .filter(|(_, c)| c.is_finite() && *c <= plain_crit);
                let was_retrained = retrained.is_some();
                let (cand, after) = retrained.unwrap_or((plain, plain_crit));
                let accepted = after.is_finite() && after <= best * (1.0 + config.tolerance);
                log.push(RemovalStep {
                    index: gone.first().copied().unwrap_or(0),
                    param: unit.label(&mlp),
                    saliency: s,
                    criterion_before: best,
                    criterion_after: after,
                    accepted,
                    retrained: was_retrained,
                    cascaded: gone
                        .iter()
                        .skip(1)
                        .map(|&i| mlp.param_id(i).to_string())
                        .collect(),
                });
                if accepted {
                    mlp = cand;
                    best = best.min(after);
                    if stage == Stage::Weights {
                        rejected.clear();
                    }
                    continue;
                }
                if stage == Stage::Weights && rejected.len() >= config.patience {
                    break;
                }
                rejected.push(unit);
            }
        }
        if mlp.active_count() == before_cycle || !config.units_first {
            break;
        }
    }

    let report = PruneReport {
        eliminated_neurons: (0..mlp.n1()).filter(|&i| !mlp.is_neuron_alive(i)).collect(),
        eliminated_factors: mlp.eliminated_factors(),
        initial_validation_criterion: initial,
        final_validation_criterion: mse(&mlp, valid),
        initial_active,
        final_active: mlp.active_count(),
        log,
    };
    Ok((mlp, report))
}

/// Prunes a trained network. Retraining uses the LM and robust settings of `train`.
pub fn prune(
    mlp: &Mlp,
    ident: &EncodedDataset,
    valid: &EncodedDataset,
    config: &PruneConfig,
    train: &TrainConfig,
) -> Result<(Mlp, PruneReport)> {
    prune_batches(
        mlp,
        ident.into(),
        valid.into(),
        config,
        &retrain_settings(train, config),
    )
}
