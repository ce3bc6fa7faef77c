//! Levenberg-Marquardt on a weighted least-squares criterion.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::robust::RobustConfig;
use crate::data::EncodedDataset;
use crate::error::{Error, Result};
use crate::net::Mlp;

/// Borrowed view of inputs (row-major) and targets.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub inputs: &'a [f64],
    pub targets: &'a [f64],
    pub width: usize,
}

impl<'a> Batch<'a> {
    pub fn new(inputs: &'a [f64], targets: &'a [f64], width: usize) -> Result<Self> {
        if width == 0 || inputs.len() != targets.len() * width {
            return Err(Error::Dimension {
                expected: targets.len() * width,
                got: inputs.len(),
            });
        }
        Ok(Self {
            inputs,
            targets,
            width,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    #[inline]
    pub fn row(&self, k: usize) -> &'a [f64] {
        &self.inputs[k * self.width..(k + 1) * self.width]
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.width];
        for row in self.inputs.chunks_exact(self.width) {
            for (a, x) in m.iter_mut().zip(row) {
                *a += x;
            }
        }
        let n = self.len().max(1) as f64;
        m.iter_mut().for_each(|a| *a /= n);
        m
    }
}

impl<'a> From<&'a EncodedDataset> for Batch<'a> {
    fn from(d: &'a EncodedDataset) -> Self {
        Batch {
            inputs: &d.inputs,
            targets: &d.targets,
            width: d.n_inputs(),
        }
    }
}

/// What LM needs from a model: an output per input row and its gradient with respect to
/// the free parameters.
pub trait LmModel: Clone {
    /// Expected input row width.
    fn input_width(&self) -> usize;
    fn free_params(&self) -> Vec<f64>;
    fn set_free_params(&mut self, values: &[f64]) -> Result<()>;
    fn output(&self, x: &[f64]) -> f64;
    /// Calls `visit(k, output, gradient)` for every row `k` of `batch`.
    fn visit_gradients(&self, batch: Batch<'_>, visit: &mut dyn FnMut(usize, f64, &[f64]));
}

impl LmModel for Mlp {
    fn input_width(&self) -> usize {
        self.n0()
    }

    fn free_params(&self) -> Vec<f64> {
        self.active_params()
    }

    fn set_free_params(&mut self, values: &[f64]) -> Result<()> {
        self.set_active_params(values)
    }

    fn output(&self, x: &[f64]) -> f64 {
        self.eval(x)
    }

    fn visit_gradients(&self, batch: Batch<'_>, visit: &mut dyn FnMut(usize, f64, &[f64])) {
        let active = self.active_indices();
        let mut u = vec![0.0; self.n1()];
        let mut h = vec![0.0; self.n1()];
        let mut g = vec![0.0; self.param_count()];
        let mut ga = vec![0.0; active.len()];
        for k in 0..batch.len() {
            let z = self.full_gradient(batch.row(k), &mut u, &mut h, &mut g);
            for (d, &i) in ga.iter_mut().zip(&active) {
                *d = g[i];
            }
            visit(k, z, &ga);
        }
    }
}

/// `e = y - z` for every sample.
pub fn residuals<M: LmModel>(model: &M, batch: Batch<'_>) -> Vec<f64> {
    (0..batch.len())
        .map(|k| batch.targets[k] - model.output(batch.row(k)))
        .collect()
}

/// `sum_k w_k e_k^2 / N`.
pub fn weighted_criterion<M: LmModel>(model: &M, batch: Batch<'_>, weights: &[f64]) -> f64 {
    let n = batch.len() as f64;
    (0..batch.len())
        .map(|k| {
            let e = batch.targets[k] - model.output(batch.row(k));
            weights[k] * e * e
        })
        .sum::<f64>()
        / n
}

/// Unweighted mean squared error; used for validation.
pub fn mse<M: LmModel>(model: &M, batch: Batch<'_>) -> f64 {
    let n = batch.len() as f64;
    (0..batch.len())
        .map(|k| {
            let e = batch.targets[k] - model.output(batch.row(k));
            e * e
        })
        .sum::<f64>()
        / n
}

/// Gauss-Newton normal equations at one parameter point, reusable across damping values.
pub struct LmSystem {
    jtwj: DMatrix<f64>,
    jtwe: DVector<f64>,
    criterion: f64,
}

impl LmSystem {
    pub fn assemble<M: LmModel>(model: &M, batch: Batch<'_>, weights: &[f64]) -> Result<Self> {
        if batch.width != model.input_width() {
            return Err(Error::Dimension {
                expected: model.input_width(),
                got: batch.width,
            });
        }
        if weights.len() != batch.len() {
            return Err(Error::Dimension {
                expected: batch.len(),
                got: weights.len(),
            });
        }
        let (p, n) = (model.free_params().len(), batch.len());
        // J^T with one column per sample, rows scaled by sqrt(w)
        let mut jt = DMatrix::<f64>::zeros(p, n);
        let mut ew = DVector::<f64>::zeros(n);
        let mut criterion = 0.0;
        model.visit_gradients(batch, &mut |k, z, g| {
            let e = batch.targets[k] - z;
            let w = weights[k];
            criterion += w * e * e;
            let sw = w.sqrt();
            ew[k] = sw * e;
            for (c, gi) in jt.column_mut(k).iter_mut().zip(g) {
                *c = sw * gi;
            }
        });
        let jtwj = &jt * jt.transpose();
        let jtwe = &jt * &ew;
        Ok(Self {
            jtwj,
            jtwe,
            criterion: criterion / n as f64,
        })
    }

    /// Weighted criterion at the assembly point.
    pub fn criterion(&self) -> f64 {
        self.criterion
    }

    pub fn dim(&self) -> usize {
        self.jtwe.len()
    }

    /// Solves `(J^T W J + lambda * D) delta = J^T W e` where `D` is the diagonal of
    /// `J^T W J` (floored at a tiny fraction of its largest entry). `None` when the
    /// damped matrix is not positive definite.
    pub fn solve(&self, lambda: f64) -> Option<DVector<f64>> {
        let p = self.dim();
        if p == 0 {
            return Some(DVector::zeros(0));
        }
        if self.jtwe.iter().all(|v| *v == 0.0) {
            return Some(DVector::zeros(p));
        }
        let max_diag = (0..p).map(|i| self.jtwj[(i, i)]).fold(0.0, f64::max);
        let floor = (max_diag * 1e-12).max(f64::MIN_POSITIVE);
        let mut a = self.jtwj.clone();
        for i in 0..p {
            a[(i, i)] += lambda * self.jtwj[(i, i)].max(floor);
        }
        let chol = a.cholesky()?;
        let delta = chol.solve(&self.jtwe);
        delta.iter().all(|v| v.is_finite()).then_some(delta)
    }
}

/// Adds `delta` to the free parameters of a copy of `model`.
pub fn apply_step<M: LmModel>(model: &M, delta: &DVector<f64>) -> Result<M> {
    let mut theta = model.free_params();
    for (t, d) in theta.iter_mut().zip(delta.iter()) {
        *t += d;
    }
    let mut out = model.clone();
    out.set_free_params(&theta)?;
    Ok(out)
}

/// One damped step: returns the candidate network and its weighted criterion.
/// Fails with [`Error::LmBreakdown`] when the damped system cannot be solved.
pub fn lm_step<M: LmModel>(
    mlp: &M,
    batch: Batch<'_>,
    weights: &[f64],
    lambda: f64,
) -> Result<(M, f64)> {
    if !(lambda > 0.0) {
        return Err(Error::Config(format!("lambda must be > 0, got {lambda}")));
    }
    let system = LmSystem::assemble(mlp, batch, weights)?;
    let delta = system.solve(lambda).ok_or(Error::LmBreakdown)?;
    let cand = apply_step(mlp, &delta)?;
    let crit = weighted_criterion(&cand, batch, weights);
    Ok((cand, crit))
}

/// Damping schedule and stopping rule for one LM run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmSettings {
    pub max_iterations: usize,
    pub lambda_init: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    pub lambda_max: f64,
    pub convergence_tol: f64,
    pub robust: RobustConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Relative criterion decrease fell below the tolerance (or the criterion hit zero).
    Tolerance,
    /// No decrease even at `lambda_max`.
    Stalled,
    MaxIterations,
}

/// One accepted step: the criterion before and after, both under the step's weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub iteration: usize,
    pub lambda: f64,
    pub before: f64,
    pub after: f64,
}

#[derive(Debug, Clone)]
pub struct LmOutcome<M = Mlp> {
    pub model: M,
    /// Weighted criterion at the final point (weights from the final residuals).
    pub criterion: f64,
    /// Accepted plus rejected steps.
    pub iterations: usize,
    pub stop: StopReason,
    pub trace: Vec<TraceStep>,
}

impl<M> LmOutcome<M> {
    pub fn converged(&self) -> bool {
        self.stop != StopReason::MaxIterations
    }
}

/// Iteratively reweighted LM: residuals, robust weights, damped step; accept on a
/// strict criterion decrease (lambda shrinks), reject otherwise (lambda grows).
pub fn run_lm<M: LmModel>(start: M, batch: Batch<'_>, s: &LmSettings) -> Result<LmOutcome<M>> {
    let mut mlp = start;
    // unit weights until the warm-up ends or the plain fit converges
    let mut warm = s.robust.warmup_iterations > 0;
    let reweigh = |mlp: &M, warm: bool| {
        if warm {
            vec![1.0; batch.len()]
        } else {
            s.robust.weights(&residuals(mlp, batch))
        }
    };
    let mut weights = reweigh(&mlp, warm);
    let mut system = LmSystem::assemble(&mlp, batch, &weights)?;
    let mut lambda = s.lambda_init.min(s.lambda_max);
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut stop = StopReason::MaxIterations;

    if system.criterion() == 0.0 || system.dim() == 0 {
        let criterion = system.criterion();
        return Ok(LmOutcome {
            model: mlp,
            criterion,
            iterations,
            stop: StopReason::Tolerance,
            trace,
        });
    }

    while iterations < s.max_iterations {
        iterations += 1;
        let Some(delta) = system.solve(lambda) else {
            if lambda >= s.lambda_max {
                return Err(Error::LmBreakdown);
            }
            lambda = (lambda * s.lambda_up).min(s.lambda_max);
            continue;
        };
        let cand = apply_step(&mlp, &delta)?;
        let before = system.criterion();
        let after = weighted_criterion(&cand, batch, &weights);
        if after.is_finite() && after < before {
            trace.push(TraceStep {
                iteration: iterations,
                lambda,
                before,
                after,
            });
            mlp = cand;
            lambda = (lambda * s.lambda_down).max(f64::MIN_POSITIVE);
            let rel = (before - after) / before;
            let converged = rel < s.convergence_tol || after == 0.0;
            if warm && (converged || iterations >= s.robust.warmup_iterations) {
                warm = false;
                weights = reweigh(&mlp, warm);
                system = LmSystem::assemble(&mlp, batch, &weights)?;
                continue;
            }
            weights = reweigh(&mlp, warm);
            system = LmSystem::assemble(&mlp, batch, &weights)?;
            if converged || system.criterion() == 0.0 {
                stop = StopReason::Tolerance;
                break;
            }
        } else {
            if lambda >= s.lambda_max {
                stop = StopReason::Stalled;
                break;
            }
            lambda = (lambda * s.lambda_up).min(s.lambda_max);
        }
    }
    Ok(LmOutcome {
        criterion: system.criterion(),
        model: mlp,
        iterations,
        stop,
        trace,
    })
}
