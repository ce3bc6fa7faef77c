//! Independent oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qcnet_core::net::Mlp;
use qcnet_core::train::{Batch, LmModel};
use qcnet_core::Result;

pub const FD_STEP: f64 = 1e-6;

/// Scale floor for derivative comparisons. Central differences at step 1e-6 on outputs
/// near 0.5 carry about 1e-10 of rounding error, so entries below 1e-4 are compared
/// in absolute terms (1e-9 at a 1e-5 tolerance).
pub const FD_FLOOR: f64 = 1e-4;

/// Relative difference with a floor on the scale: entries whose magnitude is below
/// `floor` are compared absolutely against `floor * tol`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Random network with some parameters masked.
pub fn random_net(n0: usize, n1: usize, seed: u64, mask_prob: f64) -> Mlp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = n1 * n0 + 2 * n1 + 1;
    let params: Vec<f64> = (0..p).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let mask: Vec<bool> = (0..p).map(|_| !rng.gen_bool(mask_prob)).collect();
    Mlp::from_flat(n0, n1, params, mask, Default::default()).unwrap()
}

pub fn random_inputs(n0: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    (0..n)
        .map(|_| (0..n0).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .collect()
}

/// Central differences of the output with respect to every active parameter.
pub fn fd_jacobian(m: &Mlp, inputs: &[Vec<f64>]) -> DMatrix<f64> {
    let active = m.active_indices();
    let mut jac = DMatrix::zeros(inputs.len(), active.len());
    for (c, _) in active.iter().enumerate() {
        let theta = m.active_params();
        let mut plus = m.clone();
        let mut minus = m.clone();
        let mut tp = theta.clone();
        let mut tm = theta.clone();
        tp[c] += FD_STEP;
        tm[c] -= FD_STEP;
        plus.set_active_params(&tp).unwrap();
        minus.set_active_params(&tm).unwrap();
        for (k, x) in inputs.iter().enumerate() {
            jac[(k, c)] = (plus.forward(x).unwrap() - minus.forward(x).unwrap()) / (2.0 * FD_STEP);
        }
    }
    jac
}

pub fn fd_sensitivity(m: &Mlp, x: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|j| {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[j] += FD_STEP;
            xm[j] -= FD_STEP;
            (m.forward(&xp).unwrap() - m.forward(&xm).unwrap()) / (2.0 * FD_STEP)
        })
        .collect()
}

/// `y = theta . [x, 1]`: linear in its parameters, so least squares has a closed form.
#[derive(Debug, Clone)]
pub struct Affine {
    pub theta: Vec<f64>,
}

impl LmModel for Affine {
    fn input_width(&self) -> usize {
        self.theta.len() - 1
    }

    fn free_params(&self) -> Vec<f64> {
        self.theta.clone()
    }

    fn set_free_params(&mut self, values: &[f64]) -> Result<()> {
        self.theta = values.to_vec();
        Ok(())
    }

    fn output(&self, x: &[f64]) -> f64 {
        let (w, b) = self.theta.split_at(x.len());
        w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b[0]
    }

    fn visit_gradients(&self, batch: Batch<'_>, visit: &mut dyn FnMut(usize, f64, &[f64])) {
        let mut g = vec![1.0; self.theta.len()];
        for k in 0..batch.len() {
            let x = batch.row(k);
            g[..x.len()].copy_from_slice(x);
            visit(k, self.output(x), &g);
        }
    }
}

/// Mean squared residual of the ordinary least-squares fit of `y` on `[x, 1]`,
/// solved by SVD.
pub fn ols_mse(inputs: &[f64], targets: &[f64], width: usize) -> f64 {
    let n = targets.len();
    let a = DMatrix::from_fn(n, width + 1, |k, j| {
        if j < width {
            inputs[k * width + j]
        } else {
            1.0
        }
    });
    let y = DVector::from_column_slice(targets);
    let theta = a.clone().svd(true, true).solve(&y, 1e-14).unwrap();
    let r = &y - &a * theta;
    r.norm_squared() / n as f64
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

/// Checks every controllable factor's interval in `limits` against the threshold
/// crossing of the true logit, which is linear in each factor of a linear spec.
/// Returns one message per mismatch.
pub fn limit_crossing_errors(
    spec: &qcnet_core::synth::SyntheticProcessSpec,
    ctx: &qcnet_core::data::FactorValues,
    limits: &qcnet_core::doe::ControlLimits,
    threshold: f64,
) -> Vec<String> {
    use qcnet_core::data::{FactorValue, Role};
    let target = (threshold / (1.0 - threshold)).ln();
    let res = limits.grid_resolution;
    let mut errors = Vec::new();
    for f in spec.schema.with_role(Role::Controllable) {
        let (lo, hi) = f.range().unwrap();
        let step = (hi - lo) / (res - 1) as f64;
        let at = |x: f64| {
            let mut v = ctx.clone();
            v.insert(f.name.clone(), FactorValue::Number(x));
            qcnet_core::synth::true_logit(spec, &v).unwrap()
        };
        let (a, b) = (at(lo), at(hi));
        let cross = lo + (target - a) / (b - a) * (hi - lo);
        let got = limits.limits[&f.name]
            .as_ref()
            .map(|i| (i.lo.as_number().unwrap(), i.hi.as_number().unwrap()));
        let ok = match (a < target, b < target, got) {
            (false, false, None) => true,
            (true, true, Some((l, h))) => l == lo && h == hi,
            (true, false, Some((l, h))) => l == lo && h <= cross + 1e-9 && cross - h <= step + 1e-9,
            (false, true, Some((l, h))) => h == hi && l >= cross - 1e-9 && l - cross <= step + 1e-9,
            // a crossing within one step of an end may fall on either side of the grid
            _ => (cross - lo).abs() < step || (hi - cross).abs() < step,
        };
        if !ok {
            errors.push(format!(
                "{} at threshold {threshold}: got {got:?}, crossing {cross}",
                f.name
            ));
        }
    }
    errors
}
