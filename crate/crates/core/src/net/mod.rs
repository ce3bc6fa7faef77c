//! One-hidden-layer perceptron with tanh hidden units and a logistic output:
//!
//! `z = sigmoid( sum_i w2[i] * tanh( sum_h w1[i][h] * x[h] + b1[i] ) + b )`
//!
//! Parameters live in one flat vector laid out as
//! `[w1 (n1 x n0, row-major) | b1 (n1) | w2 (n1) | b]`, with a parallel activity mask.
//! Inactive (pruned) parameters are always exactly zero.

mod file;

use std::fmt;

use nalgebra::DMatrix;

use crate::data::{EncodedDataset, Encoding, FactorValues};
use crate::error::{Error, Result};

pub use file::{ModelFile, ParamMask, FORMAT_VERSION};

#[inline]
pub fn sigmoid(a: f64) -> f64 {
    1.0 / (1.0 + (-a).exp())
}

/// Identifies a parameter by its role in the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamId {
    HiddenWeight { neuron: usize, input: usize },
    HiddenBias { neuron: usize },
    OutputWeight { neuron: usize },
    OutputBias,
}

impl fmt::Display for ParamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamId::HiddenWeight { neuron, input } => write!(f, "w1[{neuron}][{input}]"),
            ParamId::HiddenBias { neuron } => write!(f, "b1[{neuron}]"),
            ParamId::OutputWeight { neuron } => write!(f, "w2[{neuron}]"),
            ParamId::OutputBias => f.write_str("b"),
        }
    }
}

/// Deployment metadata carried alongside the weights.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelMeta {
    pub defect_name: String,
    pub schema_fingerprint: String,
    pub encoding: Option<Encoding>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    n0: usize,
    n1: usize,
    params: Vec<f64>,
    mask: Vec<bool>,
    meta: ModelMeta,
}

impl Mlp {
    /// All-zero network with every parameter active.
    pub fn zeros(n0: usize, n1: usize) -> Result<Self> {
        if n0 == 0 || n1 == 0 {
            return Err(Error::Model(format!("need n0, n1 >= 1 (got {n0}, {n1})")));
        }
        let p = n1 * n0 + 2 * n1 + 1;
        Ok(Self {
            n0,
            n1,
            params: vec![0.0; p],
            mask: vec![true; p],
            meta: ModelMeta::default(),
        })
    }

    /// Network from explicit weights, all active. `hidden_weights` is `n1 x n0` row-major.
    pub fn from_parts(
        n0: usize,
        n1: usize,
        hidden_weights: &[f64],
        hidden_biases: &[f64],
        output_weights: &[f64],
        output_bias: f64,
    ) -> Result<Self> {
        let mut m = Self::zeros(n0, n1)?;
        let check = |want: usize, got: usize| {
            if want == got {
                Ok(())
            } else {
                Err(Error::Dimension {
                    expected: want,
                    got,
                })
            }
        };
        check(n1 * n0, hidden_weights.len())?;
        check(n1, hidden_biases.len())?;
        check(n1, output_weights.len())?;
        let all = hidden_weights
            .iter()
            .chain(hidden_biases)
            .chain(output_weights)
            .chain(std::iter::once(&output_bias));
        for (slot, v) in m.params.iter_mut().zip(all) {
            if !v.is_finite() {
                return Err(Error::Model("non-finite parameter".into()));
            }
            *slot = *v;
        }
        Ok(m)
    }

    /// Flat parameters and mask; masked entries are forced to zero.
    pub fn from_flat(
        n0: usize,
        n1: usize,
        params: Vec<f64>,
        mask: Vec<bool>,
        meta: ModelMeta,
    ) -> Result<Self> {
        let mut m = Self::zeros(n0, n1)?;
        if params.len() != m.params.len() || mask.len() != m.params.len() {
            return Err(Error::Dimension {
                expected: m.params.len(),
                got: params.len().min(mask.len()),
            });
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::Model("non-finite parameter".into()));
        }
        m.params = params
            .into_iter()
            .zip(&mask)
            .map(|(v, &on)| if on { v } else { 0.0 })
            .collect();
        m.mask = mask;
        m.meta = meta;
        if let Some(enc) = &m.meta.encoding {
            if enc.width() != n0 {
                return Err(Error::Dimension {
                    expected: n0,
                    got: enc.width(),
                });
            }
        }
        Ok(m)
    }

    pub fn with_meta(mut self, meta: ModelMeta) -> Result<Self> {
        if let Some(enc) = &meta.encoding {
            if enc.width() != self.n0 {
                return Err(Error::Dimension {
                    expected: self.n0,
                    got: enc.width(),
                });
            }
        }
        self.meta = meta;
        Ok(self)
    }

    pub fn n0(&self) -> usize {
        self.n0
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn meta(&self) -> &ModelMeta {
        &self.meta
    }

    pub fn encoding(&self) -> Option<&Encoding> {
        self.meta.encoding.as_ref()
    }

    pub fn defect_name(&self) -> &str {
        &self.meta.defect_name
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn is_active(&self, idx: usize) -> bool {
        self.mask[idx]
    }

    pub fn active_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Flat indices of active parameters, ascending.
    pub fn active_indices(&self) -> Vec<usize> {
        (0..self.params.len()).filter(|&i| self.mask[i]).collect()
    }

    pub fn active_params(&self) -> Vec<f64> {
        self.active_indices()
            .into_iter()
            .map(|i| self.params[i])
            .collect()
    }

    /// Overwrites active parameters in ascending flat order.
    pub fn set_active_params(&mut self, values: &[f64]) -> Result<()> {
        let idx = self.active_indices();
        if idx.len() != values.len() {
            return Err(Error::Dimension {
                expected: idx.len(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Model("non-finite parameter".into()));
        }
        for (i, v) in idx.into_iter().zip(values) {
            self.params[i] = *v;
        }
        Ok(())
    }

    /// Sets one active parameter. Masked parameters cannot be written.
    pub fn set_param(&mut self, id: ParamId, value: f64) -> Result<()> {
        let i = self.index_of(id);
        if !self.mask[i] {
            return Err(Error::Model(format!("parameter {id} is pruned")));
        }
        if !value.is_finite() {
            return Err(Error::Model("non-finite parameter".into()));
        }
        self.params[i] = value;
        Ok(())
    }

    /// Prunes a parameter: it becomes inactive and zero, permanently.
    pub fn deactivate(&mut self, idx: usize) {
        self.mask[idx] = false;
        self.params[idx] = 0.0;
    }

    pub fn param(&self, id: ParamId) -> f64 {
        self.params[self.index_of(id)]
    }

    pub fn index_of(&self, id: ParamId) -> usize {
        let (n0, n1) = (self.n0, self.n1);
        match id {
            ParamId::HiddenWeight { neuron, input } => neuron * n0 + input,
            ParamId::HiddenBias { neuron } => n1 * n0 + neuron,
            ParamId::OutputWeight { neuron } => n1 * n0 + n1 + neuron,
            ParamId::OutputBias => n1 * n0 + 2 * n1,
        }
    }

    pub fn param_id(&self, idx: usize) -> ParamId {
        let (n0, n1) = (self.n0, self.n1);
        let w = n1 * n0;
        if idx < w {
            ParamId::HiddenWeight {
                neuron: idx / n0,
                input: idx % n0,
            }
        } else if idx < w + n1 {
            ParamId::HiddenBias { neuron: idx - w }
        } else if idx < w + 2 * n1 {
            ParamId::OutputWeight {
                neuron: idx - w - n1,
            }
        } else {
            ParamId::OutputBias
        }
    }

    #[inline]
    pub(crate) fn hidden_weights(&self) -> &[f64] {
        &self.params[..self.n1 * self.n0]
    }

    #[inline]
    pub(crate) fn hidden_biases(&self) -> &[f64] {
        let w = self.n1 * self.n0;
        &self.params[w..w + self.n1]
    }

    #[inline]
    pub(crate) fn output_weights(&self) -> &[f64] {
        let w = self.n1 * self.n0 + self.n1;
        &self.params[w..w + self.n1]
    }

    #[inline]
    pub(crate) fn output_bias(&self) -> f64 {
        self.params[self.params.len() - 1]
    }

    /// Hidden pre-activations into `u`; returns the output pre-activation.
    #[inline]
    pub(crate) fn preactivations(&self, x: &[f64], u: &mut [f64], h: &mut [f64]) -> f64 {
        let n0 = self.n0;
        let w1 = self.hidden_weights();
        let b1 = self.hidden_biases();
        let w2 = self.output_weights();
        let mut a = self.output_bias();
        for i in 0..self.n1 {
            let row = &w1[i * n0..(i + 1) * n0];
            let s: f64 = row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + b1[i];
            u[i] = s;
            h[i] = s.tanh();
            a += w2[i] * h[i];
        }
        a
    }

    #[inline]
    pub(crate) fn eval(&self, x: &[f64]) -> f64 {
        let n0 = self.n0;
        let w1 = self.hidden_weights();
        let b1 = self.hidden_biases();
        let w2 = self.output_weights();
        let mut a = self.output_bias();
        for i in 0..self.n1 {
            if w2[i] == 0.0 {
                continue;
            }
            let row = &w1[i * n0..(i + 1) * n0];
            let s: f64 = row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + b1[i];
            a += w2[i] * s.tanh();
        }
        sigmoid(a)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n0 {
            return Err(Error::Dimension {
                expected: self.n0,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Model("non-finite input".into()));
        }
        Ok(())
    }

    /// Probability of defect occurrence for one encoded input vector.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.eval(x))
    }

    /// Forward pass over every row of a dataset.
    pub fn predict(&self, data: &EncodedDataset) -> Result<Vec<f64>> {
        if data.n_inputs() != self.n0 {
            return Err(Error::Dimension {
                expected: self.n0,
                got: data.n_inputs(),
            });
        }
        Ok(data.rows().map(|x| self.eval(x)).collect())
    }

    /// Forward pass from natural-unit factor settings, using the stored encoding.
    pub fn predict_values(&self, values: &FactorValues) -> Result<f64> {
        let enc = self
            .encoding()
            .ok_or_else(|| Error::Model("model has no stored encoding".into()))?;
        Ok(self.eval(&enc.encode_values(values)?))
    }

    /// Gradient of the output with respect to every parameter (full layout) at `x`,
    /// written into `grad`. Returns the output.
    pub(crate) fn full_gradient(
        &self,
        x: &[f64],
        u: &mut [f64],
        h: &mut [f64],
        grad: &mut [f64],
    ) -> f64 {
        let (n0, n1) = (self.n0, self.n1);
        let z = sigmoid(self.preactivations(x, u, h));
        let d = z * (1.0 - z);
        let w2 = self.output_weights();
        let base_b1 = n1 * n0;
        let base_w2 = base_b1 + n1;
        for i in 0..n1 {
            let g = d * w2[i] * (1.0 - h[i] * h[i]);
            let row = &mut grad[i * n0..(i + 1) * n0];
            for (r, xv) in row.iter_mut().zip(x) {
                *r = g * xv;
            }
            grad[base_b1 + i] = g;
            grad[base_w2 + i] = d * h[i];
        }
        grad[base_w2 + n1] = d;
        z
    }

    /// `N x P` matrix of output derivatives with respect to the active parameters
    /// (columns in ascending flat order).
    pub fn jacobian_wrt_params(&self, inputs: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        if inputs.is_empty() {
            return Err(Error::Model("empty batch".into()));
        }
        for x in inputs {
            self.check_input(x)?;
        }
        let active = self.active_indices();
        let mut jac = DMatrix::zeros(inputs.len(), active.len());
        let mut u = vec![0.0; self.n1];
        let mut h = vec![0.0; self.n1];
        let mut g = vec![0.0; self.params.len()];
        for (k, x) in inputs.iter().enumerate() {
            self.full_gradient(x, &mut u, &mut h, &mut g);
            for (c, &i) in active.iter().enumerate() {
                jac[(k, c)] = g[i];
            }
        }
        Ok(jac)
    }

    /// `dz/dx` at `x`.
    pub fn sensitivity_wrt_inputs(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let n0 = self.n0;
        let mut u = vec![0.0; self.n1];
        let mut h = vec![0.0; self.n1];
        let z = sigmoid(self.preactivations(x, &mut u, &mut h));
        let d = z * (1.0 - z);
        let w1 = self.hidden_weights();
        let w2 = self.output_weights();
        let mut out = vec![0.0; n0];
        for i in 0..self.n1 {
            let g = d * w2[i] * (1.0 - h[i] * h[i]);
            for (o, w) in out.iter_mut().zip(&w1[i * n0..(i + 1) * n0]) {
                *o += g * w;
            }
        }
        Ok(out)
    }

    /// A hidden neuron is alive while its output weight and at least one input weight
    /// are active.
    pub fn is_neuron_alive(&self, neuron: usize) -> bool {
        self.mask[self.index_of(ParamId::OutputWeight { neuron })]
            && self.mask[neuron * self.n0..(neuron + 1) * self.n0]
                .iter()
                .any(|&m| m)
    }

    pub fn alive_neurons(&self) -> Vec<usize> {
        (0..self.n1).filter(|&i| self.is_neuron_alive(i)).collect()
    }

    /// An input column is live when some alive neuron still has an active weight on it.
    pub fn is_input_live(&self, input: usize) -> bool {
        (0..self.n1).any(|i| {
            self.is_neuron_alive(i)
                && self.mask[self.index_of(ParamId::HiddenWeight { neuron: i, input })]
        })
    }

    /// Factors whose every encoded column is dead. Empty when the model has no encoding.
    pub fn eliminated_factors(&self) -> Vec<String> {
        let Some(enc) = self.encoding() else {
            return Vec::new();
        };
        enc.factors()
            .into_iter()
            .filter(|f| {
                enc.columns_of(f)
                    .into_iter()
                    .all(|c| !self.is_input_live(c))
            })
            .map(str::to_string)
            .collect()
    }

    pub fn uses_factor(&self, factor: &str) -> bool {
        match self.encoding() {
            Some(enc) => {
                let cols = enc.columns_of(factor);
                !cols.is_empty() && cols.into_iter().any(|c| self.is_input_live(c))
            }
            None => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hand_net() -> Mlp {
        Mlp::from_parts(
            2,
            2,
            &[0.3, -0.7, 1.1, 0.25],
            &[0.1, -0.4],
            &[1.5, -2.0],
            0.2,
        )
        .unwrap()
    }

    #[test]
    fn zero_network_gives_half() {
        let m = Mlp::zeros(3, 4).unwrap();
        assert_eq!(m.forward(&[1.0, -5.0, 2.0]).unwrap(), 0.5);
    }

    #[test]
    fn dead_hidden_unit() {
        let m = Mlp::from_parts(1, 1, &[0.0], &[0.0], &[5.0], 0.0).unwrap();
        assert_eq!(m.forward(&[3.0]).unwrap(), 0.5);
    }

    #[test]
    fn matches_hand_evaluation() {
        // x = (0.5, -1.0)
        // u0 = 0.3*0.5 + -0.7*-1.0 + 0.1 = 0.95 ; u1 = 1.1*0.5 + 0.25*-1 - 0.4 = -0.1
        // a = 1.5*tanh(0.95) - 2.0*tanh(-0.1) + 0.2
        let a: f64 = 1.5 * 0.95f64.tanh() - 2.0 * (-0.1f64).tanh() + 0.2;
        let want = 1.0 / (1.0 + (-a).exp());
        let got = hand_net().forward(&[0.5, -1.0]).unwrap();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        // tanh(0.95) = 0.7397830512740042, tanh(0.1) = 0.09966799462495582
        let a2 = 1.5 * 0.739_783_051_274_004_2 + 2.0 * 0.099_667_994_624_955_82 + 0.2;
        assert!((got - 1.0 / (1.0 + f64::exp(-a2))).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch() {
        assert!(matches!(
            hand_net().forward(&[1.0]),
            Err(Error::Dimension {
                expected: 2,
                got: 1
            })
        ));
    }

    #[test]
    fn zero_network_bias_derivative() {
        let m = Mlp::zeros(2, 3).unwrap();
        let j = m.jacobian_wrt_params(&[vec![0.3, 0.4]]).unwrap();
        assert_eq!(j.ncols(), m.param_count());
        assert_eq!(j[(0, j.ncols() - 1)], 0.25);
    }

    #[test]
    fn masked_parameter_has_no_column() {
        let mut m = hand_net();
        m.deactivate(m.index_of(ParamId::HiddenWeight {
            neuron: 1,
            input: 0,
        }));
        let j = m.jacobian_wrt_params(&[vec![0.3, 0.4]]).unwrap();
        assert_eq!(j.ncols(), m.param_count() - 1);
        assert_eq!(
            m.param(ParamId::HiddenWeight {
                neuron: 1,
                input: 0
            }),
            0.0
        );
        assert!(m
            .set_param(
                ParamId::HiddenWeight {
                    neuron: 1,
                    input: 0
                },
                3.0
            )
            .is_err());
    }

    #[test]
    fn zero_hidden_weights_zero_sensitivity() {
        let m = Mlp::from_parts(2, 2, &[0.0; 4], &[0.3, 0.1], &[1.0, 2.0], 0.5).unwrap();
        assert_eq!(
            m.sensitivity_wrt_inputs(&[1.0, 2.0]).unwrap(),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn pruned_input_has_exactly_zero_sensitivity() {
        let mut m = hand_net();
        for i in 0..2 {
            m.deactivate(m.index_of(ParamId::HiddenWeight {
                neuron: i,
                input: 1,
            }));
        }
        let s = m.sensitivity_wrt_inputs(&[0.4, -2.0]).unwrap();
        assert_eq!(s[1], 0.0);
        assert!(s[0] != 0.0);
        assert!(!m.is_input_live(1));
    }

    #[test]
    fn param_ids_round_trip() {
        let m = Mlp::zeros(3, 2).unwrap();
        for i in 0..m.param_count() {
            assert_eq!(m.index_of(m.param_id(i)), i);
        }
    }

    fn finite_diff_param(m: &Mlp, x: &[f64], idx: usize, step: f64) -> f64 {
        let mut plus = m.clone();
        plus.params[idx] += step;
        let mut minus = m.clone();
        minus.params[idx] -= step;
        (plus.eval(x) - minus.eval(x)) / (2.0 * step)
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
    }

    proptest! {
        #[test]
        fn output_in_unit_interval(
            w in proptest::collection::vec(-3.0f64..3.0, 3 * 4 + 2 * 4 + 1),
            x in proptest::collection::vec(-5.0f64..5.0, 3)
        ) {
            let m = Mlp::from_flat(3, 4, w, vec![true; 21], ModelMeta::default()).unwrap();
            let z = m.forward(&x).unwrap();
            prop_assert!(z > 0.0 && z < 1.0);
            prop_assert_eq!(z, m.forward(&x).unwrap());
        }

        #[test]
        fn jacobian_matches_finite_differences(
            w in proptest::collection::vec(-2.0f64..2.0, 2 * 3 + 2 * 3 + 1),
            x in proptest::collection::vec(-2.0f64..2.0, 2)
        ) {
            let m = Mlp::from_flat(2, 3, w, vec![true; 13], ModelMeta::default()).unwrap();
            let j = m.jacobian_wrt_params(std::slice::from_ref(&x)).unwrap();
            for p in 0..m.param_count() {
                let fd = finite_diff_param(&m, &x, p, 1e-6);
                prop_assert!(rel_err(j[(0, p)], fd) < 1e-5, "param {} analytic {} fd {}", p, j[(0, p)], fd);
            }
        }

        #[test]
        fn masked_values_stay_zero(
            w in proptest::collection::vec(-2.0f64..2.0, 13),
            mask in proptest::collection::vec(any::<bool>(), 13),
            newvals in proptest::collection::vec(-2.0f64..2.0, 13)
        ) {
            let mut m = Mlp::from_flat(2, 3, w, mask.clone(), ModelMeta::default()).unwrap();
            let k = m.active_count();
            m.set_active_params(&newvals[..k]).unwrap();
            for (i, on) in mask.iter().enumerate() {
                if !on { prop_assert_eq!(m.params()[i], 0.0); }
            }
        }
    }
}
