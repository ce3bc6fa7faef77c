//! Versioned JSON model files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Mlp, ModelMeta};
use crate::data::{Column, Encoding, FactorSchema, NormParam};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamMask {
    pub hidden_weights: Vec<bool>,
    pub hidden_biases: Vec<bool>,
    pub output_weights: Vec<bool>,
    pub output_bias: bool,
}

/// On-disk form of an [`Mlp`]. `hidden_weights` is `n1 x n0` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub defect_name: String,
    pub schema_fingerprint: String,
    pub n0: usize,
    pub n1: usize,
    pub hidden_weights: Vec<f64>,
    pub hidden_biases: Vec<f64>,
    pub output_weights: Vec<f64>,
    pub output_bias: f64,
    pub mask: ParamMask,
    pub norm_params: Vec<NormParam>,
    pub column_map: Vec<Column>,
}

impl From<&Mlp> for ModelFile {
    fn from(m: &Mlp) -> Self {
        let (w, b) = (m.n1 * m.n0, m.n1);
        let p = &m.params;
        let k = &m.mask;
        let enc = m.meta.encoding.as_ref();
        ModelFile {
            format_version: FORMAT_VERSION,
            defect_name: m.meta.defect_name.clone(),
            schema_fingerprint: m.meta.schema_fingerprint.clone(),
            n0: m.n0,
            n1: m.n1,
            hidden_weights: p[..w].to_vec(),
            hidden_biases: p[w..w + b].to_vec(),
            output_weights: p[w + b..w + 2 * b].to_vec(),
            output_bias: p[w + 2 * b],
            mask: ParamMask {
                hidden_weights: k[..w].to_vec(),
                hidden_biases: k[w..w + b].to_vec(),
                output_weights: k[w + b..w + 2 * b].to_vec(),
                output_bias: k[w + 2 * b],
            },
            norm_params: enc.map(|e| e.norm_params.clone()).unwrap_or_default(),
            column_map: enc.map(|e| e.columns.clone()).unwrap_or_default(),
        }
    }
}

impl TryFrom<ModelFile> for Mlp {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        if f.format_version != FORMAT_VERSION {
            return Err(Error::Model(format!(
                "unsupported format_version {} (expected {FORMAT_VERSION})",
                f.format_version
            )));
        }
        let params: Vec<f64> = f
            .hidden_weights
            .iter()
            .chain(&f.hidden_biases)
            .chain(&f.output_weights)
            .chain(std::iter::once(&f.output_bias))
            .copied()
            .collect();
        let mask: Vec<bool> = f
            .mask
            .hidden_weights
            .iter()
            .chain(&f.mask.hidden_biases)
            .chain(&f.mask.output_weights)
            .chain(std::iter::once(&f.mask.output_bias))
            .copied()
            .collect();
        if f.hidden_weights.len() != f.n1 * f.n0
            || f.hidden_biases.len() != f.n1
            || f.output_weights.len() != f.n1
            || f.mask.hidden_weights.len() != f.hidden_weights.len()
            || f.mask.hidden_biases.len() != f.n1
            || f.mask.output_weights.len() != f.n1
        {
            return Err(Error::Model("weight arrays do not match n0/n1".into()));
        }
        if params.iter().zip(&mask).any(|(v, on)| !on && *v != 0.0) {
            return Err(Error::Model("masked parameter with non-zero value".into()));
        }
        let encoding = if f.column_map.is_empty() {
            None
        } else {
            let continuous = f.column_map.iter().filter(|c| c.state.is_none()).count();
            if continuous != f.norm_params.len() {
                return Err(Error::Model("norm_params do not match column_map".into()));
            }
            Some(Encoding {
                columns: f.column_map,
                norm_params: f.norm_params,
            })
        };
        let meta = ModelMeta {
            defect_name: f.defect_name,
            schema_fingerprint: f.schema_fingerprint,
            encoding,
        };
        Mlp::from_flat(f.n0, f.n1, params, mask, meta)
    }
}

impl Mlp {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ModelFile::from(self)).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        Mlp::try_from(file)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Errors unless the model was trained against `schema`.
    pub fn check_schema(&self, schema: &FactorSchema) -> Result<()> {
        let fp = schema.fingerprint();
        if self.meta.schema_fingerprint != fp {
            return Err(Error::Model(format!(
                "schema fingerprint mismatch: model {}, schema {fp}",
                self.meta.schema_fingerprint
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::ParamId;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn save_load_is_bit_exact(
            w in proptest::collection::vec(proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO, 3 * 2 + 2 * 2 + 1),
            mask in proptest::collection::vec(any::<bool>(), 11)
        ) {
            let m = Mlp::from_flat(3, 2, w, mask, ModelMeta { defect_name: "stains".into(), schema_fingerprint: "ab".into(), encoding: None }).unwrap();
            let back = Mlp::from_json(&m.to_json()).unwrap();
            prop_assert_eq!(back.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            m.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(back.mask(), m.mask());
            prop_assert_eq!(back.to_json(), m.to_json());
        }
    }

    #[test]
    fn rejects_nonzero_masked_value() {
        let mut m = Mlp::from_parts(1, 1, &[0.5], &[0.1], &[1.0], 0.0).unwrap();
        m.deactivate(m.index_of(ParamId::HiddenBias { neuron: 0 }));
        let mut file = ModelFile::from(&m);
        file.hidden_biases[0] = 0.3;
        assert!(Mlp::try_from(file).is_err());
    }

    #[test]
    fn rejects_other_versions() {
        let m = Mlp::zeros(1, 1).unwrap();
        let mut file = ModelFile::from(&m);
        file.format_version = 99;
        assert!(Mlp::try_from(file).is_err());
    }
}
