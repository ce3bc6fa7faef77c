//! Numeric encoding of factor settings: one-hot groups for discrete factors and
//! standardized columns for continuous ones.

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use super::record::ProductionRecord;
use super::schema::{FactorKind, FactorSchema, FactorValue, FactorValues};
use crate::error::{Error, Result};

/// Where an encoded column comes from: a continuous factor (`state == None`) or one
/// state of a discrete factor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub factor: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormParam {
    pub factor: String,
    pub mean: f64,
    pub std: f64,
}

/// Column layout plus standardization constants. Maps natural-unit settings to network
/// inputs and back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoding {
    pub columns: Vec<Column>,
    /// One entry per continuous factor, in column order.
    pub norm_params: Vec<NormParam>,
}

pub enum NormSource<'a> {
    /// Fit mean and standard deviation on the records being encoded.
    Fit,
    /// Reuse constants fitted elsewhere (normally on the identification set).
    Params(&'a [NormParam]),
}

fn column_layout(schema: &FactorSchema) -> Vec<Column> {
    let mut cols = Vec::new();
    for f in &schema.factors {
        match &f.kind {
            FactorKind::Continuous { .. } => cols.push(Column {
                factor: f.name.clone(),
                state: None,
            }),
            FactorKind::Discrete { states } => cols.extend(states.iter().map(|s| Column {
                factor: f.name.clone(),
                state: Some(s.clone()),
            })),
        }
    }
    cols
}

fn fit_norm(records: &[ProductionRecord], schema: &FactorSchema) -> Result<Vec<NormParam>> {
    if records.is_empty() {
        return Err(Error::Config(
            "cannot fit normalization on an empty record set".into(),
        ));
    }
    let n = records.len() as f64;
    let mut out = Vec::new();
    for f in schema.factors.iter().filter(|f| f.is_continuous()) {
        let vals = records
            .iter()
            .map(|r| number_of(r.factor_values.get(&f.name), &f.name))
            .collect::<Result<Vec<f64>>>()?;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        if !(std > 1e-12 * mean.abs().max(1.0)) {
            return Err(Error::ZeroVariance(f.name.clone()));
        }
        out.push(NormParam {
            factor: f.name.clone(),
            mean,
            std,
        });
    }
    Ok(out)
}

fn number_of(v: Option<&FactorValue>, factor: &str) -> Result<f64> {
    match v {
        Some(FactorValue::Number(x)) => Ok(*x),
        Some(FactorValue::Level(s)) => Err(Error::InvalidValue {
            factor: factor.to_string(),
            message: format!("expected a number, got `{s}`"),
        }),
        None => Err(Error::MissingValue(factor.to_string())),
    }
}

impl Encoding {
    pub fn new(schema: &FactorSchema, norm_params: Vec<NormParam>) -> Result<Self> {
        let columns = column_layout(schema);
        let continuous: Vec<&str> = schema
            .factors
            .iter()
            .filter(|f| f.is_continuous())
            .map(|f| f.name.as_str())
            .collect();
        if continuous.len() != norm_params.len()
            || continuous
                .iter()
                .zip(&norm_params)
                .any(|(a, p)| *a != p.factor)
        {
            return Err(Error::Config(
                "normalization constants do not match the schema's continuous factors".into(),
            ));
        }
        if let Some(p) = norm_params
            .iter()
            .find(|p| !(p.std > 0.0) || !p.mean.is_finite())
        {
            return Err(Error::ZeroVariance(p.factor.clone()));
        }
        Ok(Self {
            columns,
            norm_params,
        })
    }

    /// Fits constants on `records`.
    pub fn fit(records: &[ProductionRecord], schema: &FactorSchema) -> Result<Self> {
        Self::new(schema, fit_norm(records, schema)?)
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    fn norm_for(&self, factor: &str) -> Option<&NormParam> {
        self.norm_params.iter().find(|p| p.factor == factor)
    }

    /// Names of factors in column order, each once.
    pub fn factors(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for c in &self.columns {
            if out.last() != Some(&c.factor.as_str()) {
                out.push(&c.factor);
            }
        }
        out
    }

    /// Column indices belonging to `factor`.
    pub fn columns_of(&self, factor: &str) -> Vec<usize> {
        self.columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.factor == factor)
            .map(|(i, _)| i)
            .collect()
    }

    /// Encodes one full assignment into `out` (length [`Encoding::width`]).
    pub fn encode_into(&self, values: &FactorValues, out: &mut [f64]) -> Result<()> {
        if out.len() != self.columns.len() {
            return Err(Error::Dimension {
                expected: self.columns.len(),
                got: out.len(),
            });
        }
        for (slot, col) in out.iter_mut().zip(&self.columns) {
            let v = values
                .get(&col.factor)
                .ok_or_else(|| Error::MissingValue(col.factor.clone()))?;
            *slot = match &col.state {
                None => {
                    let x = number_of(Some(v), &col.factor)?;
                    let p = self
                        .norm_for(&col.factor)
                        .expect("norm for continuous column");
                    (x - p.mean) / p.std
                }
                Some(state) => {
                    let label = match v {
                        FactorValue::Level(s) => s.clone(),
                        FactorValue::Number(x) => x.to_string(),
                    };
                    if label == *state {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
        }
        // every one-hot group must have exactly one hot column
        for f in self.factors() {
            let cols = self.columns_of(f);
            if self.columns[cols[0]].state.is_some() && cols.iter().all(|&i| out[i] == 0.0) {
                return Err(Error::InvalidValue {
                    factor: f.to_string(),
                    message: format!("unknown state `{}`", values[f]),
                });
            }
        }
        Ok(())
    }

    pub fn encode_values(&self, values: &FactorValues) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.columns.len()];
        self.encode_into(values, &mut out)?;
        Ok(out)
    }

    /// Inverse of [`Encoding::encode_values`] for rows it produced.
    pub fn decode_row(&self, row: &[f64]) -> FactorValues {
        let mut out = FactorValues::new();
        for (i, col) in self.columns.iter().enumerate() {
            match &col.state {
                None => {
                    let p = self
                        .norm_for(&col.factor)
                        .expect("norm for continuous column");
                    out.insert(
                        col.factor.clone(),
                        FactorValue::Number(row[i] * p.std + p.mean),
                    );
                }
                Some(state) => {
                    if row[i] > 0.5 {
                        out.insert(col.factor.clone(), FactorValue::Level(state.clone()));
                    }
                }
            }
        }
        out
    }
}

/// Network-ready matrix for one defect type.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedDataset {
    pub defect_name: String,
    /// Fingerprint of the schema the rows were encoded against; empty when unknown.
    pub schema_fingerprint: String,
    pub encoding: Encoding,
    /// Row-major, `len() == targets.len() * encoding.width()`.
    pub inputs: Vec<f64>,
    /// 0.0 or 1.0.
    pub targets: Vec<f64>,
    pub record_ids: Vec<String>,
    pub timestamps: Vec<NaiveDateTime>,
}

impl EncodedDataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn n_inputs(&self) -> usize {
        self.encoding.width()
    }

    pub fn row(&self, k: usize) -> &[f64] {
        let w = self.n_inputs();
        &self.inputs[k * w..(k + 1) * w]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.inputs.chunks_exact(self.n_inputs().max(1))
    }

    /// A new dataset made of the given rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut inputs = Vec::with_capacity(indices.len() * self.n_inputs());
        for &k in indices {
            inputs.extend_from_slice(self.row(k));
        }
        Self {
            defect_name: self.defect_name.clone(),
            schema_fingerprint: self.schema_fingerprint.clone(),
            encoding: self.encoding.clone(),
            inputs,
            targets: indices.iter().map(|&k| self.targets[k]).collect(),
            record_ids: indices
                .iter()
                .map(|&k| self.record_ids[k].clone())
                .collect(),
            timestamps: indices.iter().map(|&k| self.timestamps[k]).collect(),
        }
    }

    /// Builds a dataset directly from encoded rows (used by tests and synthetic harnesses).
    pub fn from_rows(
        encoding: Encoding,
        defect_name: &str,
        rows: &[Vec<f64>],
        targets: &[f64],
    ) -> Result<Self> {
        if rows.len() != targets.len() {
            return Err(Error::Dimension {
                expected: rows.len(),
                got: targets.len(),
            });
        }
        let mut inputs = Vec::with_capacity(rows.len() * encoding.width());
        for r in rows {
            if r.len() != encoding.width() {
                return Err(Error::Dimension {
                    expected: encoding.width(),
                    got: r.len(),
                });
            }
            inputs.extend_from_slice(r);
        }
        let epoch = NaiveDateTime::default();
        Ok(Self {
            defect_name: defect_name.to_string(),
            schema_fingerprint: String::new(),
            encoding,
            inputs,
            targets: targets.to_vec(),
            record_ids: (0..rows.len()).map(|k| k.to_string()).collect(),
            timestamps: vec![epoch; rows.len()],
        })
    }
}

/// Encodes records for one defect type.
pub fn encode(
    records: &[ProductionRecord],
    schema: &FactorSchema,
    defect_name: &str,
    norm_source: NormSource<'_>,
) -> Result<EncodedDataset> {
    let encoding = match norm_source {
        NormSource::Fit => Encoding::fit(records, schema)?,
        NormSource::Params(p) => Encoding::new(schema, p.to_vec())?,
    };
    let w = encoding.width();
    let mut inputs = vec![0.0; records.len() * w];
    let mut targets = Vec::with_capacity(records.len());
    for (r, out) in records.iter().zip(inputs.chunks_exact_mut(w.max(1))) {
        encoding.encode_into(&r.factor_values, out)?;
        let flag = r
            .defect_flags
            .get(defect_name)
            .ok_or_else(|| Error::UnknownDefect(defect_name.to_string()))?;
        targets.push(if *flag { 1.0 } else { 0.0 });
    }
    Ok(EncodedDataset {
        defect_name: defect_name.to_string(),
        schema_fingerprint: schema.fingerprint(),
        encoding,
        inputs,
        targets,
        record_ids: records.iter().map(|r| r.record_id.clone()).collect(),
        timestamps: records.iter().map(|r| r.timestamp).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::schema::{FactorDef, Role};
    use chrono::NaiveDate;

    fn schema() -> FactorSchema {
        FactorSchema::new(vec![
            FactorDef::continuous("t", Role::NonControllable, 0.0, 10.0),
            FactorDef::discrete("passes", Role::Protocol, &["1", "2", "3"]),
        ])
        .unwrap()
    }

    fn rec(t: f64, p: &str, d: bool) -> ProductionRecord {
        ProductionRecord {
            record_id: "x".into(),
            timestamp: NaiveDate::from_ymd_opt(2012, 1, 1)
                .unwrap()
                .and_hms_opt(0, 0, 0)
                .unwrap(),
            factor_values: [
                ("t".to_string(), FactorValue::Number(t)),
                ("passes".to_string(), p.into()),
            ]
            .into(),
            defect_flags: [("stains".to_string(), d)].into(),
        }
    }

    #[test]
    fn one_hot_for_state_two() {
        let recs = vec![rec(1.0, "2", true), rec(3.0, "1", false)];
        let ds = encode(&recs, &schema(), "stains", NormSource::Fit).unwrap();
        assert_eq!(ds.n_inputs(), 4);
        assert_eq!(&ds.row(0)[1..], &[0.0, 1.0, 0.0]);
        assert_eq!(ds.targets, vec![1.0, 0.0]);
        assert_eq!(ds.row(0)[0], -1.0);
        assert_eq!(ds.row(1)[0], 1.0);
    }

    #[test]
    fn zero_variance_names_factor() {
        let recs = vec![rec(2.0, "2", true), rec(2.0, "1", false)];
        let err = encode(&recs, &schema(), "stains", NormSource::Fit).unwrap_err();
        assert!(matches!(err, Error::ZeroVariance(ref f) if f == "t"));
    }

    #[test]
    fn unknown_defect() {
        let recs = vec![rec(1.0, "2", true), rec(2.0, "1", false)];
        assert!(matches!(
            encode(&recs, &schema(), "knock", NormSource::Fit),
            Err(Error::UnknownDefect(_))
        ));
    }

    #[test]
    fn lacquering_layout_has_fifteen_inputs_six_binary() {
        let schema = FactorSchema::lacquering();
        let cols = column_layout(&schema);
        assert_eq!(cols.len(), 15);
        assert_eq!(cols.iter().filter(|c| c.state.is_some()).count(), 6);
    }

    #[test]
    fn stored_params_reproduce_fit_exactly() {
        let recs: Vec<_> = (0..7)
            .map(|i| rec(i as f64 * 1.3, "3", i % 2 == 0))
            .collect();
        let fitted = encode(&recs, &schema(), "stains", NormSource::Fit).unwrap();
        let again = encode(
            &recs,
            &schema(),
            "stains",
            NormSource::Params(&fitted.encoding.norm_params),
        )
        .unwrap();
        assert_eq!(fitted, again);
    }
}
