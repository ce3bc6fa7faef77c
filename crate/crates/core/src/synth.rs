//! Synthetic production process with a known defect-risk function.
//!
//! Continuous factors enter the risk through `u = 2 (x - min) / (max - min) - 1`, so
//! `u` spans [-1, 1] over the schema range. The logit is a low-order polynomial in
//! those `u` values plus per-state offsets for discrete factors.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    write_records, Encoding, FactorDef, FactorKind, FactorSchema, FactorValue, FactorValues,
    NormParam, ProductionRecord,
};
use crate::error::{Error, Result};
use crate::net::{sigmoid, Mlp, ModelMeta, ParamId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RiskTerm {
    Linear {
        factor: String,
        coef: f64,
    },
    Quadratic {
        factor: String,
        coef: f64,
    },
    Interaction {
        factors: [String; 2],
        coef: f64,
    },
    /// Logit offset per state of a discrete factor; unlisted states add 0.
    Level {
        factor: String,
        coefs: BTreeMap<String, f64>,
    },
}

impl RiskTerm {
    fn factors(&self) -> Vec<&str> {
        match self {
            RiskTerm::Linear { factor, .. }
            | RiskTerm::Quadratic { factor, .. }
            | RiskTerm::Level { factor, .. } => {
                vec![factor]
            }
            RiskTerm::Interaction { factors, .. } => vec![&factors[0], &factors[1]],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticProcessSpec {
    pub schema: FactorSchema,
    pub defect_name: String,
    pub intercept: f64,
    pub terms: Vec<RiskTerm>,
    /// Factors declared to have no effect; they may not appear in `terms`.
    pub null_factors: Vec<String>,
    /// Probability of flipping each sampled defect flag.
    pub label_noise: f64,
    /// Probability that a record gets one continuous non-controllable value recorded
    /// far outside the schema range (a data-entry error; the risk is unaffected).
    pub outlier_rate: f64,
    pub seed: u64,
    pub start: NaiveDateTime,
    pub interval_minutes: i64,
}

impl Default for SyntheticProcessSpec {
    fn default() -> Self {
        let lin = |f: &str, c: f64| RiskTerm::Linear {
            factor: f.to_string(),
            coef: c,
        };
        Self {
            schema: FactorSchema::lacquering(),
            defect_name: "stains".into(),
            intercept: -19.75,
            terms: vec![
                lin("basis_weight", 14.0),
                lin("drying_time", -16.0),
                lin("load_factor", 4.0),
                lin("temperature", 4.8),
                lin("humidity", 4.0),
                lin("liters_per_table", 4.0),
                lin("time_per_table", 4.0),
                lin("products", -4.0),
                lin("pressure", 4.0),
                RiskTerm::Level {
                    factor: "layers".into(),
                    coefs: [
                        ("1".to_string(), 0.0),
                        ("2".to_string(), 2.4),
                        ("3".to_string(), 4.8),
                    ]
                    .into(),
                },
            ],
            null_factors: vec!["passes".into()],
            label_noise: 0.0,
            outlier_rate: 0.0,
            seed: 0,
            start: NaiveDate::from_ymd_opt(2012, 1, 2)
                .and_then(|d| d.and_hms_opt(6, 0, 0))
                .expect("valid date"),
            interval_minutes: 90,
        }
    }
}

/// Generated records plus the ground truth behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBatch {
    pub records: Vec<ProductionRecord>,
    /// True defect probability of each record (before any outlier corruption).
    pub risks: Vec<f64>,
    /// Indices of records carrying an injected out-of-range value.
    pub outliers: Vec<usize>,
    /// Indices whose flag was flipped by label noise.
    pub flipped: Vec<usize>,
}

/// Monte Carlo estimate of the rates achieved by thresholding the true risk itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BayesRates {
    pub threshold: f64,
    pub samples: usize,
    pub prevalence: f64,
    pub non_detection_rate: f64,
    /// Over predicted positives.
    pub false_positive_proportion: f64,
    /// Over actual negatives.
    pub false_positive_rate: f64,
}

impl SyntheticProcessSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if self.defect_name.is_empty() {
            return bad("defect_name is empty".into());
        }
        if !(0.0..=1.0).contains(&self.label_noise) || !(0.0..=1.0).contains(&self.outlier_rate) {
            return bad("label_noise and outlier_rate must lie in [0, 1]".into());
        }
        if self.interval_minutes <= 0 {
            return bad("interval_minutes must be positive".into());
        }
        if !self.intercept.is_finite() {
            return bad("intercept must be finite".into());
        }
        for n in &self.null_factors {
            self.schema.require(n)?;
        }
        for t in &self.terms {
            for f in t.factors() {
                let def = self.schema.require(f)?;
                if self.null_factors.iter().any(|n| n == f) {
                    return bad(format!("null factor `{f}` appears in a risk term"));
                }
                let continuous_term = !matches!(t, RiskTerm::Level { .. });
                if continuous_term != def.is_continuous() {
                    return bad(format!("term kind does not fit factor `{f}`"));
                }
            }
            let coefs: Vec<f64> = match t {
                RiskTerm::Linear { coef, .. }
                | RiskTerm::Quadratic { coef, .. }
                | RiskTerm::Interaction { coef, .. } => {
                    vec![*coef]
                }
                RiskTerm::Level { factor, coefs } => {
                    let states = self.schema.require(factor)?.states().unwrap_or_default();
                    if let Some(s) = coefs.keys().find(|s| !states.contains(s)) {
                        return bad(format!("unknown state `{s}` for `{factor}`"));
                    }
                    coefs.values().copied().collect()
                }
            };
            if coefs.iter().any(|c| !c.is_finite()) {
                return bad("risk coefficients must be finite".into());
            }
        }
        Ok(())
    }

    /// True when the logit has no quadratic or interaction terms.
    pub fn is_linear(&self) -> bool {
        self.terms
            .iter()
            .all(|t| matches!(t, RiskTerm::Linear { .. } | RiskTerm::Level { .. }))
    }

    /// Continuous factors with a non-zero linear coefficient and no other terms,
    /// with the sign of their effect on the risk.
    pub fn monotone_effect(&self, factor: &str) -> Option<f64> {
        let mut coef = None;
        for t in &self.terms {
            if !t.factors().contains(&factor) {
                continue;
            }
            match t {
                RiskTerm::Linear { coef: c, .. } if coef.is_none() => coef = Some(*c),
                _ => return None,
            }
        }
        coef.filter(|c| *c != 0.0).map(f64::signum)
    }
}

fn unit(def: &FactorDef, x: f64) -> f64 {
    let (lo, hi) = def.range().expect("continuous factor");
    2.0 * (x - lo) / (hi - lo) - 1.0
}

fn number(values: &FactorValues, factor: &str) -> Result<f64> {
    values
        .get(factor)
        .and_then(FactorValue::as_number)
        .ok_or_else(|| Error::MissingValue(factor.to_string()))
}

/// Logit of the true risk at `values` (natural units).
pub fn true_logit(spec: &SyntheticProcessSpec, values: &FactorValues) -> Result<f64> {
    let s = &spec.schema;
    let u = |f: &str| -> Result<f64> { Ok(unit(s.require(f)?, number(values, f)?)) };
    let mut a = spec.intercept;
    for t in &spec.terms {
        a += match t {
            RiskTerm::Linear { factor, coef } => coef * u(factor)?,
            RiskTerm::Quadratic { factor, coef } => coef * u(factor)?.powi(2),
            RiskTerm::Interaction { factors, coef } => coef * u(&factors[0])? * u(&factors[1])?,
            RiskTerm::Level { factor, coefs } => {
                let v = values
                    .get(factor)
                    .ok_or_else(|| Error::MissingValue(factor.clone()))?;
                let label = v.to_string();
                coefs.get(&label).copied().unwrap_or(0.0)
            }
        };
    }
    Ok(a)
}

/// True defect probability at `values` (natural units).
pub fn true_risk(spec: &SyntheticProcessSpec, values: &FactorValues) -> Result<f64> {
    true_logit(spec, values).map(sigmoid)
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

fn sample_values<R: Rng>(schema: &FactorSchema, rng: &mut R) -> FactorValues {
    let mut values = FactorValues::new();
    for f in &schema.factors {
        let v = match &f.kind {
            FactorKind::Continuous {
                range,
                integer: true,
            } => {
                let (lo, hi) = (range[0].ceil() as i64, range[1].floor() as i64);
                FactorValue::Number(rng.gen_range(lo..=hi) as f64)
            }
            FactorKind::Continuous {
                range,
                integer: false,
            } => FactorValue::Number(
                round4(rng.gen_range(range[0]..=range[1])).clamp(range[0], range[1]),
            ),
            FactorKind::Discrete { states } => {
                FactorValue::Level(states[rng.gen_range(0..states.len())].clone())
            }
        };
        values.insert(f.name.clone(), v);
    }
    values
}

/// Records, true risks, outlier sites and flipped labels for `n` lots.
pub fn generate_detailed(spec: &SyntheticProcessSpec, n: usize) -> Result<SyntheticBatch> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::Config("record count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let outlier_targets: Vec<&FactorDef> = spec
        .schema
        .factors
        .iter()
        .filter(|f| f.is_continuous() && f.role == crate::data::Role::NonControllable)
        .collect();
    let mut batch = SyntheticBatch {
        records: Vec::with_capacity(n),
        risks: Vec::with_capacity(n),
        outliers: Vec::new(),
        flipped: Vec::new(),
    };
    let width = (n as f64).log10().ceil().max(1.0) as usize + 1;
    for k in 0..n {
        let mut values = sample_values(&spec.schema, &mut rng);
        let risk = true_risk(spec, &values)?;
        let mut defect = rng.gen::<f64>() < risk;
        if spec.label_noise > 0.0 && rng.gen::<f64>() < spec.label_noise {
            defect = !defect;
            batch.flipped.push(k);
        }
        if spec.outlier_rate > 0.0
            && !outlier_targets.is_empty()
            && rng.gen::<f64>() < spec.outlier_rate
        {
            let f = outlier_targets[rng.gen_range(0..outlier_targets.len())];
            let (lo, hi) = f.range().expect("continuous");
            let excess = (hi - lo) * rng.gen_range(0.25..1.0);
            let v = if rng.gen::<bool>() {
                hi + excess
            } else {
                lo - excess
            };
            values.insert(f.name.clone(), FactorValue::Number(round4(v)));
            batch.outliers.push(k);
        }
        batch.records.push(ProductionRecord {
            record_id: format!("L{:0width$}", k + 1),
            timestamp: spec.start + Duration::minutes(spec.interval_minutes * k as i64),
            factor_values: values,
            defect_flags: [(spec.defect_name.clone(), defect)].into(),
        });
        batch.risks.push(risk);
    }
    Ok(batch)
}

pub fn generate(spec: &SyntheticProcessSpec, n: usize) -> Result<Vec<ProductionRecord>> {
    generate_detailed(spec, n).map(|b| b.records)
}

/// Writes `generate(spec, n)` in the CSV layout the data module reads.
pub fn export_csv(
    spec: &SyntheticProcessSpec,
    n: usize,
    path: impl AsRef<Path>,
) -> Result<Vec<ProductionRecord>> {
    let records = generate(spec, n)?;
    let file = std::fs::File::create(path)?;
    write_records(std::io::BufWriter::new(file), &spec.schema, &records)?;
    Ok(records)
}

/// Expected prevalence and the rates of the rule `risk >= threshold`, by Monte Carlo
/// over the sampling distribution of factor values.
pub fn bayes_rates(
    spec: &SyntheticProcessSpec,
    threshold: f64,
    samples: usize,
    seed: u64,
) -> Result<BayesRates> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut pos, mut missed, mut flagged, mut flagged_neg, mut neg) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for _ in 0..samples {
        let r = true_risk(spec, &sample_values(&spec.schema, &mut rng))?;
        let r = spec.label_noise + (1.0 - 2.0 * spec.label_noise) * r;
        pos += r;
        neg += 1.0 - r;
        if r >= threshold {
            flagged += 1.0;
            flagged_neg += 1.0 - r;
        } else {
            missed += r;
        }
    }
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
    Ok(BayesRates {
        threshold,
        samples,
        prevalence: pos / samples as f64,
        non_detection_rate: ratio(missed, pos),
        false_positive_proportion: ratio(flagged_neg, flagged),
        false_positive_rate: ratio(flagged_neg, neg),
    })
}

/// Small input weight of the oracle network; `tanh(e a) / e` matches `a` to about
/// `(e a)^2 / 3` relative error.
const ORACLE_EPS: f64 = 1e-6;

/// A network reproducing the true risk of a linear-logit spec: one hidden unit kept in
/// the linear part of tanh, normalization that maps each continuous factor to `u`.
/// Columns of factors without effect are pruned.
pub fn oracle_model(spec: &SyntheticProcessSpec) -> Result<Mlp> {
    spec.validate()?;
    if !spec.is_linear() {
        return Err(Error::Config(
            "oracle model needs a spec with only linear and level terms".into(),
        ));
    }
    let norm: Vec<NormParam> = spec
        .schema
        .factors
        .iter()
        .filter_map(|f| {
            f.range().map(|(lo, hi)| NormParam {
                factor: f.name.clone(),
                mean: 0.5 * (lo + hi),
                std: 0.5 * (hi - lo),
            })
        })
        .collect();
    let encoding = Encoding::new(&spec.schema, norm)?;
    let mut w = vec![0.0; encoding.width()];
    for t in &spec.terms {
        match t {
            RiskTerm::Linear { factor, coef } => {
                for c in encoding.columns_of(factor) {
                    w[c] += coef;
                }
            }
            RiskTerm::Level { factor, coefs } => {
                for c in encoding.columns_of(factor) {
                    let state = encoding.columns[c].state.as_deref().unwrap_or_default();
                    w[c] += coefs.get(state).copied().unwrap_or(0.0);
                }
            }
            _ => unreachable!("checked by is_linear"),
        }
    }
    let n0 = encoding.width();
    let w1: Vec<f64> = w.iter().map(|v| v * ORACLE_EPS).collect();
    let mut mlp = Mlp::from_parts(n0, 1, &w1, &[0.0], &[1.0 / ORACLE_EPS], spec.intercept)?;
    for (h, v) in w.iter().enumerate() {
        if *v == 0.0 {
            mlp.deactivate(mlp.index_of(ParamId::HiddenWeight {
                neuron: 0,
                input: h,
            }));
        }
    }
    mlp.deactivate(mlp.index_of(ParamId::HiddenBias { neuron: 0 }));
    mlp.with_meta(ModelMeta {
        defect_name: spec.defect_name.clone(),
        schema_fingerprint: spec.schema.fingerprint(),
        encoding: Some(encoding),
    })
}
