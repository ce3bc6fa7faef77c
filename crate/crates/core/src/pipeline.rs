//! The end-to-end flow from records to a pruned, evaluated model.

use serde::{Deserialize, Serialize};

use crate::data::{
    clean, encode, split_records, CleanRules, EncodedDataset, FactorSchema, NormParam, NormSource,
    ProductionRecord, Rejection, SplitSpec,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport, FpMode};
use crate::net::Mlp;
use crate::prune::{prune, PruneConfig, PruneReport};
use crate::train::{train, TrainConfig, TrainReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub defect: String,
    /// Fraction of each schema range added on both sides before records are rejected.
    /// `None` skips cleaning.
    pub clean_margin: Option<f64>,
    pub split: SplitSpec,
    pub train: TrainConfig,
    /// `None` skips pruning.
    pub prune: Option<PruneConfig>,
    pub threshold: f64,
    pub fp_mode: FpMode,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            defect: "stains".into(),
            clean_margin: Some(0.1),
            split: SplitSpec::chronological(1202),
            train: TrainConfig::default(),
            prune: Some(PruneConfig::default()),
            threshold: 0.5,
            fp_mode: FpMode::OfPredictedPositives,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config("threshold must be in (0, 1)".into()));
        }
        if let Some(m) = self.clean_margin {
            if !(m >= 0.0 && m.is_finite()) {
                return Err(Error::Config("clean_margin must be >= 0".into()));
            }
        }
        self.train.validate()?;
        if let Some(p) = &self.prune {
            p.validate()?;
        }
        Ok(())
    }
}

/// Identification and validation sets ready for training.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub ident: EncodedDataset,
    pub valid: EncodedDataset,
    pub rejections: Vec<Rejection>,
}

/// Cleans, splits and encodes records. Normalization is fitted on the identification
/// set unless `norm` is given (as when re-encoding for an existing model).
pub fn prepare(
    records: &[ProductionRecord],
    schema: &FactorSchema,
    config: &PipelineConfig,
    norm: Option<&[NormParam]>,
) -> Result<Prepared> {
    let (kept, rejections) = match config.clean_margin {
        Some(m) => clean(records, &CleanRules::widened(schema, m)),
        None => (records.to_vec(), Vec::new()),
    };
    let (ri, rv) = split_records(&kept, &config.split)?;
    let ident = match norm {
        Some(p) => encode(&ri, schema, &config.defect, NormSource::Params(p))?,
        None => encode(&ri, schema, &config.defect, NormSource::Fit)?,
    };
    let valid = encode(
        &rv,
        schema,
        &config.defect,
        NormSource::Params(&ident.encoding.norm_params),
    )?;
    Ok(Prepared {
        ident,
        valid,
        rejections,
    })
}

/// Re-encodes `records` the way `mlp` was trained.
pub fn prepare_for_model(
    mlp: &Mlp,
    records: &[ProductionRecord],
    schema: &FactorSchema,
    config: &PipelineConfig,
) -> Result<Prepared> {
    mlp.check_schema(schema)?;
    let enc = mlp
        .encoding()
        .ok_or_else(|| Error::Model("model has no input encoding".into()))?;
    prepare(records, schema, config, Some(&enc.norm_params))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub records: usize,
    pub rejected: usize,
    pub identification: usize,
    pub validation: usize,
    pub train: TrainReport,
    pub prune: Option<PruneReport>,
    /// Validation rates of the trained network before pruning.
    pub trained_validation: EvalReport,
    /// Validation rates of the final network.
    pub validation_eval: EvalReport,
}

impl PipelineReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub model: Mlp,
    pub report: PipelineReport,
}

pub fn run(
    records: &[ProductionRecord],
    schema: &FactorSchema,
    config: &PipelineConfig,
) -> Result<PipelineOutcome> {
    config.validate()?;
    let p = prepare(records, schema, config, None)?;
    let (trained, train_report) = train(&p.ident, &p.valid, &config.train)?;
    let trained_validation = evaluate(&trained, &p.valid, config.threshold, config.fp_mode)?;
    let (model, prune_report) = match &config.prune {
        Some(pc) => {
            let (m, r) = prune(&trained, &p.ident, &p.valid, pc, &config.train)?;
            (m, Some(r))
        }
        None => (trained, None),
    };
    let validation_eval = evaluate(&model, &p.valid, config.threshold, config.fp_mode)?;
    Ok(PipelineOutcome {
        model,
        report: PipelineReport {
            records: records.len(),
            rejected: p.rejections.len(),
            identification: p.ident.len(),
            validation: p.valid.len(),
            train: train_report,
            prune: prune_report,
            trained_validation,
            validation_eval,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SyntheticProcessSpec};

    fn small() -> PipelineConfig {
        PipelineConfig {
            split: SplitSpec::chronological(150),
            train: TrainConfig {
                n1_initial: 3,
                restarts: 2,
                max_lm_iterations: 30,
                master_seed: 5,
                ..TrainConfig::default()
            },
            prune: Some(PruneConfig {
                max_removals: Some(4),
                ..PruneConfig::default()
            }),
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn config_json_round_trips_and_fills_defaults() {
        let c = small();
        assert_eq!(PipelineConfig::from_json(&c.to_json()).unwrap(), c);
        let d = PipelineConfig::from_json("{}").unwrap();
        assert_eq!(d, PipelineConfig::default());
        assert_eq!(d.split.identification_count, 1202);
        assert!(PipelineConfig::from_json(r#"{"threshold": 1.5}"#).is_err());
    }

    #[test]
    fn run_reports_sizes_and_is_repeatable() {
        let spec = SyntheticProcessSpec::default();
        let recs = generate(&spec, 260).unwrap();
        let a = run(&recs, &spec.schema, &small()).unwrap();
        assert_eq!(a.report.identification, 150);
        assert_eq!(a.report.validation, 110);
        assert_eq!(a.report.rejected, 0);
        assert!(a.report.prune.is_some());
        let b = run(&recs, &spec.schema, &small()).unwrap();
        assert_eq!(a.model.to_json(), b.model.to_json());
        assert_eq!(a.report.to_json(), b.report.to_json());
    }

    #[test]
    fn re_encoding_for_a_model_reuses_its_normalization() {
        let spec = SyntheticProcessSpec::default();
        let recs = generate(&spec, 260).unwrap();
        let c = small();
        let out = run(&recs, &spec.schema, &c).unwrap();
        let other = generate(
            &SyntheticProcessSpec {
                seed: 9,
                ..spec.clone()
            },
            260,
        )
        .unwrap();
        let p = prepare_for_model(&out.model, &other, &spec.schema, &c).unwrap();
        assert_eq!(
            &p.ident.encoding.norm_params,
            &out.model.encoding().unwrap().norm_params
        );
    }
}
