//! Thresholded classification and detection metrics.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::EncodedDataset;
use crate::error::{Error, Result};
use crate::net::Mlp;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

fn check_threshold(threshold: f64) -> Result<()> {
    if threshold > 0.0 && threshold < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "threshold {threshold} outside (0, 1)"
        )))
    }
}

/// Defect iff the predicted probability reaches the threshold.
pub fn is_defect(probability: f64, threshold: f64) -> bool {
    probability >= threshold
}

pub fn classify(mlp: &Mlp, x: &[f64], threshold: f64) -> Result<bool> {
    check_threshold(threshold)?;
    Ok(is_defect(mlp.forward(x)?, threshold))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub threshold: f64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn actual_positives(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn predicted_positives(&self) -> u64 {
        self.tp + self.fp
    }

    /// Counts from probabilities and {0, 1} targets.
    pub fn from_predictions(
        probabilities: &[f64],
        targets: &[f64],
        threshold: f64,
    ) -> Result<Self> {
        check_threshold(threshold)?;
        if probabilities.len() != targets.len() {
            return Err(Error::Dimension {
                expected: targets.len(),
                got: probabilities.len(),
            });
        }
        let mut c = Self {
            tp: 0,
            fp: 0,
            tn: 0,
            fn_: 0,
            threshold,
        };
        for (p, y) in probabilities.iter().zip(targets) {
            match (is_defect(*p, threshold), *y >= 0.5) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }
}

pub fn confusion(mlp: &Mlp, data: &EncodedDataset, threshold: f64) -> Result<ConfusionCounts> {
    ConfusionCounts::from_predictions(&mlp.predict(data)?, &data.targets, threshold)
}

/// Missed defects over actual defects, `fn / (tp + fn)`.
pub fn non_detection_rate(c: &ConfusionCounts) -> Result<f64> {
    match c.actual_positives() {
        0 => Err(Error::NoPositives),
        p => Ok(c.fn_ as f64 / p as f64),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FpMode {
    /// `fp / (tp + fp)`.
    #[default]
    OfPredictedPositives,
    /// `fp / (fp + tn)`.
    OfActualNegatives,
}

impl FpMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FpMode::OfPredictedPositives => "of_predicted_positives",
            FpMode::OfActualNegatives => "of_actual_negatives",
        }
    }
}

pub fn false_positive_proportion(c: &ConfusionCounts, mode: FpMode) -> Result<f64> {
    let den = match mode {
        FpMode::OfPredictedPositives => c.tp + c.fp,
        FpMode::OfActualNegatives => c.fp + c.tn,
    };
    if den == 0 {
        return Err(Error::ZeroDenominator(mode.as_str()));
    }
    Ok(c.fp as f64 / den as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub defect_name: String,
    pub threshold: f64,
    pub samples: u64,
    pub counts: ConfusionCounts,
    /// `None` when the set has no actual positives.
    pub non_detection_rate: Option<f64>,
    pub false_positive_of_predicted_positives: Option<f64>,
    pub false_positive_of_actual_negatives: Option<f64>,
    /// Mode used by the headline false-positive figure.
    pub fp_mode: FpMode,
}

impl EvalReport {
    pub fn new(defect_name: &str, counts: ConfusionCounts, fp_mode: FpMode) -> Self {
        Self {
            defect_name: defect_name.to_string(),
            threshold: counts.threshold,
            samples: counts.total(),
            counts,
            non_detection_rate: non_detection_rate(&counts).ok(),
            false_positive_of_predicted_positives: false_positive_proportion(
                &counts,
                FpMode::OfPredictedPositives,
            )
            .ok(),
            false_positive_of_actual_negatives: false_positive_proportion(
                &counts,
                FpMode::OfActualNegatives,
            )
            .ok(),
            fp_mode,
        }
    }

    pub fn false_positive_proportion(&self) -> Option<f64> {
        match self.fp_mode {
            FpMode::OfPredictedPositives => self.false_positive_of_predicted_positives,
            FpMode::OfActualNegatives => self.false_positive_of_actual_negatives,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        let pct = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{:.1}%", 100.0 * v));
        let c = &self.counts;
        let mut s = String::new();
        let _ = writeln!(s, "defect:     {}", self.defect_name);
        let _ = writeln!(s, "threshold:  {}", self.threshold);
        let _ = writeln!(s, "samples:    {}", self.samples);
        let _ = writeln!(s, "tp {}  fp {}  tn {}  fn {}", c.tp, c.fp, c.tn, c.fn_);
        let _ = writeln!(
            s,
            "non-detection rate:            {}",
            pct(self.non_detection_rate)
        );
        let _ = writeln!(
            s,
            "false positives ({}): {}",
            self.fp_mode.as_str(),
            pct(self.false_positive_proportion())
        );
        let other = match self.fp_mode {
            FpMode::OfPredictedPositives => FpMode::OfActualNegatives,
            FpMode::OfActualNegatives => FpMode::OfPredictedPositives,
        };
        let other_v = match other {
            FpMode::OfPredictedPositives => self.false_positive_of_predicted_positives,
            FpMode::OfActualNegatives => self.false_positive_of_actual_negatives,
        };
        let _ = writeln!(s, "false positives ({}): {}", other.as_str(), pct(other_v));
        s
    }
}

pub fn evaluate(
    mlp: &Mlp,
    data: &EncodedDataset,
    threshold: f64,
    fp_mode: FpMode,
) -> Result<EvalReport> {
    let counts = confusion(mlp, data, threshold)?;
    Ok(EvalReport::new(&data.defect_name, counts, fp_mode))
}

/// Per-row CSV: `record_id,probability,predicted,actual`.
pub fn prediction_rows_csv(mlp: &Mlp, data: &EncodedDataset, threshold: f64) -> Result<String> {
    check_threshold(threshold)?;
    let probs = mlp.predict(data)?;
    let mut s = String::from("record_id,probability,predicted,actual\n");
    for ((id, p), y) in data.record_ids.iter().zip(&probs).zip(&data.targets) {
        let _ = writeln!(
            s,
            "{id},{p},{},{}",
            is_defect(*p, threshold) as u8,
            (*y >= 0.5) as u8
        );
    }
    Ok(s)
}
