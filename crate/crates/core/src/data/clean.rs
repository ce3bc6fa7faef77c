//! Hard-bound outlier removal.

use std::collections::BTreeMap;
use std::fmt;

use super::record::ProductionRecord;
use super::schema::{FactorSchema, FactorValue};

/// Per-factor inclusive bounds for continuous factors.
#[derive(Debug, Clone, PartialEq)]
pub struct CleanRules {
    pub bounds: BTreeMap<String, (f64, f64)>,
}

impl CleanRules {
    /// Schema ranges widened on each side by `fraction` of their width.
    pub fn widened(schema: &FactorSchema, fraction: f64) -> Self {
        let bounds = schema
            .factors
            .iter()
            .filter_map(|f| {
                let (lo, hi) = f.range()?;
                let pad = (hi - lo) * fraction;
                Some((f.name.clone(), (lo - pad, hi + pad)))
            })
            .collect();
        Self { bounds }
    }

    /// The default rule: ranges widened by 10%.
    pub fn from_schema(schema: &FactorSchema) -> Self {
        Self::widened(schema, 0.1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RejectReason {
    BelowMin { value: f64, min: f64 },
    AboveMax { value: f64, max: f64 },
    NotFinite,
    Missing,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::BelowMin { value, min } => write!(f, "below_min {value} < {min}"),
            RejectReason::AboveMax { value, max } => write!(f, "above_max {value} > {max}"),
            RejectReason::NotFinite => f.write_str("not_finite"),
            RejectReason::Missing => f.write_str("missing"),
        }
    }
}

/// One rejected record. `index` is its 0-based position in the input list.
#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub index: usize,
    pub record_id: String,
    pub factor: String,
    pub reason: RejectReason,
}

impl Rejection {
    /// `row,<n>,<factor>,<reason>` with `n` counting data rows from 1.
    pub fn log_line(&self) -> String {
        format!("row,{},{},{}", self.index + 1, self.factor, self.reason)
    }
}

pub fn format_log(log: &[Rejection]) -> String {
    log.iter().map(|r| r.log_line() + "\n").collect()
}

fn check(record: &ProductionRecord, rules: &CleanRules) -> Option<(String, RejectReason)> {
    for (name, &(min, max)) in &rules.bounds {
        let reason = match record.factor_values.get(name) {
            None => Some(RejectReason::Missing),
            Some(FactorValue::Number(v)) if !v.is_finite() => Some(RejectReason::NotFinite),
            Some(FactorValue::Number(v)) if *v < min => {
                Some(RejectReason::BelowMin { value: *v, min })
            }
            Some(FactorValue::Number(v)) if *v > max => {
                Some(RejectReason::AboveMax { value: *v, max })
            }
            _ => None,
        };
        if let Some(reason) = reason {
            return Some((name.clone(), reason));
        }
    }
    None
}

/// Drops records violating any bound, preserving order. Each rejected record is logged
/// once, against the first violated factor (by name order).
pub fn clean(
    records: &[ProductionRecord],
    rules: &CleanRules,
) -> (Vec<ProductionRecord>, Vec<Rejection>) {
    let mut kept = Vec::with_capacity(records.len());
    let mut log = Vec::new();
    for (index, r) in records.iter().enumerate() {
        match check(r, rules) {
            None => kept.push(r.clone()),
            Some((factor, reason)) => log.push(Rejection {
                index,
                record_id: r.record_id.clone(),
                factor,
                reason,
            }),
        }
    }
    (kept, log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::schema::{FactorDef, Role};
    use chrono::NaiveDate;

    fn schema() -> FactorSchema {
        FactorSchema::new(vec![
            FactorDef::continuous("temperature", Role::NonControllable, 10.0, 30.0),
            FactorDef::discrete("passes", Role::Protocol, &["1", "2"]),
        ])
        .unwrap()
    }

    fn rec(i: usize, t: f64) -> ProductionRecord {
        ProductionRecord {
            record_id: format!("r{i}"),
            timestamp: NaiveDate::from_ymd_opt(2012, 2, 1)
                .unwrap()
                .and_hms_opt(0, 0, 0)
                .unwrap(),
            factor_values: [
                ("temperature".to_string(), FactorValue::Number(t)),
                ("passes".to_string(), "1".into()),
            ]
            .into(),
            defect_flags: Default::default(),
        }
    }

    #[test]
    fn widened_bounds() {
        let rules = CleanRules::from_schema(&schema());
        assert_eq!(rules.bounds["temperature"], (8.0, 32.0));
        assert!(!rules.bounds.contains_key("passes"));
    }

    #[test]
    fn all_in_range_is_identity() {
        let recs: Vec<_> = (0..5).map(|i| rec(i, 10.0 + i as f64)).collect();
        let (kept, log) = clean(&recs, &CleanRules::from_schema(&schema()));
        assert_eq!(kept, recs);
        assert!(log.is_empty());
    }

    #[test]
    fn one_outlier_logged() {
        let mut recs: Vec<_> = (0..5).map(|i| rec(i, 20.0)).collect();
        recs[3] = rec(3, 33.0);
        let (kept, log) = clean(&recs, &CleanRules::from_schema(&schema()));
        assert_eq!(kept.len(), 4);
        assert_eq!(log.len(), 1);
        assert_eq!(log[0].index, 3);
        assert_eq!(log[0].log_line(), "row,4,temperature,above_max 33 > 32");
        // within the widened band but outside the schema range: kept
        let (kept, _) = clean(&[rec(0, 31.0)], &CleanRules::from_schema(&schema()));
        assert_eq!(kept.len(), 1);
    }

    #[test]
    fn all_rejected() {
        let recs: Vec<_> = (0..3).map(|i| rec(i, -100.0)).collect();
        let (kept, log) = clean(&recs, &CleanRules::from_schema(&schema()));
        assert!(kept.is_empty());
        assert_eq!(log.len(), 3);
        assert_eq!(format_log(&log).lines().count(), 3);
    }
}
