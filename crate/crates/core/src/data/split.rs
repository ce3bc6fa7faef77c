use chrono::NaiveDateTime;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encode::EncodedDataset;
use super::record::ProductionRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Earliest rows identify, the rest validate.
    #[default]
    Chronological,
    SeededRandom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    #[serde(default)]
    pub mode: SplitMode,
    pub identification_count: usize,
    #[serde(default)]
    pub seed: u64,
}

impl SplitSpec {
    pub fn chronological(identification_count: usize) -> Self {
        Self {
            mode: SplitMode::Chronological,
            identification_count,
            seed: 0,
        }
    }

    pub fn seeded_random(identification_count: usize, seed: u64) -> Self {
        Self {
            mode: SplitMode::SeededRandom,
            identification_count,
            seed,
        }
    }
}

/// Partitions `0..timestamps.len()` into identification and validation indices.
/// Both lists come back in chronological order (ties keep input order).
pub fn split_indices(
    timestamps: &[NaiveDateTime],
    spec: &SplitSpec,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = timestamps.len();
    let k = spec.identification_count;
    if k == 0 || k >= n {
        return Err(Error::Split(format!(
            "identification_count must be in (0, {n}), got {k}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| timestamps[i]);
    match spec.mode {
        SplitMode::Chronological => {
            let valid = order.split_off(k);
            Ok((order, valid))
        }
        SplitMode::SeededRandom => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let mut perm = order.clone();
            perm.shuffle(&mut rng);
            let mut in_ident = vec![false; n];
            for &i in &perm[..k] {
                in_ident[i] = true;
            }
            let (ident, valid) = order.into_iter().partition(|&i| in_ident[i]);
            Ok((ident, valid))
        }
    }
}

pub fn split(
    dataset: &EncodedDataset,
    spec: &SplitSpec,
) -> Result<(EncodedDataset, EncodedDataset)> {
    let (a, b) = split_indices(&dataset.timestamps, spec)?;
    Ok((dataset.select(&a), dataset.select(&b)))
}

pub fn split_records(
    records: &[ProductionRecord],
    spec: &SplitSpec,
) -> Result<(Vec<ProductionRecord>, Vec<ProductionRecord>)> {
    let ts: Vec<_> = records.iter().map(|r| r.timestamp).collect();
    let (a, b) = split_indices(&ts, spec)?;
    Ok((
        a.iter().map(|&i| records[i].clone()).collect(),
        b.iter().map(|&i| records[i].clone()).collect(),
    ))
}
