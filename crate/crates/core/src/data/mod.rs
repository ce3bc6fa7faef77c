//! Ingestion, cleaning, encoding and splitting of production records.

mod clean;
mod encode;
mod record;
mod schema;
mod split;

pub use clean::{clean, format_log, CleanRules, RejectReason, Rejection};
pub use encode::{encode, Column, EncodedDataset, Encoding, NormParam, NormSource};
pub use record::{
    format_timestamp, load_records, load_records_path, parse_timestamp, write_records,
    write_records_path, ProductionRecord,
};
pub use schema::{FactorDef, FactorKind, FactorSchema, FactorValue, FactorValues, Role};
pub use split::{split, split_indices, split_records, SplitMode, SplitSpec};
