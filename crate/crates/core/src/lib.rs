//! Defect-risk modelling for batch production lines: data ingestion, a single
//! hidden layer tanh/sigmoid network trained with robust Levenberg-Marquardt,
//! pruning, evaluation, and experiment planning for process control limits.

pub mod data;
pub mod doe;
pub mod error;
pub mod eval;
pub mod net;
pub mod pipeline;
pub mod prune;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
