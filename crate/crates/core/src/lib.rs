//! Memory-span analysis of LSTM networks through controlled cell-state
//! leakage, with a deep-clustering two-speaker separation pipeline to
//! exercise it end to end.

pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod params;
pub mod recurrent;
pub mod separation;
pub mod signal;
pub mod speaker;
pub mod training;

pub use error::{Error, ErrorKind, Result};
