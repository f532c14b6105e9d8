//! Soft clustering of categorical sequences with a mixture of discrete-time,
//! time-homogeneous Markov chains, fitted by expectation-maximization.
//!
//! The crate is organized as a pipeline:
//!
//! * [`ingest`] turns a check-in CSV into weekly per-user category sequences;
//! * [`em`] fits a [`MixtureModel`] and per-sequence cluster posteriors;
//! * [`analysis`] summarizes a fit (cluster sizes, popularity vectors,
//!   per-user assignment and stationary-distribution forecasts);
//! * [`synth`] samples synthetic corpora from a model;
//! * [`io`] reads and writes the file formats shared with the CLI.

pub mod analysis;
pub mod em;
mod error;
pub mod ingest;
pub mod io;
pub mod model;
pub mod synth;

pub use em::{fit, EmConfig, FitResult, InitMode, PosteriorMatrix};
pub use error::{ConvergenceCause, Error, Result};
pub use model::{CategorySet, ChainParams, IsoWeek, LogLikelihood, MixtureModel, Sequence, SequenceDataset};
