//! Toolkit for studying cross-lingual transfer of cultural knowledge in
//! continually pretrained language models.
//!
//! The pipeline runs in stages, each a module here:
//!
//! - [`corpus`]: script-isolation filtering, chunking and manifests
//! - [`bridging`]: bridged / unbridged continual-pretraining datasets
//! - [`scoring`]: character n-gram scorer and the external scorer client
//! - [`probing`]: cloze evaluation, accuracy curves, EMA and transfer gaps
//! - [`retrieval`]: BM25 over chunks and entailment judges
//! - [`analysis`]: cultural density and transfer classification
//! - [`cli`]: subcommands, experiment config and reports

pub mod analysis;
pub mod bridging;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod error;
pub mod fixtures;
pub mod io;
mod parallel;
pub mod probing;
pub mod protocol;
pub mod report;
pub mod retrieval;
pub mod script;
pub mod scoring;
pub mod shuffle;

pub use error::{Error, Result};
