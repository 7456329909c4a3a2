//! Audio-embedding topic segmentation workbench.
//!
//! Trains CNN audio-embedding generators on sound classification tasks,
//! extracts per-word embeddings, trains an LSTM boundary labeller on
//! synthetic concatenated shows, and scores it with WinPR@k plus
//! nonparametric significance tests.

pub mod corpus;
pub mod digest;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod generator;
pub mod par;
pub mod pipeline;
pub mod segmenter;
pub mod stats;
pub mod tensor;

pub use error::{Error, Result};
