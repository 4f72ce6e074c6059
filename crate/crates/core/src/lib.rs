//! Phrase break prediction for a Japanese text-to-speech front-end.
//!
//! Every token of a sentence is labeled as followed by a phrase break or
//! not. Five learned systems are available, from a BiLSTM over surface
//! tokens up to a fusion of BiLSTM features over linguistic annotations with
//! a layer-mixed pretrained BERT encoder. A punctuation rule serves as the
//! baseline.

pub mod checkpoint;
pub mod cli;
pub mod corpus;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod lexfeat;
pub mod model;
pub mod params;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
