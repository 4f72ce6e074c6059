//! Feature extractors: the BiLSTM over tokens and linguistic features, the
//! pretrained BERT encoder with a learned mix over all of its layers, the
//! subword-to-word pooling and the final concatenation.

mod bilstm;
mod lm;
mod mix;
mod pool;

pub use bilstm::{BiLstmEncoder, BiLstmEncoderConfig, ExplicitInputs};
pub use lm::{create_random_lm, BertConfig, BertEncoder, LmAssets, LmEncoderConfig};
pub use mix::ScalarMix;
pub use pool::{fuse, pool_to_words, pooling_matrix, Pooling};
