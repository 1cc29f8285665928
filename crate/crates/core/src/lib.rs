//! Collaborative-filtering video recommenders driven by time-sync comments.
//!
//! Four model variants share one pipeline: a bidirectional LSTM turns each
//! comment into a feature vector, optionally refined by herding-effect
//! attention over the comment's context window and optionally fused with a
//! frame feature; the result modulates user and video latent factors whose
//! inner product ranks videos for each user.

pub mod cf_core;
pub mod cli;
pub mod corpus_io;
pub mod data_model;
pub mod error;
pub mod evaluator;
pub mod fusion;
pub mod hea_attention;
pub mod lstm;
pub mod model;
pub mod synth_gen;
pub mod tensor;
pub mod text_encoder;
pub mod trainer;

pub use cf_core::Variant;
pub use error::{Error, Result};
pub use hea_attention::AttentionMode;
