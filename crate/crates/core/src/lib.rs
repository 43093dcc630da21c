//! Contrastive comparative-relation generation.
//!
//! Given a comparative tuple `(entity_a, entity_b, aspect, opinion)`, a small
//! transformer encoder-decoder is trained to produce text asserting that
//! `entity_a` beats `entity_b` on `aspect`. Besides the usual next-token loss,
//! training uses two margin losses over perturbed tuples (entity swap, aspect
//! substitution, opinion substitution) on the encoder and decoder sides.

pub mod checks;
pub mod contrastive;
pub mod corpus;
pub mod decoder;
pub mod error;
pub mod eval;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{ColoError, Result};
