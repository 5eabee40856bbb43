//! Neural semantic parsing toolkit.
//!
//! Questions and knowledgebase queries are embedded into a shared latent
//! space by a noise-contrastive bilingual compositional model ([`bicvm`]).
//! A conditional log-bilinear language model ([`cnlm`]) then generates query
//! tokens from a question's latent vector. [`pipeline`] ties the two stages
//! together; [`cli`] exposes training, generation, evaluation and gradient
//! checking as batch commands.

pub mod bicvm;
pub mod cli;
pub mod cnlm;
pub mod composition;
pub mod corpus;
pub mod error;
pub mod gradcheck;
pub mod lexicon;
pub mod numerics;
pub mod optim;
pub mod pipeline;

pub use bicvm::{BiCvmHyper, BiCvmParams};
pub use cnlm::{CnlmHyper, CnlmParams, Hypothesis};
pub use composition::{CompositionFn, CompositionMode, SequenceEncoder};
pub use corpus::{generate_toy_corpus, ParallelCorpus};
pub use error::{Error, Result};
pub use lexicon::{EmbeddingTable, TokenId, Vocabulary};
pub use numerics::{Matrix, Rng, Vector};
pub use pipeline::{train_full, DecodeConfig, DecodeStrategy, SemanticParser, TrainConfig};
