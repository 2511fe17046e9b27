//! Desk-scale cross-modal contrastive learning engine: a trainable
//! audio-side encoder aligned to a frozen vision encoder with an InfoNCE
//! objective, optionally distilled from a frozen text teacher, plus the
//! synthetic paired-data generator, training loop, and zero-shot /
//! retrieval evaluation protocols used to study the setup.

pub mod embedding;
pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod losses;
pub mod rng;
pub mod synthdata;
pub mod tensorio;
pub mod training;
pub mod windowing;

pub use embedding::{cosine_similarity, l2_normalize, similarity_matrix, Embedding, SimilarityMatrix};
pub use error::{Error, Result};
pub use losses::{BatchEmbeddings, LossBreakdown};
