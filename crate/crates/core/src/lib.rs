//! Narrative-space embeddings learned from triplet comparisons.
//!
//! The crate combines a machine kernel (exact t-SNE over precomputed sentence
//! embeddings) with a human kernel (t-STE over triplet judgments), and ships the
//! machinery around it: corpus loading, neighbor-based grid sampling, a
//! label-aware synthetic annotator, annotation campaigns with catch trials and
//! sentinel examples, and embedding/annotation metrics.
//!
//! Heavy row-wise loops run through [`exec::ExecPolicy`]. With the `parallel`
//! feature (default) they fan out over rayon; results are bit-identical to the
//! sequential path because every reduction happens in a fixed order.

pub mod campaign;
pub mod corpus;
mod error;
pub mod exec;
pub mod kdtree;
pub mod matrix;
pub mod metrics;
pub mod optimizer;
pub mod playback;
pub mod sampling;
pub mod synthetic;
pub mod tsne;
pub mod tste;
pub mod worker;

pub use error::{Error, Result};
pub use matrix::{LowDimEmbedding, Matrix};
