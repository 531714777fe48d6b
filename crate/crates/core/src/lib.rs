//! Scent-description alignment engine.
//!
//! Scent descriptions are encoded into an embedding space and matched
//! against a pre-encoded 20-scent catalogue by cosine similarity. On top of
//! that sit the two interactive guessing tasks, the statistics used to
//! evaluate them, embedding-space analyses (centroids, t-SNE, term
//! frequencies) and a language-model-as-participant simulation.

pub mod analysis;
pub mod catalogue;
pub mod game;
pub mod metrics;
pub mod providers;
pub mod sim;
pub mod vecmath;

pub use catalogue::{build_embedding_store, Catalogue, EmbeddingStore, Family, ScentEntry};
pub use game::{GameConfig, GameError, Round, RoundStatus, Session, Task};
pub use providers::{encode_batch, encode_text, Describer, Encoder, MockEncoder};
pub use vecmath::{EmbeddingVector, ScentId, ScoredMatch};
