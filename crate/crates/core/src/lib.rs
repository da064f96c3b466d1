//! Cascaded triplet-conditioned diffusion at desk scale.
//!
//! The crate is organized around five subsystems:
//!
//! - [`data`] — triplet/caption dataset model, annotation ingestion, and the
//!   deterministic TripletWorld renderer with an inverse-rendering oracle.
//! - [`textlang`] — caption tokenization, pluggable text encoders, and
//!   embedding-space analyses (alignment, PCA projection, cluster attribution).
//! - [`balance`] — frame sampling plans: uniform, triplet-balanced, and
//!   instrument-balanced (inverse instrument frequency).
//! - [`diffusion`] — DDPM schedules, the text-conditioned attention U-Net,
//!   training, ancestral sampling, and the base + super-resolution cascade.
//! - [`eval`] — Fréchet distance between feature Gaussians, cosine alignment
//!   scoring, oracle alignment accuracies, and feature-proximity projection.
//!
//! Everything is seeded and single-writer; repeated runs with equal inputs are
//! bit-identical on the same platform.

pub mod balance;
pub mod data;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod nn;
pub mod textlang;
pub mod viz;

pub use data::{AnnotatedFrame, Dataset, Provenance, Triplet, ToyWorldConfig, Vocab};
pub use diffusion::{DenoiserConfig, DenoiserVariant, NoiseSchedule, ScheduleKind};
pub use error::{Error, Result};
pub use eval::GaussianStats;
pub use textlang::{EmbeddingTable, TextEmbedding};
