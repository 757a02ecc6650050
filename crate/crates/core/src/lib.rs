//! Conflict-aware evidential fusion for incomplete multi-view classification.
//!
//! The crate is organised bottom-up:
//!
//! * [`numerics`]: tensors, a define-by-run autodiff graph, and ln Γ / ψ.
//! * [`subjective_logic`]: opinions, the opinion/Dirichlet bijection,
//!   pairwise and multi-view fusion, and the Jensen–Shannon conflict degree.
//! * [`losses`]: evidential cross-entropy, the KL regulariser, the
//!   conflict-consistency loss and the VAE objective, all differentiable.
//! * [`networks`]: per-view feature extractors, evidence heads and the
//!   masking VAE used for latent imputation.
//! * [`data`]: multi-view datasets, CSV ingestion, missing masks and
//!   conflict injection.
//! * [`pipeline`]: the three-phase training schedule, prediction and
//!   evaluation.

pub mod data;
pub mod error;
pub mod losses;
pub mod networks;
pub mod numerics;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod subjective_logic;

pub use error::{Error, Result};
pub use numerics::{Graph, Tensor, Var};
pub use subjective_logic::{EvidenceVector, FusionMode, Opinion};
