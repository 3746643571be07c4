//! Missing-attribute completion across heterogeneous, partially labeled
//! corpora, and a pairwise head that predicts relation traits from two
//! feature vectors plus spatial cues.
//!
//! The attribute pipeline runs in two stages. Stage 1 fits one masked
//! logistic classifier per attribute ([`classifiers::train_bank`]). Stage 2
//! ([`mrf::stage2_loop`]) alternates MRF attribute propagation over a
//! locally scaled kNN graph ([`affinity::build_graph`]) with retraining of
//! the classifiers on ground-truth plus pseudo labels.

pub mod affinity;
pub mod classifiers;
pub mod data;
pub mod error;
pub mod eval;
pub mod math;
pub mod mrf;
pub mod oracle;
pub mod relation;
pub mod synth;

pub use error::{Error, Result};
