//! Synthetic data generators and slow reference implementations used to
//! check the `pamcurate` pipeline.
//!
//! Nothing here is tuned for speed. The oracles favour obviously-correct
//! code over clever code.

pub mod fixtures;
pub mod mixture;
pub mod oracle;
pub mod traffic;

pub use mixture::{gen_mixture, Mixture, MixtureSpec};
pub use oracle::{
    dense_knee_rank, exact_topn_per_cluster, lloyd_reference, tail_exponent_mle, LloydReference,
};
pub use traffic::{gen_traffic, sample_occurrences, Traffic, TrafficSpec};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Core(#[from] pamcurate::Error),
}

pub type Result<T> = std::result::Result<T, SynthError>;

pub(crate) fn spec_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(SynthError::Spec(msg.into()))
}
