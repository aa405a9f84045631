//! Factorized multi-modal topic model.
//!
//! Documents carry one bag of words per modality (for example text tokens and
//! quantized visual words). Each modality has its own dictionary of topics and
//! its own truncated stick-breaking weights, while the per-document topic
//! activations `xi` of all modalities are drawn from one joint Gaussian. The
//! cross-modality blocks of that Gaussian's covariance link topics that are
//! shared between modalities; topics with no cross-modal correlation are
//! private to their modality.
//!
//! The crate covers the whole pipeline:
//!
//! * [`corpus`]: loading, validating and splitting multi-modal corpora
//! * [`generative`]: model parameters and the forward sampler
//! * [`inference`]: truncated variational inference and the training loop
//! * [`prediction`]: inferring a missing modality from an observed one
//! * [`analysis`]: shared/private topic identification
//! * [`evaluation`]: train and conditional perplexity
//! * [`persistence`]: the versioned model archive

pub mod analysis;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod generative;
pub mod inference;
pub mod linalg;
pub mod par;
pub mod persistence;
pub mod prediction;
mod special;

pub use error::{Error, Result};
