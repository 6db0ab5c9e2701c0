//! Mixed-type clinical timeseries synthesis.
//!
//! A dual variational autoencoder maps continuous measurements and binary
//! intervention channels into one latent space; a coupled recurrent generator
//! trained adversarially produces paired latent trajectories that the decoders
//! turn back into records. Evaluation, downstream-task, membership-attack and
//! differential-privacy tooling sit alongside.

pub mod adversarial;
pub mod autograd;
pub mod checkpoint;
pub mod classifier;
pub mod crn;
pub mod datamodel;
pub mod downstream;
pub mod dualvae;
pub mod error;
pub mod evalsuite;
pub mod ingest;
pub mod nn;
pub mod optim;
pub mod parallel;
pub mod pipeline;
pub mod privacy;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
