//! Dual variational autoencoder with a shared latent space.
//!
//! One recurrent encoder/decoder pair per data type. The final affine layer of
//! both encoders and the first affine layer of both decoders are aliased, and
//! the latent codes of the two domains are pulled together by a matching loss
//! and an NT-Xent contrastive loss (plus a per-domain linear classifier loss
//! in conditional mode).

mod losses;
mod model;
mod train;

use serde::{Deserialize, Serialize};

pub use losses::{
    contrastive_loss, contrastive_on_tape, elbo_loss, elbo_on_tape, matching_loss,
    matching_on_tape, mean_pool, semantic_loss, semantic_on_tape, ElboTerms,
    LinearClassifierParams,
};
pub use model::{decode, decode_on_tape, encode, encode_on_tape, init_vae, EncodedVars};
pub use train::{pretrain, pretrain_single_domain, pretrain_with, LossTraceRow, PretrainOutput};

/// Which half of a mixed-type record a network handles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Continuous,
    Discrete,
}

impl Domain {
    pub const BOTH: [Domain; 2] = [Domain::Continuous, Domain::Discrete];

    /// Short tag used in parameter names.
    pub fn tag(self) -> &'static str {
        match self {
            Domain::Continuous => "c",
            Domain::Discrete => "d",
        }
    }

    pub fn other(self) -> Domain {
        match self {
            Domain::Continuous => Domain::Discrete,
            Domain::Discrete => Domain::Continuous,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaeConfig {
    /// Shared latent width.
    pub latent_dim: usize,
    /// Recurrent width of encoders and decoders.
    pub hidden: usize,
    pub beta_kl: f64,
    pub beta0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    /// Contrastive temperature.
    pub tau: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub conditional: bool,
    /// Alias the encoder output layers and decoder input layers.
    pub share_weights: bool,
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig {
            latent_dim: 32,
            hidden: 32,
            beta_kl: 0.1,
            beta0: 1.0,
            beta1: 0.1,
            beta2: 0.1,
            beta3: 0.1,
            tau: 0.5,
            lr: 1e-3,
            epochs: 30,
            batch_size: 64,
            conditional: false,
            share_weights: true,
        }
    }
}

impl VaeConfig {
    pub fn validate(&self) -> crate::Result<()> {
        let weights = [self.beta_kl, self.beta0, self.beta1, self.beta2, self.beta3];
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(crate::Error::InvalidConfig("loss weights must be >= 0".into()));
        }
        if !(self.tau > 0.0) {
            return Err(crate::Error::InvalidConfig("tau must be > 0".into()));
        }
        if self.latent_dim == 0 || self.hidden == 0 || self.batch_size == 0 {
            return Err(crate::Error::InvalidConfig(
                "latent_dim, hidden and batch_size must be >= 1".into(),
            ));
        }
        if !(self.lr > 0.0) {
            return Err(crate::Error::InvalidConfig("lr must be > 0".into()));
        }
        Ok(())
    }
}
