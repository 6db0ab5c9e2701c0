//! Recurrent discriminators, adversarial objectives, joint training and synthesis.

mod discriminator;
mod sample;
mod train;

use serde::{Deserialize, Serialize};

use crate::datamodel::NoisePrior;

pub use discriminator::{
    discriminate, discriminator_logits_on_tape, gan_losses, gan_losses_on_tape, init_discriminators,
    uses_cross_domain, PROB_EPS,
};
pub use sample::{sample, sample_with_names};
pub use train::{train_joint, train_joint_with, GanTraceRow, JointOutput, JointTrainer};

/// Generator objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossForm {
    /// `mean[log(1 − D(fake))]`, minimized.
    Saturating,
    /// `−mean[log D(fake)]`.
    #[default]
    NonSaturating,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanConfig {
    pub lr_g: f64,
    pub lr_d: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub d_steps_per_g: usize,
    pub loss_form: LossForm,
    pub conditional: bool,
    pub seed: u64,
    /// Width `V` of the generator noise.
    pub noise_dim: usize,
    pub gen_hidden: usize,
    pub disc_hidden: usize,
    /// Keep the pretrained decoders fixed during joint training.
    pub freeze_decoders: bool,
    pub noise_prior: NoisePrior,
    /// Feed the discriminator across-batch channel means and spread at each
    /// step. Ignored under DP, where examples are scored one at a time.
    pub minibatch_stats: bool,
    /// Show each discriminator the other domain's sequence alongside its own.
    pub cross_domain: bool,
    /// First-moment decay of both Adam optimizers.
    pub adam_beta1: f64,
    /// Decay of a moving average of generator weights, used for sampling
    /// once training stops. 0 disables it.
    pub generator_ema: f64,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            lr_g: 1e-4,
            lr_d: 1e-4,
            iterations: 300,
            batch_size: 64,
            d_steps_per_g: 1,
            loss_form: LossForm::NonSaturating,
            conditional: false,
            seed: 0,
            noise_dim: 32,
            gen_hidden: 32,
            disc_hidden: 32,
            freeze_decoders: false,
            noise_prior: NoisePrior::Uniform,
            minibatch_stats: true,
            cross_domain: false,
            adam_beta1: 0.9,
            generator_ema: 0.0,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if !(self.lr_g > 0.0 && self.lr_d > 0.0) {
            return Err(crate::Error::InvalidConfig("learning rates must be > 0".into()));
        }
        if self.batch_size == 0 || self.noise_dim == 0 || self.gen_hidden == 0 || self.disc_hidden == 0 {
            return Err(crate::Error::InvalidConfig(
                "batch_size, noise_dim, gen_hidden and disc_hidden must be >= 1".into(),
            ));
        }
        if self.d_steps_per_g == 0 {
            return Err(crate::Error::InvalidConfig("d_steps_per_g must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) {
            return Err(crate::Error::InvalidConfig("adam_beta1 must lie in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.generator_ema) {
            return Err(crate::Error::InvalidConfig("generator_ema must lie in [0, 1)".into()));
        }
        Ok(())
    }
}
