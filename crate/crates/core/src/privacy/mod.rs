//! Membership inference and differentially private training.

mod accountant;
mod attack;
mod dp;

pub use accountant::{privacy_accountant, rdp_subsampled_gaussian, RDP_ORDERS};
pub use attack::{membership_attack, nearest_distances, AttackResult};
pub use dp::{clip_gradient, dp_sgd_step, dp_sgd_step_with, privatize_named, DpConfig, DpStep, PrivateGrads};
