//! Fair representation learning with per-node feature masks.
//!
//! The encoder output is multiplied element-wise by a learnable mask per
//! node. Training minimizes
//! `L_I + a * L_G + b * (L_F + L_R)`: task cross-entropy, edge
//! reconstruction, a group MMD and a group-covariance penalty, the last two
//! computed on proxy groups.

mod losses;
mod train;

pub use losses::{
    apply_mask, covariance_penalty, information_loss, mmd_loss, reconstruction_loss, sample_reconstruction_pairs,
    total_loss, LossBreakdown, LossParts,
};
pub use train::{
    median_gamma, select_epoch, train_fairglite, EpochLog, FairConfig, FairForward, FairModel, FairTraining, GammaMode,
    Variant, Weighting, OPEN_MASK_LOGIT,
};

#[cfg(test)]
mod tests;
