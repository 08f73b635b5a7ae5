//! Learned dynamics: latent transition model with per-domain action encoders,
//! trained as an ensemble whose disagreement penalizes model rewards.

mod ensemble;
mod loss;
mod member;
mod train;

pub use ensemble::{
    max_std, penalize, uncertainty_from_predictions, DynamicsEnsemble, DEFAULT_PENALTY,
    ENSEMBLE_SIZE,
};
pub use loss::{
    gaussian_kl, member_loss, member_loss_values, LossBatch, LossValues, MemberGrads, Objective,
};
pub use member::{
    latent_noise, DynamicsArch, DynamicsMember, Prediction, LATENT_DIM, LOG_STD_MAX, LOG_STD_MIN,
    MEMBER_MAGIC,
};
pub use train::{
    fit_normalizer, target_schedule, train_dynamics, train_member, DynHistory, DynLossRecord,
    DynMode, DynTrainConfig,
};
