//! Offline actor-critic learning on augmented source, target and model-generated data.

mod agent;
mod train;

pub use agent::{
    bc_weights, q_lambda, ActorLoss, CriticLoss, PolicyAgent, WeightMode, AGENT_MAGIC,
    DEFAULT_ALPHA, DEFAULT_BC_WEIGHT, DEFAULT_GAMMA, DEFAULT_TAU, NOISE_CLIP, POLICY_NOISE,
    Q_SCALE_FLOOR, WEIGHT_CLAMP,
};
pub use train::{rollout_fake, train_mobody, PolicyMetric, PolicyTrainConfig, ROLLOUT_NOISE};
