//! Speech variance model: a fully connected VAE with tanh hidden layers
//! whose decoder outputs per-bin log-variances.

mod elbo;
mod io;
mod network;
mod params;
mod train;

pub use elbo::{
    accumulate_gradient, elbo_estimate, elbo_gradient, elbo_gradient_with_noise, elbo_with_noise,
    neg_kl_term_grad, ElboEvaluation,
};
pub use io::{load_model, model_from_json, model_to_json, save_model, MODEL_SCHEMA};
pub use network::{is_divergence, kl_divergence, kl_term, reparam_sample, LOG_VARIANCE_CLAMP};
pub use params::{VaeDims, VaeParameters};
pub use train::{train, CleanFrameSet, EpochRecord, StopReason, TrainingConfig, TrainingOutcome};
