mod enhancer;
mod model;
mod sampler;
mod updates;

pub use enhancer::{
    enhance_spectrogram, init_chains, posterior_mask, reconstruct, run_mcem, write_trace_csv, Enhancement,
    IterationTrace, McemResult,
};
pub use model::{EnhancerConfig, GainInit, GainVector, LatentSamples, NoiseNmf, SpeechVariances};
pub use sampler::{
    e_step, log_prior, mean_acceptance, mh_step, mixture_loglik_frame, mixture_loglik_from_variances, run_chain,
    LatentChain, LatentTarget, MixtureFrameTarget,
};
pub use updates::{q_tilde, update_g, update_h, update_w, verify_auxiliary};
