use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use super::model::{EnhancerConfig, GainInit, GainVector, LatentSamples, NoiseNmf, SpeechVariances};
use super::sampler::{e_step, mean_acceptance, LatentChain};
use super::updates::{q_tilde, update_g, update_h, update_w};
use crate::audio::ComplexSpectrogram;
use crate::error::{Error, Result};
use crate::numerics::{derive_seed, Matrix, RngStream, VARIANCE_FLOOR};
use crate::vae::VaeParameters;

const INIT_TAG: u64 = 0x11;
const CHAIN_TAG: u64 = 0x12;

/// Q̃ after the E-step and after each M-step sub-update of one EM iteration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationTrace {
    pub iteration: usize,
    pub q_after_e_step: f64,
    pub q_after_h: f64,
    pub q_after_w: f64,
    pub q_after_g: f64,
    pub mean_acceptance: f64,
}

impl IterationTrace {
    pub fn q_tilde(&self) -> f64 {
        self.q_after_g
    }

    /// Sub-update values in order, for monotonicity checks.
    pub fn m_step_sequence(&self) -> [f64; 4] {
        [self.q_after_e_step, self.q_after_h, self.q_after_w, self.q_after_g]
    }
}

#[derive(Clone, Debug)]
pub struct McemResult {
    pub nmf: NoiseNmf,
    pub gains: GainVector,
    /// Common value every gain started from.
    pub initial_gain: f64,
    pub trace: Vec<IterationTrace>,
    pub chains: Vec<LatentChain>,
    pub converged: bool,
}

/// Writes `iter,q_tilde,mean_accept` rows.
pub fn write_trace_csv(trace: &[IterationTrace], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "iter,q_tilde,mean_accept")?;
    for t in trace {
        writeln!(out, "{},{},{}", t.iteration, t.q_tilde(), t.mean_acceptance)?;
    }
    Ok(())
}

/// Chains start at the encoder mean of each mixture frame.
pub fn init_chains(power: &Matrix, vae: &VaeParameters, seed: u64) -> Result<Vec<LatentChain>> {
    let chain_seed = derive_seed(seed, CHAIN_TAG);
    (0..power.cols())
        .into_par_iter()
        .map(|n| {
            let frame: Vec<f64> = (0..power.rows()).map(|f| power[(f, n)]).collect();
            let (mean, _) = vae.encode(&frame)?;
            LatentChain::new(mean, RngStream::new(chain_seed, n as u64))
        })
        .collect()
}

fn check_input(mixture: &ComplexSpectrogram, vae: &VaeParameters, config: &EnhancerConfig) -> Result<Matrix> {
    config.validate()?;
    if mixture.freq_bins() != vae.freq_bins() {
        return Err(Error::Shape(format!(
            "mixture has {} frequency bins, VAE expects {}",
            mixture.freq_bins(),
            vae.freq_bins()
        )));
    }
    let power = mixture.power();
    if power.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("mixture spectrogram has non-finite power".into()));
    }
    Ok(power)
}

fn non_finite(stage: &str, iteration: usize, err: Error, nmf: &NoiseNmf, gains: &GainVector) -> Error {
    match err {
        Error::NonFinite(msg) => Error::NonFinite(format!(
            "{msg} after {stage} at EM iteration {iteration} (noise variance mean {:.3e}, gain range [{:.3e}, {:.3e}])",
            nmf.variance().mean(),
            gains.as_slice().iter().cloned().fold(f64::INFINITY, f64::min),
            gains.as_slice().iter().cloned().fold(0.0, f64::max),
        )),
        other => other,
    }
}

/// Common starting gain matching the decoded prior-mean spectrum to the mean
/// mixture power; 1 for a mixture at training loudness.
fn initial_gain(power: &Matrix, vae: &VaeParameters) -> Result<f64> {
    let prior = vae.decode(&vec![0.0; vae.latent_dim()])?;
    let prior_mean = prior.iter().sum::<f64>() / prior.len() as f64;
    Ok((power.mean() / prior_mean).max(VARIANCE_FLOOR))
}

/// Monte Carlo EM for the noise NMF and frame gains of one mixture.
pub fn run_mcem(mixture: &ComplexSpectrogram, vae: &VaeParameters, config: &EnhancerConfig) -> Result<McemResult> {
    let power = check_input(mixture, vae, config)?;
    let (freq_bins, frames) = power.shape();
    let mut init_rng = RngStream::new(derive_seed(config.seed, INIT_TAG), 0);
    let mut nmf = NoiseNmf::random(freq_bins, frames, config.noise_rank, power.mean() * config.noise_init_fraction, &mut init_rng)?;
    let level = match (config.update_gains, config.gain_init) {
        (true, GainInit::MixtureLevel) => initial_gain(&power, vae)?,
        _ => 1.0,
    };
    let mut gains = GainVector::new(vec![level; frames])?;
    let encoder_input = power.map(|p| p / level);
    let mut chains = init_chains(&encoder_input, vae, config.seed)?;

    let mut trace: Vec<IterationTrace> = Vec::new();
    let mut converged = false;
    for iteration in 0..config.max_iterations {
        let samples = e_step(
            &mut chains,
            &power,
            vae,
            &nmf,
            &gains,
            config.estep_iterations,
            config.estep_burn_in,
            config.proposal_variance,
        )?;
        let speech = SpeechVariances::decode(vae, &samples)?;
        let q = |nmf: &NoiseNmf, gains: &GainVector, stage: &str| {
            q_tilde(&power, &speech, nmf, gains).map_err(|e| non_finite(stage, iteration, e, nmf, gains))
        };
        let q_after_e_step = q(&nmf, &gains, "E-step")?;
        update_h(&mut nmf, &power, &speech, &gains)?;
        let q_after_h = q(&nmf, &gains, "H update")?;
        update_w(&mut nmf, &power, &speech, &gains)?;
        let q_after_w = q(&nmf, &gains, "W update")?;
        if config.update_gains {
            update_g(&mut gains, &power, &speech, &nmf)?;
        }
        let q_after_g = q(&nmf, &gains, "gain update")?;
        let record = IterationTrace {
            iteration,
            q_after_e_step,
            q_after_h,
            q_after_w,
            q_after_g,
            mean_acceptance: mean_acceptance(&chains),
        };
        log::debug!(
            "EM iteration {iteration}: Q̃ {q_after_g:.6e}, acceptance {:.3}",
            record.mean_acceptance
        );
        let previous = trace.last().map(IterationTrace::q_tilde);
        trace.push(record);
        if let Some(prev) = previous {
            if ((q_after_g - prev) / prev).abs() < config.tolerance {
                converged = true;
                break;
            }
        }
    }
    Ok(McemResult {
        nmf,
        gains,
        initial_gain: level,
        trace,
        chains,
        converged,
    })
}

/// Posterior-mean Wiener mask `(1/R) Σ_r gσ² / (gσ² + W_b H_b)`.
pub fn posterior_mask(speech: &SpeechVariances, nmf: &NoiseNmf, gains: &GainVector) -> Result<Matrix> {
    let (rows, cols) = speech.shape();
    if nmf.freq_bins() != rows || nmf.frames() != cols || gains.len() != cols {
        return Err(Error::Shape("mask inputs disagree in shape".into()));
    }
    let noise = nmf.variance();
    let g = gains.as_slice();
    let mut mask = Matrix::zeros(rows, cols);
    for vs in speech.iter() {
        for (i, (m, (&s, &b))) in mask
            .as_mut_slice()
            .iter_mut()
            .zip(vs.as_slice().iter().zip(noise.as_slice()))
            .enumerate()
        {
            let speech_part = g[i % cols] * s;
            *m += speech_part / (speech_part + b).max(VARIANCE_FLOOR);
        }
    }
    let r = speech.samples() as f64;
    mask.map_inplace(|v| (v / r).clamp(0.0, 1.0));
    Ok(mask)
}

/// Continues the chains for the reconstruction run and masks the mixture.
/// The output is the gain-scaled speech estimate, synthesized as is.
pub fn reconstruct(
    mixture: &ComplexSpectrogram,
    vae: &VaeParameters,
    nmf: &NoiseNmf,
    gains: &GainVector,
    chains: &mut [LatentChain],
    config: &EnhancerConfig,
) -> Result<(ComplexSpectrogram, Matrix)> {
    let power = check_input(mixture, vae, config)?;
    let samples: LatentSamples = e_step(
        chains,
        &power,
        vae,
        nmf,
        gains,
        config.reconstruction_iterations,
        config.reconstruction_burn_in,
        config.proposal_variance,
    )?;
    let speech = SpeechVariances::decode(vae, &samples)?;
    let mask = posterior_mask(&speech, nmf, gains)?;
    Ok((mixture.masked(&mask)?, mask))
}

#[derive(Clone, Debug)]
pub struct Enhancement {
    pub estimate: ComplexSpectrogram,
    pub mask: Matrix,
    pub result: McemResult,
}

pub fn enhance_spectrogram(
    mixture: &ComplexSpectrogram,
    vae: &VaeParameters,
    config: &EnhancerConfig,
) -> Result<Enhancement> {
    let mut result = run_mcem(mixture, vae, config)?;
    let (estimate, mask) = reconstruct(mixture, vae, &result.nmf, &result.gains, &mut result.chains, config)?;
    Ok(Enhancement {
        estimate,
        mask,
        result,
    })
}
