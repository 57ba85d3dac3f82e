use rayon::prelude::*;

use super::model::{GainVector, LatentSamples, NoiseNmf};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngStream, VARIANCE_FLOOR};
use crate::vae::VaeParameters;

/// Unnormalized log posterior of one frame's latent vector. The mixture model
/// is the production implementation; tests inject closed-form surrogates.
pub trait LatentTarget {
    fn latent_dim(&self) -> usize;
    fn log_density(&self, z: &[f64]) -> Result<f64>;
}

/// `ln p(z)` for the standard normal prior, dropping the normalizer.
pub fn log_prior(z: &[f64]) -> f64 {
    -0.5 * z.iter().map(|v| v * v).sum::<f64>()
}

/// `Σ_f [−ln(π v_f) − p_f / v_f]` with `v_f = g σ_f² + b_f`, floored.
pub fn mixture_loglik_from_variances(
    power: &[f64],
    speech_variance: &[f64],
    noise_variance: &[f64],
    gain: f64,
) -> Result<f64> {
    if power.len() != speech_variance.len() || power.len() != noise_variance.len() {
        return Err(Error::Shape(format!(
            "frame lengths differ: power {}, speech {}, noise {}",
            power.len(),
            speech_variance.len(),
            noise_variance.len()
        )));
    }
    let mut total = 0.0;
    for ((&p, &s), &b) in power.iter().zip(speech_variance).zip(noise_variance) {
        let v = (gain * s + b).max(VARIANCE_FLOOR);
        total -= (std::f64::consts::PI * v).ln() + p / v;
    }
    if !total.is_finite() {
        return Err(Error::NonFinite(format!("mixture log-likelihood is {total}")));
    }
    Ok(total)
}

/// Log-likelihood of one mixture frame given `z`, decoding `σ²(z)` with the VAE.
pub fn mixture_loglik_frame(
    power: &[f64],
    z: &[f64],
    vae: &VaeParameters,
    noise_variance: &[f64],
    gain: f64,
) -> Result<f64> {
    let speech = vae.decode(z)?;
    mixture_loglik_from_variances(power, &speech, noise_variance, gain)
}

/// Posterior target for frame `n` of the mixture model.
pub struct MixtureFrameTarget<'a> {
    pub vae: &'a VaeParameters,
    pub power: &'a [f64],
    pub noise_variance: &'a [f64],
    pub gain: f64,
}

impl LatentTarget for MixtureFrameTarget<'_> {
    fn latent_dim(&self) -> usize {
        self.vae.latent_dim()
    }

    fn log_density(&self, z: &[f64]) -> Result<f64> {
        Ok(mixture_loglik_frame(self.power, z, self.vae, self.noise_variance, self.gain)? + log_prior(z))
    }
}

/// Random-walk Metropolis-Hastings state for a single frame.
#[derive(Clone, Debug)]
pub struct LatentChain {
    state: Vec<f64>,
    /// Log density of `state` under the target it was last evaluated against.
    log_density: Option<f64>,
    retained: Vec<Vec<f64>>,
    stream: RngStream,
    proposals: u64,
    accepted: u64,
}

impl LatentChain {
    pub fn new(initial: Vec<f64>, stream: RngStream) -> Result<Self> {
        if initial.is_empty() || initial.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("chain needs a finite, nonempty initial state".into()));
        }
        Ok(Self {
            state: initial,
            log_density: None,
            retained: Vec::new(),
            stream,
            proposals: 0,
            accepted: 0,
        })
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn retained(&self) -> &[Vec<f64>] {
        &self.retained
    }

    pub fn stream(&self) -> &RngStream {
        &self.stream
    }

    /// Fraction of proposals accepted since the last reset.
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposals == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposals as f64
        }
    }

    /// Re-evaluates the cached density; needed whenever the target changes.
    pub fn refresh<T: LatentTarget + ?Sized>(&mut self, target: &T) -> Result<()> {
        self.log_density = Some(target.log_density(&self.state)?);
        Ok(())
    }

    fn reset_statistics(&mut self) {
        self.retained.clear();
        self.proposals = 0;
        self.accepted = 0;
    }
}

/// One random-walk step with proposal `N(z, ε² I)`. Returns whether the move
/// was accepted.
pub fn mh_step<T: LatentTarget + ?Sized>(
    chain: &mut LatentChain,
    target: &T,
    proposal_variance: f64,
) -> Result<bool> {
    let current = match chain.log_density {
        Some(v) => v,
        None => {
            chain.refresh(target)?;
            chain.log_density.unwrap()
        }
    };
    let scale = proposal_variance.sqrt();
    let proposal: Vec<f64> = chain.state.iter().map(|&z| z + scale * chain.stream.gaussian()).collect();
    let u = chain.stream.uniform();
    chain.proposals += 1;
    let candidate = match target.log_density(&proposal) {
        Ok(v) => v,
        // A proposal whose density cannot be evaluated has zero posterior mass.
        Err(Error::NonFinite(_)) => f64::NEG_INFINITY,
        Err(e) => return Err(e),
    };
    let log_ratio = candidate - current;
    let accept = log_ratio >= 0.0 || u < log_ratio.exp();
    if accept {
        chain.state = proposal;
        chain.log_density = Some(candidate);
        chain.accepted += 1;
    }
    Ok(accept)
}

/// Runs `iterations` steps and keeps the states after `burn_in`.
pub fn run_chain<T: LatentTarget + ?Sized>(
    chain: &mut LatentChain,
    target: &T,
    iterations: usize,
    burn_in: usize,
    proposal_variance: f64,
) -> Result<()> {
    if burn_in >= iterations {
        return Err(Error::Config(format!("burn-in {burn_in} must be below {iterations} iterations")));
    }
    chain.reset_statistics();
    chain.refresh(target)?;
    for m in 0..iterations {
        mh_step(chain, target, proposal_variance)?;
        if m >= burn_in {
            chain.retained.push(chain.state.clone());
        }
    }
    Ok(())
}

/// Frame-wise power and noise variance columns for the sampler.
pub(crate) fn columns(m: &Matrix) -> Vec<Vec<f64>> {
    let (rows, cols) = m.shape();
    (0..cols).map(|n| (0..rows).map(|f| m[(f, n)]).collect()).collect()
}

/// One E-step: every chain runs against its frame's posterior under the
/// current parameters. Frames run in parallel; each chain owns its RNG stream,
/// so the result does not depend on the schedule.
#[allow(clippy::too_many_arguments)]
pub fn e_step(
    chains: &mut [LatentChain],
    power: &Matrix,
    vae: &VaeParameters,
    nmf: &NoiseNmf,
    gains: &GainVector,
    iterations: usize,
    burn_in: usize,
    proposal_variance: f64,
) -> Result<LatentSamples> {
    let frames = power.cols();
    if chains.len() != frames || gains.len() != frames || nmf.frames() != frames {
        return Err(Error::Shape(format!(
            "{} chains, {} gains and {} noise frames for {frames} mixture frames",
            chains.len(),
            gains.len(),
            nmf.frames()
        )));
    }
    if power.rows() != vae.freq_bins() || nmf.freq_bins() != vae.freq_bins() {
        return Err(Error::Shape(format!(
            "mixture has {} bins, noise model {}, VAE {}",
            power.rows(),
            nmf.freq_bins(),
            vae.freq_bins()
        )));
    }
    let power_cols = columns(power);
    let noise_cols = columns(&nmf.variance());
    chains.par_iter_mut().enumerate().try_for_each(|(n, chain)| {
        let target = MixtureFrameTarget {
            vae,
            power: &power_cols[n],
            noise_variance: &noise_cols[n],
            gain: gains.as_slice()[n],
        };
        run_chain(chain, &target, iterations, burn_in, proposal_variance)
    })?;
    LatentSamples::new(chains.iter().map(|c| c.retained.clone()).collect())
}

pub fn mean_acceptance(chains: &[LatentChain]) -> f64 {
    if chains.is_empty() {
        return 0.0;
    }
    chains.iter().map(LatentChain::acceptance_rate).sum::<f64>() / chains.len() as f64
}
