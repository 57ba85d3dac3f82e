use super::params::VaeParameters;
use crate::error::{Error, Result};
use crate::numerics::{affine, floor_variance, RngStream};

/// Log-variance outputs are clamped to this range before exponentiation.
pub const LOG_VARIANCE_CLAMP: f64 = 30.0;

/// Encoder activations kept for backpropagation.
#[derive(Clone, Debug)]
pub(crate) struct EncoderPass {
    pub hidden: Vec<f64>,
    pub mean: Vec<f64>,
    /// Clamped log-variance.
    pub log_var: Vec<f64>,
    /// Whether each log-variance sat inside the clamp range (gradient passes).
    pub log_var_active: Vec<bool>,
}

/// Decoder activations kept for backpropagation.
#[derive(Clone, Debug)]
pub(crate) struct DecoderPass {
    pub hidden: Vec<f64>,
    pub variance: Vec<f64>,
    pub log_var_active: Vec<bool>,
}

fn clamp_log_var(raw: &mut [f64]) -> Vec<bool> {
    raw.iter_mut()
        .map(|v| {
            let active = v.abs() < LOG_VARIANCE_CLAMP;
            *v = v.clamp(-LOG_VARIANCE_CLAMP, LOG_VARIANCE_CLAMP);
            active
        })
        .collect()
}

fn ensure_finite(what: &str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite(format!("{what} entry {i} is {}", values[i]))),
        None => Ok(()),
    }
}

impl VaeParameters {
    pub(crate) fn encoder_pass(&self, power: &[f64]) -> EncoderPass {
        let dims = self.dims();
        let layout = dims.layout();
        let mut hidden = vec![0.0; dims.hidden_dim];
        affine(
            self.block(&layout.enc_hidden_w),
            self.block(&layout.enc_hidden_b),
            power,
            &mut hidden,
        );
        hidden.iter_mut().for_each(|h| *h = h.tanh());
        let mut mean = vec![0.0; dims.latent_dim];
        affine(
            self.block(&layout.enc_mean_w),
            self.block(&layout.enc_mean_b),
            &hidden,
            &mut mean,
        );
        let mut log_var = vec![0.0; dims.latent_dim];
        affine(
            self.block(&layout.enc_logvar_w),
            self.block(&layout.enc_logvar_b),
            &hidden,
            &mut log_var,
        );
        let log_var_active = clamp_log_var(&mut log_var);
        EncoderPass {
            hidden,
            mean,
            log_var,
            log_var_active,
        }
    }

    pub(crate) fn decoder_pass(&self, z: &[f64]) -> DecoderPass {
        let dims = self.dims();
        let layout = dims.layout();
        let mut hidden = vec![0.0; dims.hidden_dim];
        affine(
            self.block(&layout.dec_hidden_w),
            self.block(&layout.dec_hidden_b),
            z,
            &mut hidden,
        );
        hidden.iter_mut().for_each(|h| *h = h.tanh());
        let mut log_var = vec![0.0; dims.freq_bins];
        affine(
            self.block(&layout.dec_logvar_w),
            self.block(&layout.dec_logvar_b),
            &hidden,
            &mut log_var,
        );
        let log_var_active = clamp_log_var(&mut log_var);
        log_var.iter_mut().for_each(|v| *v = v.exp());
        DecoderPass {
            hidden,
            variance: log_var,
            log_var_active,
        }
    }

    /// Posterior approximation `q(z | s)`: returns the mean and the variance
    /// (`exp` of the log-variance head) for a power spectrum frame.
    pub fn encode(&self, power: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if power.len() != self.freq_bins() {
            return Err(Error::Shape(format!(
                "encoder expects {} bins, got {}",
                self.freq_bins(),
                power.len()
            )));
        }
        ensure_finite("encoder input", power)?;
        let pass = self.encoder_pass(power);
        let variance = pass.log_var.iter().map(|v| v.exp()).collect();
        Ok((pass.mean, variance))
    }

    /// Speech variance `σ²(z)` per frequency bin, clamped to `[e⁻³⁰, e³⁰]`.
    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.freq_bins()];
        self.decode_into(z, &mut out)?;
        Ok(out)
    }

    /// Allocation-light variant of [`VaeParameters::decode`] for sampler inner loops.
    pub fn decode_into(&self, z: &[f64], out: &mut [f64]) -> Result<()> {
        if z.len() != self.latent_dim() || out.len() != self.freq_bins() {
            return Err(Error::Shape(format!(
                "decoder maps {} latents to {} bins, got {} -> {}",
                self.latent_dim(),
                self.freq_bins(),
                z.len(),
                out.len()
            )));
        }
        ensure_finite("latent vector", z)?;
        let dims = self.dims();
        let layout = dims.layout();
        let mut hidden = vec![0.0; dims.hidden_dim];
        affine(
            self.block(&layout.dec_hidden_w),
            self.block(&layout.dec_hidden_b),
            z,
            &mut hidden,
        );
        hidden.iter_mut().for_each(|h| *h = h.tanh());
        affine(
            self.block(&layout.dec_logvar_w),
            self.block(&layout.dec_logvar_b),
            &hidden,
            out,
        );
        out.iter_mut()
            .for_each(|v| *v = v.clamp(-LOG_VARIANCE_CLAMP, LOG_VARIANCE_CLAMP).exp());
        Ok(())
    }
}

/// Reparametrised draw `z = μ + σ ⊙ ε`, `ε ~ N(0, I)`.
pub fn reparam_sample(mean: &[f64], variance: &[f64], stream: &mut RngStream) -> Vec<f64> {
    mean.iter()
        .zip(variance)
        .map(|(m, v)| m + v.sqrt() * stream.gaussian())
        .collect()
}

/// Itakura-Saito divergence `x/y − ln(x/y) − 1`, both arguments floored.
pub fn is_divergence(x: f64, y: f64) -> f64 {
    let ratio = floor_variance(x) / floor_variance(y);
    ratio - ratio.ln() - 1.0
}

/// `½ Σ (ln σ̃² − μ̃² − σ̃²)`. The KL divergence from `q` to `N(0, I)` is
/// `−kl_term − L/2`.
pub fn kl_term(mean: &[f64], variance: &[f64]) -> f64 {
    0.5 * mean
        .iter()
        .zip(variance)
        .map(|(m, v)| v.ln() - m * m - v)
        .sum::<f64>()
}

/// Full `KL(N(μ, diag σ²) ‖ N(0, I))`.
pub fn kl_divergence(mean: &[f64], variance: &[f64]) -> f64 {
    -kl_term(mean, variance) - 0.5 * mean.len() as f64
}
