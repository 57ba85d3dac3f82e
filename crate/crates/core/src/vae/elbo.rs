//! Negative-ELBO loss for one clean power frame and its pathwise gradient.
//!
//! With `R` reparametrised draws `z⁽ʳ⁾ = μ̃ + σ̃ ⊙ ε⁽ʳ⁾` the per-frame loss is
//!
//! ```text
//! loss = (1/R) Σ_r Σ_f d_IS(|s_f|²; σ_f²(z⁽ʳ⁾)) − ½ Σ_l (ln σ̃_l² − μ̃_l² − σ̃_l²)
//! ```
//!
//! so minimising it maximises the ELBO up to a constant. Gradients treat the
//! noise draws `ε` as fixed.

use super::network::{is_divergence, kl_term, DecoderPass, EncoderPass};
use super::params::VaeParameters;
use crate::error::{Error, Result};
use crate::numerics::{floor_variance, RngStream, VARIANCE_FLOOR};

/// Intermediates of one loss evaluation.
#[derive(Clone, Debug)]
pub struct ElboEvaluation {
    pub loss: f64,
    /// Mean over draws of `Σ_f d_IS`.
    pub reconstruction: f64,
    pub kl_term: f64,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// The standard-normal draws used, one row per Monte Carlo sample.
    pub noise: Vec<Vec<f64>>,
    /// `Σ_f d_IS` for each draw.
    pub per_sample_reconstruction: Vec<f64>,
}

fn check_frame(params: &VaeParameters, power: &[f64], noise: &[Vec<f64>]) -> Result<()> {
    if power.len() != params.freq_bins() {
        return Err(Error::Shape(format!(
            "frame has {} bins, model expects {}",
            power.len(),
            params.freq_bins()
        )));
    }
    if noise.is_empty() {
        return Err(Error::Config("at least one Monte Carlo draw is required".into()));
    }
    if let Some(eps) = noise.iter().find(|e| e.len() != params.latent_dim()) {
        return Err(Error::Shape(format!(
            "noise draw has {} entries, latent dimension is {}",
            eps.len(),
            params.latent_dim()
        )));
    }
    if power.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::Domain("power frame must be finite and nonnegative".into()));
    }
    Ok(())
}

fn latent_from_noise(enc: &EncoderPass, eps: &[f64]) -> Vec<f64> {
    enc.mean
        .iter()
        .zip(&enc.log_var)
        .zip(eps)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect()
}

/// Loss with externally supplied noise draws.
pub fn elbo_with_noise(params: &VaeParameters, power: &[f64], noise: &[Vec<f64>]) -> Result<ElboEvaluation> {
    check_frame(params, power, noise)?;
    let enc = params.encoder_pass(power);
    let variance: Vec<f64> = enc.log_var.iter().map(|v| v.exp()).collect();
    let mut per_sample = Vec::with_capacity(noise.len());
    for eps in noise {
        let z = latent_from_noise(&enc, eps);
        let dec = params.decoder_pass(&z);
        per_sample.push(
            power
                .iter()
                .zip(&dec.variance)
                .map(|(&p, &v)| is_divergence(p, v))
                .sum::<f64>(),
        );
    }
    let reconstruction = per_sample.iter().sum::<f64>() / noise.len() as f64;
    let kl = kl_term(&enc.mean, &variance);
    let loss = reconstruction - kl;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!(
            "ELBO loss {loss} (reconstruction {reconstruction}, kl term {kl}, encoder mean {:?})",
            enc.mean
        )));
    }
    Ok(ElboEvaluation {
        loss,
        reconstruction,
        kl_term: kl,
        mean: enc.mean,
        variance,
        noise: noise.to_vec(),
        per_sample_reconstruction: per_sample,
    })
}

/// Monte Carlo loss estimate with `draws` reparametrised samples from `stream`.
pub fn elbo_estimate(
    params: &VaeParameters,
    power: &[f64],
    draws: usize,
    stream: &mut RngStream,
) -> Result<ElboEvaluation> {
    let noise: Vec<Vec<f64>> = (0..draws)
        .map(|_| stream.sample_gaussian(params.latent_dim()))
        .collect();
    elbo_with_noise(params, power, &noise)
}

/// `(∂/∂μ̃, ∂/∂ln σ̃²)` of `−kl_term`.
pub fn neg_kl_term_grad(mean: &[f64], log_var: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let d_mean = mean.to_vec();
    let d_log_var = log_var.iter().map(|lv| 0.5 * (lv.exp() - 1.0)).collect();
    (d_mean, d_log_var)
}

/// `out += scale · a ⊗ b` for a row-major `a.len() × b.len()` block.
fn add_outer(out: &mut [f64], a: &[f64], b: &[f64], scale: f64) {
    for (row, &ai) in out.chunks_exact_mut(b.len()).zip(a) {
        let s = scale * ai;
        if s == 0.0 {
            continue;
        }
        for (o, &bj) in row.iter_mut().zip(b) {
            *o += s * bj;
        }
    }
}

fn add_scaled(out: &mut [f64], a: &[f64], scale: f64) {
    out.iter_mut().zip(a).for_each(|(o, v)| *o += scale * v);
}

/// `out = Wᵀ δ` for row-major `W` of shape `δ.len() × out.len()`.
fn transpose_apply(w: &[f64], delta: &[f64], out: &mut [f64]) {
    out.fill(0.0);
    for (row, &d) in w.chunks_exact(out.len()).zip(delta) {
        if d == 0.0 {
            continue;
        }
        for (o, &wij) in out.iter_mut().zip(row) {
            *o += wij * d;
        }
    }
}

/// Loss and its gradient with respect to every parameter; the gradient is
/// scaled by `weight` and added into `grad`.
pub fn accumulate_gradient(
    params: &VaeParameters,
    power: &[f64],
    noise: &[Vec<f64>],
    weight: f64,
    grad: &mut [f64],
) -> Result<f64> {
    check_frame(params, power, noise)?;
    if grad.len() != params.as_flat().len() {
        return Err(Error::Shape("gradient buffer does not match parameter count".into()));
    }
    let dims = params.dims();
    let layout = dims.layout();
    let enc = params.encoder_pass(power);
    let r_inv = 1.0 / noise.len() as f64;

    let variance: Vec<f64> = enc.log_var.iter().map(|v| v.exp()).collect();
    let mut loss = -kl_term(&enc.mean, &variance);
    let (mut d_mean, mut d_log_var) = neg_kl_term_grad(&enc.mean, &enc.log_var);

    let mut d_dec_out = vec![0.0; dims.freq_bins];
    let mut d_dec_hidden = vec![0.0; dims.hidden_dim];
    let mut d_z = vec![0.0; dims.latent_dim];
    let mut reconstruction = 0.0;
    for eps in noise {
        let z = latent_from_noise(&enc, eps);
        let dec: DecoderPass = params.decoder_pass(&z);
        for f in 0..dims.freq_bins {
            let target = floor_variance(power[f]);
            let model = floor_variance(dec.variance[f]);
            reconstruction += is_divergence(target, model);
            // d/d(ln σ²) of p/σ² + ln σ² is 1 − p/σ²; flat under the clamp or floor.
            d_dec_out[f] = if dec.log_var_active[f] && dec.variance[f] > VARIANCE_FLOOR {
                r_inv * (1.0 - target / model)
            } else {
                0.0
            };
        }
        add_outer(&mut grad[layout.dec_logvar_w.clone()], &d_dec_out, &dec.hidden, weight);
        add_scaled(&mut grad[layout.dec_logvar_b.clone()], &d_dec_out, weight);
        transpose_apply(params.block(&layout.dec_logvar_w), &d_dec_out, &mut d_dec_hidden);
        d_dec_hidden
            .iter_mut()
            .zip(&dec.hidden)
            .for_each(|(d, h)| *d *= 1.0 - h * h);
        add_outer(&mut grad[layout.dec_hidden_w.clone()], &d_dec_hidden, &z, weight);
        add_scaled(&mut grad[layout.dec_hidden_b.clone()], &d_dec_hidden, weight);
        transpose_apply(params.block(&layout.dec_hidden_w), &d_dec_hidden, &mut d_z);
        // z = μ + exp(lv / 2) ε
        for l in 0..dims.latent_dim {
            d_mean[l] += d_z[l];
            d_log_var[l] += d_z[l] * 0.5 * (0.5 * enc.log_var[l]).exp() * eps[l];
        }
    }
    loss += r_inv * reconstruction;

    for (d, active) in d_log_var.iter_mut().zip(&enc.log_var_active) {
        if !active {
            *d = 0.0;
        }
    }
    add_outer(&mut grad[layout.enc_mean_w.clone()], &d_mean, &enc.hidden, weight);
    add_scaled(&mut grad[layout.enc_mean_b.clone()], &d_mean, weight);
    add_outer(&mut grad[layout.enc_logvar_w.clone()], &d_log_var, &enc.hidden, weight);
    add_scaled(&mut grad[layout.enc_logvar_b.clone()], &d_log_var, weight);

    let mut d_enc_hidden = vec![0.0; dims.hidden_dim];
    let mut tmp = vec![0.0; dims.hidden_dim];
    transpose_apply(params.block(&layout.enc_mean_w), &d_mean, &mut d_enc_hidden);
    transpose_apply(params.block(&layout.enc_logvar_w), &d_log_var, &mut tmp);
    d_enc_hidden
        .iter_mut()
        .zip(&tmp)
        .zip(&enc.hidden)
        .for_each(|((d, t), h)| *d = (*d + t) * (1.0 - h * h));
    add_outer(&mut grad[layout.enc_hidden_w.clone()], &d_enc_hidden, power, weight);
    add_scaled(&mut grad[layout.enc_hidden_b.clone()], &d_enc_hidden, weight);

    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("ELBO loss {loss}")));
    }
    Ok(loss)
}

/// Gradient of the per-frame loss for fixed noise draws.
pub fn elbo_gradient_with_noise(
    params: &VaeParameters,
    power: &[f64],
    noise: &[Vec<f64>],
) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; params.as_flat().len()];
    let loss = accumulate_gradient(params, power, noise, 1.0, &mut grad)?;
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient entry {i}")));
    }
    Ok((loss, grad))
}

/// Draws `draws` noise vectors from `stream`, then differentiates.
pub fn elbo_gradient(
    params: &VaeParameters,
    power: &[f64],
    draws: usize,
    stream: &mut RngStream,
) -> Result<(f64, Vec<f64>)> {
    let noise: Vec<Vec<f64>> = (0..draws)
        .map(|_| stream.sample_gaussian(params.latent_dim()))
        .collect();
    elbo_gradient_with_noise(params, power, &noise)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, relative_error};
    use crate::vae::params::VaeDims;

    fn random_setup(seed: u64, dims: VaeDims) -> (VaeParameters, Vec<f64>, Vec<Vec<f64>>) {
        let mut rng = RngStream::new(seed, 0);
        let flat = (0..dims.param_count()).map(|_| 0.3 * rng.gaussian()).collect();
        let params = VaeParameters::from_flat(dims, flat).unwrap();
        let power = (0..dims.freq_bins).map(|_| 0.1 + 2.0 * rng.uniform()).collect();
        let noise = (0..2).map(|_| rng.sample_gaussian(dims.latent_dim)).collect();
        (params, power, noise)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let dims = VaeDims {
            freq_bins: 9,
            latent_dim: 2,
            hidden_dim: 4,
        };
        for seed in 0..3 {
            let (params, power, noise) = random_setup(seed, dims);
            let (loss, grad) = elbo_gradient_with_noise(&params, &power, &noise).unwrap();
            let eval = elbo_with_noise(&params, &power, &noise).unwrap();
            assert!((loss - eval.loss).abs() < 1e-12 * loss.abs().max(1.0));
            let numeric = finite_diff_grad(
                |x| {
                    let p = VaeParameters::from_flat(dims, x.to_vec()).unwrap();
                    elbo_with_noise(&p, &power, &noise).unwrap().loss
                },
                params.as_flat(),
                1e-5,
            )
            .unwrap();
            let err = relative_error(&grad, &numeric);
            assert!(err < 1e-6, "seed {seed}: relative error {err}");
        }
    }

    #[test]
    fn matched_frame_gives_half_latent_dim() {
        let dims = VaeDims {
            freq_bins: 6,
            latent_dim: 3,
            hidden_dim: 4,
        };
        let mut params = VaeParameters::zeros(dims).unwrap();
        let layout = dims.layout();
        let log_levels = [0.0, 1.0, -2.0, 0.5, 3.0, -0.7];
        params.as_flat_mut()[layout.dec_logvar_b.clone()].copy_from_slice(&log_levels);
        let power: Vec<f64> = log_levels.iter().map(|v: &f64| v.exp()).collect();
        let eval = elbo_estimate(&params, &power, 4, &mut RngStream::new(1, 0)).unwrap();
        assert!((eval.loss - 1.5).abs() < 1e-12, "{}", eval.loss);
    }

    #[test]
    fn stationary_point_of_unit_network() {
        let dims = VaeDims {
            freq_bins: 2,
            latent_dim: 1,
            hidden_dim: 1,
        };
        let mut params = VaeParameters::zeros(dims).unwrap();
        let layout = dims.layout();
        params.as_flat_mut()[layout.dec_logvar_b.clone()].copy_from_slice(&[0.25f64.ln(), 3f64.ln()]);
        let power = [0.25, 3.0];
        let (_, grad) = elbo_gradient(&params, &power, 3, &mut RngStream::new(2, 0)).unwrap();
        assert!(grad.iter().all(|g| g.abs() < 1e-12), "{grad:?}");
    }

    #[test]
    fn kl_gradient_through_linear_encoder() {
        // Encoder input weights zero, decoder blind to z: only the KL term
        // reaches the encoder heads, giving ∂/∂b_μ = μ̃ and ∂/∂b_lv = ½(σ̃² − 1).
        let dims = VaeDims {
            freq_bins: 4,
            latent_dim: 2,
            hidden_dim: 3,
        };
        let mut rng = RngStream::new(5, 0);
        let mut params = VaeParameters::zeros(dims).unwrap();
        let layout = dims.layout();
        let flat = params.as_flat_mut();
        for r in [
            layout.enc_hidden_b.clone(),
            layout.enc_mean_w.clone(),
            layout.enc_mean_b.clone(),
            layout.enc_logvar_w.clone(),
            layout.enc_logvar_b.clone(),
            layout.dec_logvar_b.clone(),
        ] {
            flat[r].iter_mut().for_each(|v| *v = rng.gaussian());
        }
        let power = [1.0, 2.0, 0.5, 4.0];
        let (mean, var) = params.encode(&power).unwrap();
        let (_, grad) = elbo_gradient(&params, &power, 2, &mut rng).unwrap();
        for l in 0..2 {
            assert!((grad[layout.enc_mean_b.start + l] - mean[l]).abs() < 1e-12);
            assert!((grad[layout.enc_logvar_b.start + l] - 0.5 * (var[l] - 1.0)).abs() < 1e-12);
        }
        let (dm, dlv) = neg_kl_term_grad(&mean, &var.iter().map(|v| v.ln()).collect::<Vec<_>>());
        let numeric = finite_diff_grad(
            |x| -kl_term(&x[..2], &[x[2].exp(), x[3].exp()]),
            &[mean[0], mean[1], var[0].ln(), var[1].ln()],
            1e-6,
        )
        .unwrap();
        assert!(relative_error(&[dm, dlv].concat(), &numeric) < 1e-8);
    }

    #[test]
    fn more_draws_only_reduce_variance() {
        let dims = VaeDims {
            freq_bins: 10,
            latent_dim: 3,
            hidden_dim: 5,
        };
        let (params, power, _) = random_setup(9, dims);
        let mut stream = RngStream::new(9, 1);
        let big = elbo_estimate(&params, &power, 4000, &mut stream).unwrap();
        let n = big.per_sample_reconstruction.len() as f64;
        let mean = big.reconstruction;
        let sd = (big.per_sample_reconstruction.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let small = elbo_estimate(&params, &power, 2000, &mut stream).unwrap();
        // Difference of two independent means: sd·√(1/2000 + 1/4000).
        let tol = 3.0 * sd * (1.0 / 2000.0 + 1.0 / 4000.0f64).sqrt();
        assert!((big.loss - small.loss).abs() < tol, "{} vs {} (tol {tol})", big.loss, small.loss);
    }

    #[test]
    fn loss_is_finite_for_extreme_frames() {
        let dims = VaeDims {
            freq_bins: 8,
            latent_dim: 2,
            hidden_dim: 3,
        };
        let (params, _, noise) = random_setup(4, dims);
        let power = [0.0, 1e-30, 1e8, 3.0, 0.0, 1e-3, 7.0, 1e4];
        let eval = elbo_with_noise(&params, &power, &noise).unwrap();
        assert!(eval.loss.is_finite());
        let (_, grad) = elbo_gradient_with_noise(&params, &power, &noise).unwrap();
        assert!(grad.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn rejects_malformed_inputs() {
        let dims = VaeDims {
            freq_bins: 8,
            latent_dim: 2,
            hidden_dim: 3,
        };
        let (params, power, _) = random_setup(4, dims);
        assert!(elbo_with_noise(&params, &power, &[]).is_err());
        assert!(elbo_with_noise(&params, &power, &[vec![0.0; 3]]).is_err());
        assert!(elbo_with_noise(&params, &power[..4], &[vec![0.0; 2]]).is_err());
        let mut neg = power.clone();
        neg[0] = -1.0;
        assert!(elbo_with_noise(&params, &neg, &[vec![0.0; 2]]).is_err());
    }
}
