//! Multiplicative majorize-minimize updates of the unsupervised parameters.
//! Each update multiplies the current value by the square root of a
//! ratio of weighted sums of `V_x^{-2}` and `V_x^{-1}`, where
//! `V_x^(r) = g σ²(z^(r)) + W_b H_b` is rebuilt from the freshest parameters.

use super::model::{floor_factors, GainVector, NoiseNmf, SpeechVariances};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, NMF_FLOOR, VARIANCE_FLOOR};

fn check_shapes(power: &Matrix, speech: &SpeechVariances, nmf: &NoiseNmf, gains: &GainVector) -> Result<()> {
    let (f, n) = power.shape();
    if speech.shape() != (f, n) || nmf.freq_bins() != f || nmf.frames() != n || gains.len() != n {
        return Err(Error::Shape(format!(
            "mixture {f}×{n}, speech variances {:?}, noise model {}×{}, {} gains",
            speech.shape(),
            nmf.freq_bins(),
            nmf.frames(),
            gains.len()
        )));
    }
    Ok(())
}

fn mixture_variance(speech: f64, gain: f64, noise: f64) -> f64 {
    (gain * speech + noise).max(VARIANCE_FLOOR)
}

/// `(P ⊙ Σ_r V^-2, Σ_r V^-1)` for the current parameters.
fn weighted_sums(power: &Matrix, speech: &SpeechVariances, nmf: &NoiseNmf, gains: &GainVector) -> (Matrix, Matrix) {
    let (rows, cols) = power.shape();
    let noise = nmf.variance();
    let g = gains.as_slice();
    let mut num = Matrix::zeros(rows, cols);
    let mut den = Matrix::zeros(rows, cols);
    for vs in speech.iter() {
        for (i, ((a, b), (&s, &wh))) in num
            .as_mut_slice()
            .iter_mut()
            .zip(den.as_mut_slice().iter_mut())
            .zip(vs.as_slice().iter().zip(noise.as_slice()))
            .enumerate()
        {
            let inv = 1.0 / mixture_variance(s, g[i % cols], wh);
            *a += inv * inv;
            *b += inv;
        }
    }
    for (a, &p) in num.as_mut_slice().iter_mut().zip(power.as_slice()) {
        *a *= p;
    }
    (num, den)
}

fn apply_ratio(target: &mut Matrix, num: &Matrix, den: &Matrix) {
    for ((t, &a), &b) in target.as_mut_slice().iter_mut().zip(num.as_slice()).zip(den.as_slice()) {
        *t *= (a / b).sqrt();
    }
    floor_factors(target);
}

/// `Q̃ = −(1/R) Σ_r Σ_{f,n} [ln v + |x|² / v]`.
pub fn q_tilde(power: &Matrix, speech: &SpeechVariances, nmf: &NoiseNmf, gains: &GainVector) -> Result<f64> {
    check_shapes(power, speech, nmf, gains)?;
    let cols = power.cols();
    let noise = nmf.variance();
    let g = gains.as_slice();
    let mut total = 0.0;
    for vs in speech.iter() {
        for (i, ((&s, &wh), &p)) in vs.as_slice().iter().zip(noise.as_slice()).zip(power.as_slice()).enumerate() {
            let v = mixture_variance(s, g[i % cols], wh);
            total += v.ln() + p / v;
        }
    }
    let q = -total / speech.samples() as f64;
    if !q.is_finite() {
        return Err(Error::NonFinite(format!("Q̃ evaluated to {q}")));
    }
    Ok(q)
}

pub fn update_h(nmf: &mut NoiseNmf, power: &Matrix, speech: &SpeechVariances, gains: &GainVector) -> Result<()> {
    check_shapes(power, speech, nmf, gains)?;
    let (num, den) = weighted_sums(power, speech, nmf, gains);
    let (num, den) = (nmf.w.t_matmul(&num)?, nmf.w.t_matmul(&den)?);
    apply_ratio(&mut nmf.h, &num, &den);
    Ok(())
}

pub fn update_w(nmf: &mut NoiseNmf, power: &Matrix, speech: &SpeechVariances, gains: &GainVector) -> Result<()> {
    check_shapes(power, speech, nmf, gains)?;
    let (num, den) = weighted_sums(power, speech, nmf, gains);
    let (num, den) = (num.matmul_t(&nmf.h)?, den.matmul_t(&nmf.h)?);
    apply_ratio(&mut nmf.w, &num, &den);
    Ok(())
}

pub fn update_g(gains: &mut GainVector, power: &Matrix, speech: &SpeechVariances, nmf: &NoiseNmf) -> Result<()> {
    check_shapes(power, speech, nmf, gains)?;
    let (rows, cols) = power.shape();
    let noise = nmf.variance();
    let mut num = vec![0.0; cols];
    let mut den = vec![0.0; cols];
    for vs in speech.iter() {
        for f in 0..rows {
            for n in 0..cols {
                let s = vs[(f, n)];
                let inv = 1.0 / mixture_variance(s, gains.as_slice()[n], noise[(f, n)]);
                num[n] += power[(f, n)] * s * inv * inv;
                den[n] += s * inv;
            }
        }
    }
    for ((g, a), b) in gains.values_mut().iter_mut().zip(num).zip(den) {
        *g = (*g * (a / b).sqrt()).max(NMF_FLOOR);
    }
    Ok(())
}

/// Evaluates `C(H) = −Q̃` and the majorizer `G(H, H̃)` that generates the
/// `H_b` update; `nmf.h` is ignored in favour of the two arguments.
pub fn verify_auxiliary(
    h: &Matrix,
    h_tilde: &Matrix,
    nmf: &NoiseNmf,
    power: &Matrix,
    speech: &SpeechVariances,
    gains: &GainVector,
) -> Result<(f64, f64)> {
    if h.shape() != h_tilde.shape() || h.shape() != nmf.h.shape() {
        return Err(Error::Shape(format!(
            "activations {:?} and {:?}, expected {:?}",
            h.shape(),
            h_tilde.shape(),
            nmf.h.shape()
        )));
    }
    let at_h = NoiseNmf::new(nmf.w.clone(), h.clone())?;
    let c = -q_tilde(power, speech, &at_h, gains)?;

    let w = &nmf.w;
    let wh = w.matmul(h)?;
    let wh_tilde = w.matmul(h_tilde)?;
    let (rows, cols) = power.shape();
    let g = gains.as_slice();
    let mut total = 0.0;
    for vs in speech.iter() {
        for f in 0..rows {
            for n in 0..cols {
                let speech_part = g[n] * vs[(f, n)];
                let vt = (speech_part + wh_tilde[(f, n)]).max(VARIANCE_FLOOR);
                let mut jensen = speech_part / (vt * vt);
                for k in 0..w.cols() {
                    let ht = h_tilde[(k, n)];
                    jensen += w[(f, k)] * ht * ht / (h[(k, n)] * vt * vt);
                }
                total += vt.ln() + (wh[(f, n)] - wh_tilde[(f, n)]) / vt + power[(f, n)] * jensen;
            }
        }
    }
    Ok((c, total / speech.samples() as f64))
}
