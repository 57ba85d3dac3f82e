use log::{debug, info, warn};
use serde::{Deserialize, Serialize};

use super::elbo::{accumulate_gradient, elbo_with_noise};
use super::params::{VaeDims, VaeParameters};
use crate::audio::ComplexSpectrogram;
use crate::error::{Error, Result};
use crate::numerics::{derive_seed, AdamConfig, AdamState, Matrix, RngStream, VARIANCE_FLOOR};

const SEED_INIT: u64 = 1;
const SEED_SPLIT: u64 = 2;
const SEED_SHUFFLE: u64 = 3;
const SEED_TRAIN_NOISE: u64 = 4;
const SEED_VALIDATION_NOISE: u64 = 5;

/// Independent clean power-spectrum frames, one row per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct CleanFrameSet {
    frames: Matrix,
}

impl CleanFrameSet {
    pub fn new(frames: Matrix) -> Result<Self> {
        if frames.as_slice().iter().any(|&p| p < 0.0) {
            return Err(Error::Domain("clean power frames must be nonnegative".into()));
        }
        Ok(Self { frames })
    }

    /// Collects every frame of every spectrogram as `|s_n|^⊙2`.
    pub fn from_spectrograms(specs: &[ComplexSpectrogram]) -> Result<Self> {
        let freq_bins = specs
            .first()
            .map(ComplexSpectrogram::freq_bins)
            .ok_or_else(|| Error::Config("no spectrograms given".into()))?;
        let mut data = Vec::new();
        for spec in specs {
            if spec.freq_bins() != freq_bins {
                return Err(Error::Shape(format!(
                    "spectrograms with {} and {} bins",
                    freq_bins,
                    spec.freq_bins()
                )));
            }
            for n in 0..spec.frames() {
                data.extend((0..freq_bins).map(|f| spec.get(f, n).norm_sqr()));
            }
        }
        let rows = data.len() / freq_bins;
        Self::new(Matrix::new(rows, freq_bins, data)?)
    }

    /// Keeps the first `n` frames.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        let n = n.min(self.len());
        let cols = self.freq_bins();
        Self::new(Matrix::new(n, cols, self.frames.as_slice()[..n * cols].to_vec())?)
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn freq_bins(&self) -> usize {
        self.frames.cols()
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        self.frames.row(i)
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.frames
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub latent_dim: usize,
    pub hidden_dim: usize,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub validation_fraction: f64,
    /// Reparametrised draws per frame and step.
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            latent_dim: 8,
            hidden_dim: 128,
            adam: AdamConfig::default(),
            batch_size: 128,
            max_epochs: 500,
            patience: 10,
            validation_fraction: 0.2,
            mc_samples: 1,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        if self.patience < 1 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config(format!(
                "validation fraction must lie in (0, 1), got {}",
                self.validation_fraction
            )));
        }
        if self.mc_samples < 1 || self.batch_size < 1 || self.max_epochs < 1 {
            return Err(Error::Config(
                "Monte Carlo samples, batch size and epoch budget must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    EarlyStopping,
    MaxEpochs,
    /// Loss or gradient became non-finite; the best earlier parameters are kept.
    Diverged,
}

#[derive(Clone, Debug)]
pub struct TrainingOutcome {
    /// Parameters with the lowest validation loss seen.
    pub params: VaeParameters,
    pub epochs: Vec<EpochRecord>,
    /// Zero-based index into `epochs` of the best validation loss.
    pub best_epoch: usize,
    pub stop_reason: StopReason,
}

fn validation_loss(
    params: &VaeParameters,
    corpus: &CleanFrameSet,
    indices: &[usize],
    noise: &[Vec<Vec<f64>>],
) -> Result<f64> {
    let mut total = 0.0;
    for (&i, eps) in indices.iter().zip(noise) {
        total += elbo_with_noise(params, corpus.frame(i), eps)?.loss;
    }
    Ok(total / indices.len() as f64)
}

/// Glorot weights assume unit-scale inputs and outputs, which raw power
/// spectra are not. The decoder log-variance bias starts at the log of the
/// per-bin mean training power and the encoder input weights are divided by
/// the RMS training power, so the untrained model already predicts the
/// average spectrum and its first layer is not saturated.
fn scale_to_data(params: &mut VaeParameters, corpus: &CleanFrameSet, train_idx: &[usize]) {
    let layout = params.dims().layout();
    let mut mean = vec![0.0; corpus.freq_bins()];
    let mut sum_sq = 0.0;
    for &i in train_idx {
        for (m, &p) in mean.iter_mut().zip(corpus.frame(i)) {
            *m += p;
            sum_sq += p * p;
        }
    }
    let n = train_idx.len() as f64;
    let rms = (sum_sq / (n * mean.len() as f64)).sqrt();
    let flat = params.as_flat_mut();
    for (idx, m) in layout.dec_logvar_b.zip(&mean) {
        flat[idx] = (m / n).max(VARIANCE_FLOOR).ln();
    }
    if rms > 0.0 {
        flat[layout.enc_hidden_w].iter_mut().for_each(|w| *w /= rms);
    }
}

/// Trains encoder and decoder jointly by minimising the Monte Carlo negative
/// ELBO with Adam, early-stopping on a held-out split.
pub fn train(config: &TrainingConfig, corpus: &CleanFrameSet) -> Result<TrainingOutcome> {
    config.validate()?;
    if corpus.len() < 10 {
        return Err(Error::Config(format!(
            "training needs at least 10 frames, got {}",
            corpus.len()
        )));
    }
    let dims = VaeDims {
        freq_bins: corpus.freq_bins(),
        latent_dim: config.latent_dim,
        hidden_dim: config.hidden_dim,
    };
    let mut params = VaeParameters::glorot_uniform(dims, &mut RngStream::new(derive_seed(config.seed, SEED_INIT), 0))?;

    let mut order: Vec<usize> = (0..corpus.len()).collect();
    RngStream::new(derive_seed(config.seed, SEED_SPLIT), 0).shuffle(&mut order);
    let n_val = ((corpus.len() as f64 * config.validation_fraction).round() as usize).clamp(1, corpus.len() - 1);
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut train_idx = train_idx.to_vec();
    scale_to_data(&mut params, corpus, &train_idx);

    // Fixed validation draws so epoch-to-epoch comparisons are not noise-driven.
    let mut val_stream = RngStream::new(derive_seed(config.seed, SEED_VALIDATION_NOISE), 0);
    let val_noise: Vec<Vec<Vec<f64>>> = val_idx
        .iter()
        .map(|_| {
            (0..config.mc_samples)
                .map(|_| val_stream.sample_gaussian(dims.latent_dim))
                .collect()
        })
        .collect();

    let mut shuffle_stream = RngStream::new(derive_seed(config.seed, SEED_SHUFFLE), 0);
    let mut noise_stream = RngStream::new(derive_seed(config.seed, SEED_TRAIN_NOISE), 0);
    let mut adam = AdamState::new(config.adam, dims.param_count())?;
    let mut grad = vec![0.0; dims.param_count()];

    let mut epochs = Vec::new();
    let mut best = (f64::INFINITY, params.clone(), 0usize);
    let mut stop_reason = StopReason::MaxEpochs;
    info!(
        "training VAE {dims:?} on {} frames ({} validation)",
        train_idx.len(),
        val_idx.len()
    );

    'epochs: for epoch in 0..config.max_epochs {
        shuffle_stream.shuffle(&mut train_idx);
        let mut epoch_loss = 0.0;
        for batch in train_idx.chunks(config.batch_size) {
            grad.fill(0.0);
            let weight = 1.0 / batch.len() as f64;
            for &i in batch {
                let noise: Vec<Vec<f64>> = (0..config.mc_samples)
                    .map(|_| noise_stream.sample_gaussian(dims.latent_dim))
                    .collect();
                match accumulate_gradient(&params, corpus.frame(i), &noise, weight, &mut grad) {
                    Ok(loss) => epoch_loss += loss,
                    Err(e) if e.is_numeric() => {
                        warn!("epoch {epoch}: {e}; keeping best parameters");
                        stop_reason = StopReason::Diverged;
                        break 'epochs;
                    }
                    Err(e) => return Err(e),
                }
            }
            if let Err(e) = adam.step(params.as_flat_mut(), &grad) {
                if e.is_numeric() {
                    warn!("epoch {epoch}: {e}; keeping best parameters");
                    stop_reason = StopReason::Diverged;
                    break 'epochs;
                }
                return Err(e);
            }
        }
        let train_loss = epoch_loss / train_idx.len() as f64;
        let validation = match validation_loss(&params, corpus, val_idx, &val_noise) {
            Ok(v) if v.is_finite() => v,
            _ => {
                stop_reason = StopReason::Diverged;
                break;
            }
        };
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            validation_loss: validation,
        });
        debug!("epoch {epoch}: train {train_loss:.4}, validation {validation:.4}");
        if validation < best.0 {
            best = (validation, params.clone(), epoch);
        } else if epoch - best.2 >= config.patience {
            stop_reason = StopReason::EarlyStopping;
            break;
        }
    }
    info!(
        "training stopped after {} epochs ({stop_reason:?}); best validation {:.4} at epoch {}",
        epochs.len(),
        best.0,
        best.2
    );
    Ok(TrainingOutcome {
        params: best.1,
        epochs,
        best_epoch: best.2,
        stop_reason,
    })
}
