use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngStream, NMF_FLOOR};
use crate::vae::VaeParameters;

/// Unsupervised noise variance model `W_b H_b` (`F × K_b` by `K_b × N`).
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseNmf {
    pub w: Matrix,
    pub h: Matrix,
}

impl NoiseNmf {
    pub fn new(mut w: Matrix, mut h: Matrix) -> Result<Self> {
        if w.cols() != h.rows() {
            return Err(Error::Shape(format!(
                "noise factors {:?} and {:?} do not chain",
                w.shape(),
                h.shape()
            )));
        }
        if w.as_slice().iter().chain(h.as_slice()).any(|&v| v < 0.0) {
            return Err(Error::Domain("noise NMF factors must be nonnegative".into()));
        }
        floor_factors(&mut w);
        floor_factors(&mut h);
        Ok(Self { w, h })
    }

    /// Uniform `(0, 1]` factors rescaled so that `mean(W H)` equals `target_mean_power`.
    pub fn random(
        freq_bins: usize,
        frames: usize,
        rank: usize,
        target_mean_power: f64,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if rank == 0 {
            return Err(Error::Config("noise rank must be positive".into()));
        }
        let w = Matrix::from_fn(freq_bins, rank, |_, _| rng.uniform_open_closed());
        let h = Matrix::from_fn(rank, frames, |_, _| rng.uniform_open_closed());
        let scale = (target_mean_power.max(NMF_FLOOR) / w.matmul(&h)?.mean()).sqrt();
        Self::new(w.map(|v| v * scale), h.map(|v| v * scale))
    }

    pub fn rank(&self) -> usize {
        self.w.cols()
    }

    pub fn freq_bins(&self) -> usize {
        self.w.rows()
    }

    pub fn frames(&self) -> usize {
        self.h.cols()
    }

    /// Noise variance `W_b H_b`.
    pub fn variance(&self) -> Matrix {
        self.w.matmul(&self.h).expect("factor shapes checked at construction")
    }
}

pub(crate) fn floor_factors(m: &mut Matrix) {
    m.map_inplace(|v| v.max(NMF_FLOOR));
}

/// Frame gains `g ∈ ℝ₊^N` applied to the speech variance.
#[derive(Clone, Debug, PartialEq)]
pub struct GainVector(Vec<f64>);

impl GainVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return Err(Error::Domain("gains must be finite and nonnegative".into()));
        }
        Ok(Self(values.into_iter().map(|g| g.max(NMF_FLOOR)).collect()))
    }

    pub fn ones(frames: usize) -> Self {
        Self(vec![1.0; frames])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Retained latent samples `z_n^(r)`, indexed `[frame][sample]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentSamples {
    per_frame: Vec<Vec<Vec<f64>>>,
}

impl LatentSamples {
    pub fn new(per_frame: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let r = per_frame.first().map_or(0, Vec::len);
        if r == 0 || per_frame.iter().any(|s| s.len() != r) {
            return Err(Error::Shape("every frame needs the same, nonzero number of samples".into()));
        }
        Ok(Self { per_frame })
    }

    pub fn frames(&self) -> usize {
        self.per_frame.len()
    }

    pub fn samples_per_frame(&self) -> usize {
        self.per_frame[0].len()
    }

    pub fn frame(&self, n: usize) -> &[Vec<f64>] {
        &self.per_frame[n]
    }
}

/// Decoded speech variances `V_s^(r)`, one `F × N` matrix per retained sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeechVariances {
    per_sample: Vec<Matrix>,
}

impl SpeechVariances {
    pub fn new(per_sample: Vec<Matrix>) -> Result<Self> {
        let shape = per_sample
            .first()
            .map(Matrix::shape)
            .ok_or_else(|| Error::Shape("no speech variance samples".into()))?;
        if per_sample.iter().any(|m| m.shape() != shape) {
            return Err(Error::Shape("speech variance samples differ in shape".into()));
        }
        if per_sample.iter().flat_map(|m| m.as_slice()).any(|&v| !(v > 0.0)) {
            return Err(Error::Domain("speech variances must be positive".into()));
        }
        Ok(Self { per_sample })
    }

    /// Runs the decoder on every retained sample (frame-parallel).
    pub fn decode(vae: &VaeParameters, samples: &LatentSamples) -> Result<Self> {
        let freq_bins = vae.freq_bins();
        let r_count = samples.samples_per_frame();
        let columns: Vec<Vec<Vec<f64>>> = (0..samples.frames())
            .into_par_iter()
            .map(|n| {
                samples
                    .frame(n)
                    .iter()
                    .map(|z| vae.decode(z))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        let frames = samples.frames();
        let per_sample = (0..r_count)
            .map(|r| Matrix::from_fn(freq_bins, frames, |f, n| columns[n][r][f]))
            .collect();
        Self::new(per_sample)
    }

    pub fn samples(&self) -> usize {
        self.per_sample.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.per_sample[0].shape()
    }

    pub fn sample(&self, r: usize) -> &Matrix {
        &self.per_sample[r]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Matrix> {
        self.per_sample.iter()
    }
}

/// Starting value of the free gains.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GainInit {
    /// All ones.
    Ones,
    /// One common value matching the decoded prior-mean spectrum to the
    /// mixture's mean power; the encoder that seeds the chains sees the
    /// mixture divided by it. Makes the iteration equivariant to input scaling.
    MixtureLevel,
}

impl std::str::FromStr for GainInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ones" => Ok(GainInit::Ones),
            "mixture-level" => Ok(GainInit::MixtureLevel),
            other => Err(Error::Config(format!("unknown gain init '{other}' (ones, mixture-level)"))),
        }
    }
}

impl std::fmt::Display for GainInit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GainInit::Ones => "ones",
            GainInit::MixtureLevel => "mixture-level",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnhancerConfig {
    /// Metropolis-Hastings iterations per E-step.
    pub estep_iterations: usize,
    pub estep_burn_in: usize,
    /// Metropolis-Hastings iterations for the final posterior-mean mask.
    pub reconstruction_iterations: usize,
    pub reconstruction_burn_in: usize,
    /// Random-walk proposal variance `ε²`.
    pub proposal_variance: f64,
    /// Noise NMF rank `K_b`.
    pub noise_rank: usize,
    /// Initial noise variance as a fraction of the mixture mean power. Small
    /// values let the speech model claim what it can before the noise
    /// factors grow to cover the rest.
    pub noise_init_fraction: f64,
    /// Stop when `|ΔQ̃| / |Q̃|` falls below this.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Gains are re-estimated at every M-step; when false they stay at 1.
    pub update_gains: bool,
    /// Ignored when gains are frozen; they are then pinned to one.
    pub gain_init: GainInit,
    pub seed: u64,
}

impl Default for EnhancerConfig {
    fn default() -> Self {
        Self {
            estep_iterations: 40,
            estep_burn_in: 30,
            reconstruction_iterations: 100,
            reconstruction_burn_in: 75,
            proposal_variance: 0.01,
            noise_rank: 10,
            noise_init_fraction: 1e-4,
            tolerance: 1e-4,
            max_iterations: 200,
            update_gains: true,
            gain_init: GainInit::MixtureLevel,
            seed: 0,
        }
    }
}

impl EnhancerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.estep_burn_in >= self.estep_iterations {
            return Err(Error::Config(format!(
                "E-step burn-in {} must be below its {} iterations",
                self.estep_burn_in, self.estep_iterations
            )));
        }
        if self.reconstruction_burn_in >= self.reconstruction_iterations {
            return Err(Error::Config(format!(
                "reconstruction burn-in {} must be below its {} iterations",
                self.reconstruction_burn_in, self.reconstruction_iterations
            )));
        }
        if !(self.proposal_variance > 0.0) || !(self.tolerance > 0.0) || !(self.noise_init_fraction > 0.0) {
            return Err(Error::Config(
                "proposal variance, tolerance and noise init fraction must be positive".into(),
            ));
        }
        if self.noise_rank == 0 || self.max_iterations == 0 {
            return Err(Error::Config("noise rank and iteration cap must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_init_matches_target_power() {
        let nmf = NoiseNmf::random(30, 12, 4, 7.5, &mut RngStream::new(1, 0)).unwrap();
        assert!((nmf.variance().mean() - 7.5).abs() < 1e-12);
        assert!(nmf.w.as_slice().iter().all(|&v| v >= NMF_FLOOR));
        assert_eq!((nmf.freq_bins(), nmf.frames(), nmf.rank()), (30, 12, 4));
    }

    #[test]
    fn constructors_validate() {
        assert!(NoiseNmf::new(Matrix::zeros(3, 2), Matrix::zeros(3, 2)).is_err());
        assert!(NoiseNmf::new(Matrix::filled(3, 2, -1.0), Matrix::zeros(2, 2)).is_err());
        let floored = NoiseNmf::new(Matrix::zeros(3, 2), Matrix::zeros(2, 2)).unwrap();
        assert!(floored.h.as_slice().iter().all(|&v| v == NMF_FLOOR));
        assert!(GainVector::new(vec![1.0, -1.0]).is_err());
        assert_eq!(GainVector::new(vec![0.0]).unwrap().as_slice(), &[NMF_FLOOR]);
        assert!(LatentSamples::new(vec![vec![vec![0.0]], vec![]]).is_err());
        assert!(SpeechVariances::new(vec![Matrix::zeros(2, 2)]).is_err());
    }

    #[test]
    fn config_defaults_and_validation() {
        let cfg = EnhancerConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.estep_iterations - cfg.estep_burn_in, 10);
        assert_eq!(cfg.reconstruction_iterations - cfg.reconstruction_burn_in, 25);
        let bad = EnhancerConfig {
            estep_burn_in: 40,
            ..cfg.clone()
        };
        assert!(bad.validate().is_err());
        let bad = EnhancerConfig {
            proposal_variance: 0.0,
            ..cfg
        };
        assert!(bad.validate().is_err());
    }
}
