//! Semi-supervised IS-NMF baseline: a speech dictionary learned on clean
//! spectra, then speech activations and a free noise NMF fitted to each
//! mixture, followed by Wiener filtering.
//!
//! Derivation note. With `V = W H` and cost `Σ d_IS(P; V)`, the majorizer
//! that gives the MCEM `H_b` update (one sample, no VAE term) yields
//!
//! ```text
//! H ← H ⊙ [ Wᵀ(P ⊙ V^-2) / Wᵀ V^-1 ]^½,    W ← W ⊙ [ (P ⊙ V^-2)Hᵀ / V^-1 Hᵀ ]^½
//! ```
//!
//! The square root is what makes each update a true MM step, so the cost is
//! non-increasing after every sub-update. The exponent-1 heuristic converges
//! faster in practice but carries no such guarantee.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::ComplexSpectrogram;
use crate::error::{Error, Result};
use crate::numerics::{derive_seed, Matrix, RngStream, NMF_FLOOR, VARIANCE_FLOOR};
use crate::vae::is_divergence;

pub const DICTIONARY_SCHEMA: &str = "vamce-dict-1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub speech_rank: usize,
    pub noise_rank: usize,
    pub max_iterations: usize,
    pub tolerance: f64,
    /// Initial `mean(W_b H_b)` as a fraction of the mixture's mean power.
    /// Exact fits are not unique (free noise atoms can copy speech atoms)
    /// and the updates stall wherever the split lands, so the noise model
    /// starts small and grows only where the dictionary cannot explain.
    pub noise_init_fraction: f64,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            speech_rank: 64,
            noise_rank: 10,
            max_iterations: 500,
            tolerance: 1e-4,
            noise_init_fraction: 1e-4,
            seed: 0,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.speech_rank == 0 || self.noise_rank == 0 {
            return Err(Error::Config("NMF ranks must be at least 1".into()));
        }
        if self.max_iterations == 0 || !(self.tolerance > 0.0) || !(self.noise_init_fraction > 0.0) {
            return Err(Error::Config(
                "iteration cap, tolerance and noise init fraction must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// `W_s`, `F × K_s`, columns summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeechDictionary {
    atoms: Matrix,
}

impl SpeechDictionary {
    pub fn new(mut atoms: Matrix) -> Result<Self> {
        if atoms.as_slice().iter().any(|&v| v < 0.0) {
            return Err(Error::Domain("dictionary entries must be nonnegative".into()));
        }
        atoms.map_inplace(|v| v.max(NMF_FLOOR));
        Ok(Self { atoms })
    }

    pub fn atoms(&self) -> &Matrix {
        &self.atoms
    }

    pub fn freq_bins(&self) -> usize {
        self.atoms.rows()
    }

    pub fn rank(&self) -> usize {
        self.atoms.cols()
    }
}

#[derive(Serialize, Deserialize)]
struct DictionaryFile {
    schema: String,
    freq_bins: usize,
    rank: usize,
    /// One entry per atom, each of length `freq_bins`.
    atoms: Vec<Vec<f64>>,
}

pub fn save_dictionary(path: impl AsRef<Path>, dict: &SpeechDictionary) -> Result<()> {
    let path = path.as_ref();
    let t = dict.atoms.transpose();
    let file = DictionaryFile {
        schema: DICTIONARY_SCHEMA.into(),
        freq_bins: dict.freq_bins(),
        rank: dict.rank(),
        atoms: (0..t.rows()).map(|k| t.row(k).to_vec()).collect(),
    };
    let text = serde_json::to_string(&file).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_dictionary(path: impl AsRef<Path>) -> Result<SpeechDictionary> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: DictionaryFile =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if file.schema != DICTIONARY_SCHEMA {
        return Err(Error::Format(format!(
            "{}: dictionary schema {:?}, expected {DICTIONARY_SCHEMA:?}",
            path.display(),
            file.schema
        )));
    }
    if file.rank == 0 || file.atoms.len() != file.rank || file.atoms.iter().any(|a| a.len() != file.freq_bins) {
        return Err(Error::Shape(format!(
            "{}: dictionary declares {}×{} but stores {} atoms",
            path.display(),
            file.freq_bins,
            file.rank,
            file.atoms.len()
        )));
    }
    SpeechDictionary::new(Matrix::from_rows(&file.atoms)?.transpose())
}

/// `Σ d_IS(P; V)` with both arguments floored.
pub fn is_cost(power: &Matrix, model: &Matrix) -> f64 {
    power.as_slice().iter().zip(model.as_slice()).map(|(&p, &v)| is_divergence(p, v)).sum()
}

/// `(P ⊙ V^-2, V^-1)` for the current model.
fn mm_terms(power: &Matrix, model: &Matrix) -> (Matrix, Matrix) {
    let inv = model.map(|v| 1.0 / v.max(VARIANCE_FLOOR));
    let mut weighted = inv.clone();
    for (w, &p) in weighted.as_mut_slice().iter_mut().zip(power.as_slice()) {
        *w *= *w * p;
    }
    (weighted, inv)
}

fn mm_step_h(w: &Matrix, h: &mut Matrix, power: &Matrix) -> Result<()> {
    let (a, b) = mm_terms(power, &w.matmul(h)?);
    let (num, den) = (w.t_matmul(&a)?, w.t_matmul(&b)?);
    for ((x, &n), &d) in h.as_mut_slice().iter_mut().zip(num.as_slice()).zip(den.as_slice()) {
        *x = (*x * (n / d).sqrt()).max(NMF_FLOOR);
    }
    Ok(())
}

/// Updates only the columns `first_free..` of `w`.
fn mm_step_w(w: &mut Matrix, h: &Matrix, power: &Matrix, first_free: usize) -> Result<()> {
    let (a, b) = mm_terms(power, &w.matmul(h)?);
    let (num, den) = (a.matmul_t(h)?, b.matmul_t(h)?);
    for f in 0..w.rows() {
        for k in first_free..w.cols() {
            let v = w[(f, k)] * (num[(f, k)] / den[(f, k)]).sqrt();
            w[(f, k)] = v.max(NMF_FLOOR);
        }
    }
    Ok(())
}

/// Moves column scale of `w` into the matching rows of `h`; `W H` is unchanged
/// up to rounding.
fn normalize_columns(w: &mut Matrix, h: &mut Matrix) {
    for k in 0..w.cols() {
        let s: f64 = (0..w.rows()).map(|f| w[(f, k)]).sum();
        for f in 0..w.rows() {
            w[(f, k)] = (w[(f, k)] / s).max(NMF_FLOOR);
        }
        for x in h.row_mut(k) {
            *x = (*x * s).max(NMF_FLOOR);
        }
    }
}

fn check_power(power: &Matrix) -> Result<()> {
    if power.as_slice().iter().any(|&p| !(p.is_finite() && p >= 0.0)) {
        return Err(Error::Domain("power spectra must be finite and nonnegative".into()));
    }
    Ok(())
}

fn converged(costs: &[f64], tolerance: f64) -> Result<bool> {
    let last = *costs.last().unwrap();
    if !last.is_finite() {
        return Err(Error::NonFinite(format!("IS cost {last} after {} iterations", costs.len() - 1)));
    }
    Ok(match costs {
        [.., prev, cur] => (prev - cur).abs() <= tolerance * prev.abs(),
        _ => false,
    })
}

#[derive(Clone, Debug)]
pub struct DictionaryFit {
    pub dictionary: SpeechDictionary,
    pub activations: Matrix,
    /// IS cost at initialization, then after every iteration.
    pub costs: Vec<f64>,
}

const DICT_INIT_TAG: u64 = 0x21;
const ENHANCE_INIT_TAG: u64 = 0x22;

/// Fits `P ≈ W_s H` on clean power spectra (`F × N_tr`).
pub fn train_dictionary(power: &Matrix, config: &BaselineConfig) -> Result<DictionaryFit> {
    config.validate()?;
    check_power(power)?;
    let (f, n) = power.shape();
    let k = config.speech_rank;
    let mut rng = RngStream::new(derive_seed(config.seed, DICT_INIT_TAG), 0);
    let mut w = Matrix::from_fn(f, k, |_, _| rng.uniform_open_closed());
    let mut h = Matrix::from_fn(k, n, |_, _| rng.uniform_open_closed());
    let scale = power.mean().max(NMF_FLOOR) / w.matmul(&h)?.mean();
    h.map_inplace(|v| v * scale);
    normalize_columns(&mut w, &mut h);

    let mut costs = vec![is_cost(power, &w.matmul(&h)?)];
    for _ in 0..config.max_iterations {
        mm_step_h(&w, &mut h, power)?;
        mm_step_w(&mut w, &h, power, 0)?;
        normalize_columns(&mut w, &mut h);
        costs.push(is_cost(power, &w.matmul(&h)?));
        if converged(&costs, config.tolerance)? {
            break;
        }
    }
    Ok(DictionaryFit {
        dictionary: SpeechDictionary::new(w)?,
        activations: h,
        costs,
    })
}

#[derive(Clone, Debug)]
pub struct NmfEnhancement {
    pub estimate: ComplexSpectrogram,
    pub speech_mask: Matrix,
    pub noise_mask: Matrix,
    pub speech_activations: Matrix,
    pub noise_basis: Matrix,
    pub noise_activations: Matrix,
    pub costs: Vec<f64>,
}

/// Fits `|X|² ≈ W_s H_s + W_b H_b` with `W_s` frozen and Wiener-filters the
/// mixture with the speech part.
pub fn enhance_nmf(
    mixture: &ComplexSpectrogram,
    dictionary: &SpeechDictionary,
    config: &BaselineConfig,
) -> Result<NmfEnhancement> {
    config.validate()?;
    if mixture.freq_bins() != dictionary.freq_bins() {
        return Err(Error::Shape(format!(
            "mixture has {} bins, dictionary {}",
            mixture.freq_bins(),
            dictionary.freq_bins()
        )));
    }
    let power = mixture.power();
    check_power(&power)?;
    let (f, n) = power.shape();
    let (ks, kb) = (dictionary.rank(), config.noise_rank);

    // Speech and noise factors live side by side in one stacked model.
    let mut rng = RngStream::new(derive_seed(config.seed, ENHANCE_INIT_TAG), 0);
    let atoms = dictionary.atoms();
    let mut w = Matrix::from_fn(f, ks + kb, |i, k| {
        if k < ks {
            atoms[(i, k)]
        } else {
            rng.uniform_open_closed()
        }
    });
    let mut h = Matrix::from_fn(ks + kb, n, |_, _| rng.uniform_open_closed());
    let target = power.mean().max(NMF_FLOOR);
    let speech_mean = atoms.matmul(&Matrix::from_fn(ks, n, |k, j| h[(k, j)]))?.mean();
    let noise_w = Matrix::from_fn(f, kb, |i, k| w[(i, ks + k)]);
    let noise_mean = noise_w.matmul(&Matrix::from_fn(kb, n, |k, j| h[(ks + k, j)]))?.mean();
    let noise_scale = (config.noise_init_fraction * target / noise_mean).sqrt();
    for k in 0..ks + kb {
        let s = if k < ks { target / speech_mean } else { noise_scale };
        h.row_mut(k).iter_mut().for_each(|x| *x = (*x * s).max(NMF_FLOOR));
    }
    for i in 0..f {
        for k in ks..ks + kb {
            w[(i, k)] = (w[(i, k)] * noise_scale).max(NMF_FLOOR);
        }
    }

    let mut costs = vec![is_cost(&power, &w.matmul(&h)?)];
    for _ in 0..config.max_iterations {
        mm_step_h(&w, &mut h, &power)?;
        mm_step_w(&mut w, &h, &power, ks)?;
        costs.push(is_cost(&power, &w.matmul(&h)?));
        if converged(&costs, config.tolerance)? {
            break;
        }
    }

    let speech_activations = Matrix::from_fn(ks, n, |k, j| h[(k, j)]);
    let noise_activations = Matrix::from_fn(kb, n, |k, j| h[(ks + k, j)]);
    let noise_basis = Matrix::from_fn(f, kb, |i, k| w[(i, ks + k)]);
    let speech_var = atoms.matmul(&speech_activations)?;
    let noise_var = noise_basis.matmul(&noise_activations)?;
    let (speech_mask, noise_mask) = wiener_masks(&speech_var, &noise_var)?;
    Ok(NmfEnhancement {
        estimate: mixture.masked(&speech_mask)?,
        speech_mask,
        noise_mask,
        speech_activations,
        noise_basis,
        noise_activations,
        costs,
    })
}

/// Speech and noise Wiener gains. The noise mask is formed as `1 − speech`
/// so the pair sums to one exactly.
pub fn wiener_masks(speech_var: &Matrix, noise_var: &Matrix) -> Result<(Matrix, Matrix)> {
    if speech_var.shape() != noise_var.shape() {
        return Err(Error::Shape("speech and noise variances differ in shape".into()));
    }
    let (rows, cols) = speech_var.shape();
    let speech = Matrix::from_fn(rows, cols, |f, n| {
        let s = speech_var[(f, n)];
        (s / (s + noise_var[(f, n)]).max(VARIANCE_FLOOR)).clamp(0.0, 1.0)
    });
    let noise = speech.map(|m| 1.0 - m);
    Ok((speech, noise))
}
