//! Seeded synthetic stand-in for a clean-speech and noise database.
//!
//! "Speech" is a chain of voiced syllables: harmonic tones with a drifting
//! pitch, shaped by three formant resonances and a raised-cosine envelope,
//! separated by short pauses. "Noise" is Gaussian noise coloured in the
//! frequency domain with a random spectral tilt and a smooth band emphasis.

use std::f64::consts::{PI, TAU};
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::{read_wav, write_wav, Waveform, DEFAULT_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::numerics::{derive_seed, RngStream};

const CLEAN_TAG: u64 = 0x31;
const TEST_SPEECH_TAG: u64 = 0x32;
const NOISE_TAG: u64 = 0x33;

/// Mixtures are rescaled so that their peak sits here, leaving headroom
/// for 16-bit quantization.
const MIX_PEAK: f64 = 0.5;

pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub sample_rate: u32,
    pub utterance_secs: f64,
    pub n_clean: usize,
    pub n_mixtures: usize,
    pub snr_db: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            sample_rate: DEFAULT_SAMPLE_RATE,
            utterance_secs: 2.0,
            n_clean: 8,
            n_mixtures: 20,
            snr_db: 0.0,
            seed: 0,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate < 8000 {
            return Err(Error::Config(format!("sample rate {} Hz is too low", self.sample_rate)));
        }
        if !(self.utterance_secs >= 0.1 && self.utterance_secs.is_finite()) {
            return Err(Error::Config("utterances must last at least 0.1 s".into()));
        }
        if !self.snr_db.is_finite() {
            return Err(Error::Config("SNR must be finite".into()));
        }
        Ok(())
    }

    fn utterance_len(&self) -> usize {
        (self.utterance_secs * self.sample_rate as f64).round() as usize
    }
}

struct Formant {
    centre: f64,
    bandwidth: f64,
    gain: f64,
}

fn random_vowel(rng: &mut RngStream) -> [Formant; 3] {
    let mut pick = |lo: f64, hi: f64| lo + (hi - lo) * rng.uniform();
    [
        Formant {
            centre: pick(300.0, 900.0),
            bandwidth: pick(80.0, 160.0),
            gain: 1.0,
        },
        Formant {
            centre: pick(900.0, 2400.0),
            bandwidth: pick(100.0, 200.0),
            gain: pick(0.3, 0.7),
        },
        Formant {
            centre: pick(2400.0, 3600.0),
            bandwidth: pick(150.0, 300.0),
            gain: pick(0.1, 0.3),
        },
    ]
}

fn formant_gain(vowel: &[Formant; 3], freq: f64) -> f64 {
    let resonances: f64 = vowel
        .iter()
        .map(|f| f.gain * (-0.5 * ((freq - f.centre) / f.bandwidth).powi(2)).exp())
        .sum();
    // Glottal roll-off keeps some energy between formants.
    resonances + 0.02 / (1.0 + freq / 500.0)
}

/// One utterance of synthetic voiced speech: a declining phrase pitch with
/// per-syllable accents and glides, and formants moving between two vowels
/// inside every syllable, so that no two frames share the same spectrum.
pub fn synth_speech(len: usize, sample_rate: u32, rng: &mut RngStream) -> Vec<f64> {
    let sr = sample_rate as f64;
    let nyquist = 0.5 * sr;
    let mut out = vec![0.0; len];
    let base_pitch = 90.0 + 160.0 * rng.uniform();
    let mut next_vowel = random_vowel(rng);
    let mut start = (0.05 * sr * rng.uniform()) as usize;
    let mut phase = TAU * rng.uniform();
    while start < len {
        let dur = ((0.08 + 0.17 * rng.uniform()) * sr) as usize;
        let end = (start + dur).min(len);
        let from = next_vowel;
        let to = random_vowel(rng);
        let accent = 0.85 + 0.3 * rng.uniform();
        let glide = 0.4 * (rng.uniform() - 0.5);
        let vibrato_rate = 3.0 + 4.0 * rng.uniform();
        let loudness = 0.3 + 0.7 * rng.uniform();
        let seg_len = (end - start).max(1) as f64;
        for (i, sample) in out[start..end].iter_mut().enumerate() {
            let u = i as f64 / seg_len;
            let declination = 1.1 - 0.25 * (start + i) as f64 / len as f64;
            let f0 = base_pitch
                * declination
                * accent
                * (1.0 + glide * u + 0.01 * (TAU * vibrato_rate * i as f64 / sr).sin());
            phase = (phase + TAU * f0 / sr) % TAU;
            let vowel = interpolate_vowel(&from, &to, u);
            let envelope = (PI * u).sin().powf(0.6);
            let harmonics = (nyquist * 0.95 / f0) as usize;
            let mut value = 0.0;
            for h in 1..=harmonics {
                value += formant_gain(&vowel, h as f64 * f0) * (h as f64 * phase).sin();
            }
            *sample = loudness * envelope * value;
        }
        next_vowel = to;
        // Most syllables run into each other; some phrases pause.
        let pause = if rng.uniform() < 0.25 {
            ((0.03 + 0.09 * rng.uniform()) * sr) as usize
        } else {
            0
        };
        start = end + pause;
    }
    out
}

fn interpolate_vowel(a: &[Formant; 3], b: &[Formant; 3], u: f64) -> [Formant; 3] {
    let mix = |x: f64, y: f64| x + (y - x) * u;
    std::array::from_fn(|k| Formant {
        centre: mix(a[k].centre, b[k].centre),
        bandwidth: mix(a[k].bandwidth, b[k].bandwidth),
        gain: mix(a[k].gain, b[k].gain),
    })
}

/// Coloured Gaussian noise: `|f|^-tilt` slope times a broad band emphasis.
pub fn synth_noise(len: usize, sample_rate: u32, rng: &mut RngStream) -> Vec<f64> {
    let n = len.max(2);
    let tilt = 0.3 + 1.4 * rng.uniform();
    let band_centre = 200.0 + 3800.0 * rng.uniform();
    let band_width = 300.0 + 1500.0 * rng.uniform();
    let band_gain = 4.0 * rng.uniform();
    let mut spectrum: Vec<Complex64> = (0..n).map(|_| Complex64::new(rng.gaussian(), 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut spectrum);
    let df = sample_rate as f64 / n as f64;
    for (k, c) in spectrum.iter_mut().enumerate() {
        let bin = k.min(n - k) as f64;
        let freq = (bin * df).max(20.0);
        let band = 1.0 + band_gain * (-0.5 * ((freq - band_centre) / band_width).powi(2)).exp();
        *c *= band * (freq / 1000.0).powf(-0.5 * tilt);
    }
    planner.plan_fft_inverse(n).process(&mut spectrum);
    spectrum.truncate(len);
    spectrum.iter().map(|c| c.re / n as f64).collect()
}

pub fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

pub fn snr_db(clean: &[f64], noise: &[f64]) -> f64 {
    10.0 * (energy(clean) / energy(noise)).log10()
}

/// Scales `noise` to the requested SNR against `clean`, then scales both so
/// that the mixture peak is `MIX_PEAK`. Returns `(clean, noise, mixture)`.
pub fn mix_at_snr(clean: &[f64], noise: &[f64], snr: f64) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    if clean.len() != noise.len() {
        return Err(Error::Shape(format!("clean {} vs noise {} samples", clean.len(), noise.len())));
    }
    let (es, en) = (energy(clean), energy(noise));
    if !(es > 0.0 && en > 0.0) {
        return Err(Error::Domain("cannot mix silent signals at a finite SNR".into()));
    }
    let g = (es / en / 10f64.powf(snr / 10.0)).sqrt();
    let mixture: Vec<f64> = clean.iter().zip(noise).map(|(s, b)| s + g * b).collect();
    let peak = mixture.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let k = MIX_PEAK / peak;
    Ok((
        clean.iter().map(|v| v * k).collect(),
        noise.iter().map(|v| v * g * k).collect(),
        mixture.iter().map(|v| v * k).collect(),
    ))
}

fn normalize_peak(x: &mut [f64], peak: f64) {
    let m = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if m > 0.0 {
        x.iter_mut().for_each(|v| *v *= peak / m);
    }
}

#[derive(Clone, Debug)]
pub struct MixtureItem {
    pub id: String,
    pub clean: Waveform,
    pub noise: Waveform,
    pub mixture: Waveform,
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub clean: Vec<(String, Waveform)>,
    pub mixtures: Vec<MixtureItem>,
    pub config: CorpusConfig,
}

/// Builds the corpus in memory. Every file has its own RNG stream, so item
/// `i` does not depend on how many other items are requested.
pub fn generate_corpus(config: &CorpusConfig) -> Result<Corpus> {
    config.validate()?;
    let (len, sr) = (config.utterance_len(), config.sample_rate);
    let clean = (0..config.n_clean)
        .map(|i| {
            let mut rng = RngStream::new(derive_seed(config.seed, CLEAN_TAG), i as u64);
            let mut x = synth_speech(len, sr, &mut rng);
            normalize_peak(&mut x, MIX_PEAK);
            Ok((format!("clean_{i:04}"), Waveform::new(x, sr)?))
        })
        .collect::<Result<_>>()?;
    let mixtures = (0..config.n_mixtures)
        .map(|i| {
            let mut speech_rng = RngStream::new(derive_seed(config.seed, TEST_SPEECH_TAG), i as u64);
            let mut noise_rng = RngStream::new(derive_seed(config.seed, NOISE_TAG), i as u64);
            let s = synth_speech(len, sr, &mut speech_rng);
            let b = synth_noise(len, sr, &mut noise_rng);
            let (s, b, x) = mix_at_snr(&s, &b, config.snr_db)?;
            Ok(MixtureItem {
                id: format!("mix_{i:04}"),
                clean: Waveform::new(s, sr)?,
                noise: Waveform::new(b, sr)?,
                mixture: Waveform::new(x, sr)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Corpus {
        clean,
        mixtures,
        config: config.clone(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// `clean` for training utterances, `mixture` for test items.
    pub kind: String,
    pub clean: String,
    pub noise: String,
    pub mixture: String,
    pub snr_db: String,
}

impl ManifestEntry {
    pub fn is_mixture(&self) -> bool {
        self.kind == "mixture"
    }
}

/// Writes `clean/*.wav`, `test/*_{clean,noise,mix}.wav` and the manifest;
/// paths in the manifest are relative to `dir`.
pub fn write_corpus(corpus: &Corpus, dir: &Path) -> Result<Vec<ManifestEntry>> {
    for sub in ["clean", "test"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut entries = Vec::new();
    for (id, wave) in &corpus.clean {
        let rel = format!("clean/{id}.wav");
        write_wav(dir.join(&rel), wave)?;
        entries.push(ManifestEntry {
            id: id.clone(),
            kind: "clean".into(),
            clean: rel,
            noise: String::new(),
            mixture: String::new(),
            snr_db: String::new(),
        });
    }
    for item in &corpus.mixtures {
        let rel = |suffix: &str| format!("test/{}_{suffix}.wav", item.id);
        write_wav(dir.join(rel("clean")), &item.clean)?;
        write_wav(dir.join(rel("noise")), &item.noise)?;
        write_wav(dir.join(rel("mix")), &item.mixture)?;
        entries.push(ManifestEntry {
            id: item.id.clone(),
            kind: "mixture".into(),
            clean: rel("clean"),
            noise: rel("noise"),
            mixture: rel("mix"),
            snr_db: format!("{}", corpus.config.snr_db),
        });
    }
    let path = dir.join(MANIFEST_FILE);
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for e in &entries {
        w.serialize(e).map_err(|e| Error::Format(format!("manifest: {e}")))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(entries)
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let path = dir.join(MANIFEST_FILE);
    let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    csv::Reader::from_reader(file)
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn resolve(dir: &Path, rel: &str) -> PathBuf {
    dir.join(rel)
}

/// All clean training utterances listed in a corpus directory.
pub fn load_clean(dir: &Path) -> Result<Vec<Waveform>> {
    read_manifest(dir)?
        .iter()
        .filter(|e| e.kind == "clean")
        .map(|e| read_wav(resolve(dir, &e.clean)))
        .collect()
}
