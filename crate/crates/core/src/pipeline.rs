use serde::Serialize;

use crate::audio::{istft, stft, StftConfig, Waveform};
use crate::error::{Error, Result};
use crate::eval::si_sdr;
use crate::isnmf::{enhance_nmf, train_dictionary, BaselineConfig, DictionaryFit, SpeechDictionary};
use crate::mcem::{enhance_spectrogram, EnhancerConfig, McemResult};
use crate::vae::{train, CleanFrameSet, TrainingConfig, TrainingOutcome, VaeParameters};

/// Power-spectrum frames of all clean utterances, optionally capped.
pub fn clean_frames(clean: &[Waveform], stft_config: StftConfig, max_frames: Option<usize>) -> Result<CleanFrameSet> {
    let specs = clean.iter().map(|w| stft(w, stft_config)).collect::<Result<Vec<_>>>()?;
    let frames = CleanFrameSet::from_spectrograms(&specs)?;
    match max_frames {
        Some(n) if n < frames.len() => frames.truncated(n),
        _ => Ok(frames),
    }
}

pub fn train_vae_on(clean: &[Waveform], stft_config: StftConfig, max_frames: Option<usize>, config: &TrainingConfig) -> Result<TrainingOutcome> {
    train(config, &clean_frames(clean, stft_config, max_frames)?)
}

/// Dictionary training input is `F × N_tr`, i.e. frames as columns.
pub fn train_dictionary_on(
    clean: &[Waveform],
    stft_config: StftConfig,
    max_frames: Option<usize>,
    config: &BaselineConfig,
) -> Result<DictionaryFit> {
    let frames = clean_frames(clean, stft_config, max_frames)?;
    train_dictionary(&frames.as_matrix().transpose(), config)
}

pub struct WaveformEnhancement {
    pub estimate: Waveform,
    pub mcem: McemResult,
}

pub fn enhance_waveform(
    mixture: &Waveform,
    vae: &VaeParameters,
    stft_config: StftConfig,
    config: &EnhancerConfig,
) -> Result<WaveformEnhancement> {
    let spec = stft(mixture, stft_config)?;
    let out = enhance_spectrogram(&spec, vae, config)?;
    Ok(WaveformEnhancement {
        estimate: istft(&out.estimate)?,
        mcem: out.result,
    })
}

pub fn enhance_nmf_waveform(
    mixture: &Waveform,
    dictionary: &SpeechDictionary,
    stft_config: StftConfig,
    config: &BaselineConfig,
) -> Result<Waveform> {
    let spec = stft(mixture, stft_config)?;
    istft(&enhance_nmf(&spec, dictionary, config)?.estimate)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RobustnessRow {
    pub scaling_db: f64,
    pub sdr_free_db: f64,
    pub sdr_frozen_db: f64,
}

/// `−12, −6, …, +18` dB.
pub fn default_scalings() -> Vec<f64> {
    (0..6).map(|i| -12.0 + 6.0 * i as f64).collect()
}

/// Rescales the mixture power by each factor and enhances it with gains
/// re-estimated and with gains pinned to one. Both runs share the seed.
pub fn gain_robustness(
    clean: &Waveform,
    mixture: &Waveform,
    vae: &VaeParameters,
    stft_config: StftConfig,
    config: &EnhancerConfig,
    scalings_db: &[f64],
) -> Result<Vec<RobustnessRow>> {
    if scalings_db.is_empty() {
        return Err(Error::Config("no scalings requested".into()));
    }
    scalings_db
        .iter()
        .map(|&db| {
            let scaled = mixture.scaled(10f64.powf(db / 20.0));
            let run = |update_gains: bool| -> Result<f64> {
                let cfg = EnhancerConfig {
                    update_gains,
                    ..config.clone()
                };
                let out = enhance_waveform(&scaled, vae, stft_config, &cfg)?;
                si_sdr(&clean.samples, &out.estimate.samples)
            };
            Ok(RobustnessRow {
                scaling_db: db,
                sdr_free_db: run(true)?,
                sdr_frozen_db: run(false)?,
            })
        })
        .collect()
}
