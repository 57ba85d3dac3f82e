//! WAV I/O and sine-window STFT analysis/synthesis.

mod stft;
mod wav;

pub use stft::{istft, sine_window, stft, ComplexSpectrogram, StftConfig};
pub use wav::{read_wav, read_wav_at, write_wav, Waveform, DEFAULT_SAMPLE_RATE};
