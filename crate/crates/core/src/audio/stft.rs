use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;

use super::wav::Waveform;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Sine analysis/synthesis window `w[t] = sin(π (t + ½) / T)`.
pub fn sine_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|t| (PI * (t as f64 + 0.5) / len as f64).sin())
        .collect()
}

/// STFT framing parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StftConfig {
    pub window_length: usize,
    pub hop: usize,
}

impl StftConfig {
    /// 1024-sample window, 75 % overlap: 64 ms at 16 kHz, 513 bins.
    pub const DEFAULT: StftConfig = StftConfig {
        window_length: 1024,
        hop: 256,
    };

    /// Window and hop from a duration in milliseconds and an overlap fraction.
    pub fn from_ms(sample_rate: u32, window_ms: f64, overlap: f64) -> Result<Self> {
        if !(window_ms > 0.0) || !(0.0..1.0).contains(&overlap) {
            return Err(Error::Config(format!(
                "window {window_ms} ms / overlap {overlap} out of range"
            )));
        }
        let mut window_length = (sample_rate as f64 * window_ms / 1000.0).round() as usize;
        window_length += window_length % 2;
        let hop = ((window_length as f64) * (1.0 - overlap)).round() as usize;
        let cfg = StftConfig { window_length, hop };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_length < 2 || self.window_length % 2 != 0 {
            return Err(Error::Config(format!(
                "window length must be even and >= 2, got {}",
                self.window_length
            )));
        }
        if self.hop == 0 || self.hop > self.window_length / 2 {
            return Err(Error::Config(format!(
                "hop must lie in [1, window/2], got {} for window {}",
                self.hop, self.window_length
            )));
        }
        Ok(())
    }

    pub fn freq_bins(&self) -> usize {
        self.window_length / 2 + 1
    }

    fn lead_padding(&self) -> usize {
        self.window_length - self.hop
    }

    /// Frames needed so every signal sample is covered by a full set of
    /// overlapping windows.
    pub fn frame_count(&self, signal_len: usize) -> usize {
        (signal_len + self.lead_padding()).div_ceil(self.hop).max(1)
    }
}

impl Default for StftConfig {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// One-sided STFT coefficients, `F × N`, stored frequency-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrogram {
    freq_bins: usize,
    frames: usize,
    data: Vec<Complex64>,
    config: StftConfig,
    sample_rate: u32,
    signal_len: usize,
}

impl ComplexSpectrogram {
    pub fn new(
        freq_bins: usize,
        frames: usize,
        data: Vec<Complex64>,
        config: StftConfig,
        sample_rate: u32,
        signal_len: usize,
    ) -> Result<Self> {
        config.validate()?;
        if freq_bins != config.freq_bins() {
            return Err(Error::Shape(format!(
                "{freq_bins} bins inconsistent with window length {}",
                config.window_length
            )));
        }
        if data.len() != freq_bins * frames {
            return Err(Error::Shape(format!(
                "{freq_bins}x{frames} spectrogram needs {} coefficients, got {}",
                freq_bins * frames,
                data.len()
            )));
        }
        if data.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::NonFinite("spectrogram coefficient".into()));
        }
        Ok(Self {
            freq_bins,
            frames,
            data,
            config,
            sample_rate,
            signal_len,
        })
    }

    pub fn freq_bins(&self) -> usize {
        self.freq_bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn config(&self) -> StftConfig {
        self.config
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn signal_len(&self) -> usize {
        self.signal_len
    }

    pub fn get(&self, f: usize, n: usize) -> Complex64 {
        self.data[f * self.frames + n]
    }

    pub fn coefficients(&self) -> &[Complex64] {
        &self.data
    }

    /// `|X|^⊙2` as an `F × N` matrix.
    pub fn power(&self) -> Matrix {
        Matrix::from_fn(self.freq_bins, self.frames, |f, n| self.get(f, n).norm_sqr())
    }

    /// Applies a real-valued `F × N` mask bin by bin.
    pub fn masked(&self, mask: &Matrix) -> Result<ComplexSpectrogram> {
        if mask.shape() != (self.freq_bins, self.frames) {
            return Err(Error::Shape(format!(
                "mask {:?} vs spectrogram {}x{}",
                mask.shape(),
                self.freq_bins,
                self.frames
            )));
        }
        let data = self
            .data
            .iter()
            .zip(mask.as_slice())
            .map(|(x, &m)| x * m)
            .collect();
        Ok(ComplexSpectrogram { data, ..self.clone() })
    }

    /// Same metadata, new coefficients.
    pub fn with_coefficients(&self, data: Vec<Complex64>) -> Result<ComplexSpectrogram> {
        ComplexSpectrogram::new(
            self.freq_bins,
            self.frames,
            data,
            self.config,
            self.sample_rate,
            self.signal_len,
        )
    }
}

/// Short-time Fourier transform with a sine window.
///
/// The signal is preceded by `window − hop` zeros and zero-padded at the end
/// to a whole number of frames, so every input sample lies under a complete
/// set of overlapping windows and [`istft`] reconstructs it exactly.
pub fn stft(wav: &Waveform, config: StftConfig) -> Result<ComplexSpectrogram> {
    config.validate()?;
    let win_len = config.window_length;
    let frames = config.frame_count(wav.len());
    let lead = config.lead_padding();
    let mut padded = vec![0.0; (frames - 1) * config.hop + win_len];
    padded[lead..lead + wav.len()].copy_from_slice(&wav.samples);

    let window = sine_window(win_len);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(win_len);
    let freq_bins = config.freq_bins();
    let mut data = vec![Complex64::new(0.0, 0.0); freq_bins * frames];
    let mut buf = vec![Complex64::new(0.0, 0.0); win_len];
    for n in 0..frames {
        let start = n * config.hop;
        for (t, slot) in buf.iter_mut().enumerate() {
            *slot = Complex64::new(padded[start + t] * window[t], 0.0);
        }
        fft.process(&mut buf);
        for f in 0..freq_bins {
            data[f * frames + n] = buf[f];
        }
    }
    ComplexSpectrogram::new(freq_bins, frames, data, config, wav.sample_rate, wav.len())
}

/// Inverse STFT by windowed overlap-add, normalised by the summed squared
/// synthesis window (constant 2 for the sine window at 75 % overlap).
pub fn istft(spec: &ComplexSpectrogram) -> Result<Waveform> {
    let config = spec.config;
    config.validate()?;
    let win_len = config.window_length;
    let frames = spec.frames;
    if frames == 0 {
        return Err(Error::Shape("spectrogram has no frames".into()));
    }
    let lead = config.lead_padding();
    let out_len = (frames - 1) * config.hop + win_len;
    if lead + spec.signal_len > out_len {
        return Err(Error::Shape(format!(
            "{frames} frames cannot hold a {}-sample signal",
            spec.signal_len
        )));
    }
    let window = sine_window(win_len);
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(win_len);
    let mut out = vec![0.0; out_len];
    let mut norm = vec![0.0; out_len];
    let mut buf = vec![Complex64::new(0.0, 0.0); win_len];
    let half = win_len / 2;
    for n in 0..frames {
        for f in 0..=half {
            buf[f] = spec.get(f, n);
        }
        // Real signal: DC and Nyquist are real, upper half is the conjugate mirror.
        buf[0].im = 0.0;
        buf[half].im = 0.0;
        for f in 1..half {
            buf[win_len - f] = buf[f].conj();
        }
        ifft.process(&mut buf);
        let start = n * config.hop;
        for t in 0..win_len {
            out[start + t] += buf[t].re / win_len as f64 * window[t];
            norm[start + t] += window[t] * window[t];
        }
    }
    let samples = (lead..lead + spec.signal_len)
        .map(|i| out[i] / norm[i])
        .collect();
    Waveform::new(samples, spec.sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    fn noise(len: usize, seed: u64) -> Waveform {
        let mut rng = RngStream::new(seed, 0);
        Waveform::new((0..len).map(|_| 0.3 * rng.gaussian()).collect(), 16_000).unwrap()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = a.iter().map(|x| x * x).sum();
        (num / den).sqrt()
    }

    /// O(T²) DFT of a real frame, bins 0..=T/2.
    fn naive_dft(frame: &[f64]) -> Vec<Complex64> {
        let t_len = frame.len();
        (0..=t_len / 2)
            .map(|k| {
                frame
                    .iter()
                    .enumerate()
                    .map(|(t, &x)| {
                        let phase = -2.0 * PI * (k * t) as f64 / t_len as f64;
                        Complex64::new(x * phase.cos(), x * phase.sin())
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn default_geometry() {
        let cfg = StftConfig::from_ms(16_000, 64.0, 0.75).unwrap();
        assert_eq!(cfg, StftConfig::DEFAULT);
        assert_eq!(cfg.freq_bins(), 513);
        let spec = stft(&noise(4000, 1), cfg).unwrap();
        assert_eq!(spec.freq_bins(), 513);
        assert_eq!(spec.frames(), cfg.frame_count(4000));
    }

    #[test]
    fn zero_in_zero_out() {
        let wav = Waveform::new(vec![0.0; 3000], 16_000).unwrap();
        let spec = stft(&wav, StftConfig::DEFAULT).unwrap();
        assert!(spec.coefficients().iter().all(|c| c.norm() == 0.0));
        let back = istft(&spec).unwrap();
        assert!(back.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn impulse_matches_naive_dft() {
        let cfg = StftConfig { window_length: 64, hop: 16 };
        let mut samples = vec![0.0; 200];
        samples[0] = 1.0;
        let wav = Waveform::new(samples, 16_000).unwrap();
        let spec = stft(&wav, cfg).unwrap();
        // Frame 0 holds the impulse at offset window − hop.
        let window = sine_window(64);
        let mut frame = vec![0.0; 64];
        frame[48] = window[48];
        let oracle = naive_dft(&frame);
        for (f, expected) in oracle.iter().enumerate() {
            assert!((spec.get(f, 0) - expected).norm() < 1e-12);
            assert!((spec.get(f, 0).norm() - window[48]).abs() < 1e-12);
        }
    }

    #[test]
    fn perfect_reconstruction_white_noise_and_chirp() {
        let wav = noise(32_000, 2);
        let back = istft(&stft(&wav, StftConfig::DEFAULT).unwrap()).unwrap();
        assert_eq!(back.len(), wav.len());
        assert!(rel_err(&wav.samples, &back.samples) < 1e-6);

        let chirp: Vec<f64> = (0..20_000)
            .map(|t| {
                let s = t as f64 / 16_000.0;
                0.5 * (2.0 * PI * (120.0 * s + 400.0 * s * s)).sin() * (1.0 + 0.5 * (7.0 * s).sin())
            })
            .collect();
        let wav = Waveform::new(chirp, 16_000).unwrap();
        let back = istft(&stft(&wav, StftConfig::DEFAULT).unwrap()).unwrap();
        assert!(rel_err(&wav.samples, &back.samples) < 1e-6);
    }

    #[test]
    fn short_signal_round_trip() {
        let wav = noise(100, 3);
        let spec = stft(&wav, StftConfig::DEFAULT).unwrap();
        assert_eq!(spec.frames(), 4);
        let back = istft(&spec).unwrap();
        assert!(rel_err(&wav.samples, &back.samples) < 1e-10);
    }

    #[test]
    fn parseval_per_frame() {
        let cfg = StftConfig { window_length: 256, hop: 64 };
        let wav = noise(3000, 4);
        let spec = stft(&wav, cfg).unwrap();
        let window = sine_window(256);
        let lead = 256 - 64;
        let mut padded = vec![0.0; (spec.frames() - 1) * 64 + 256];
        padded[lead..lead + 3000].copy_from_slice(&wav.samples);
        for n in 0..spec.frames() {
            let time: f64 = (0..256).map(|t| (padded[n * 64 + t] * window[t]).powi(2)).sum();
            let mut freq = 0.0;
            for f in 0..spec.freq_bins() {
                let weight = if f == 0 || f == 128 { 1.0 } else { 2.0 };
                freq += weight * spec.get(f, n).norm_sqr();
            }
            freq /= 256.0;
            if time > 0.0 {
                assert!(((time - freq) / time).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn linearity() {
        let x = noise(5000, 5);
        let y = noise(5000, 6);
        let (a, b) = (0.7, -1.3);
        let combo = Waveform::new(
            x.samples.iter().zip(&y.samples).map(|(p, q)| a * p + b * q).collect(),
            16_000,
        )
        .unwrap();
        let sx = stft(&x, StftConfig::DEFAULT).unwrap();
        let sy = stft(&y, StftConfig::DEFAULT).unwrap();
        let sc = stft(&combo, StftConfig::DEFAULT).unwrap();
        for i in 0..sc.coefficients().len() {
            let expected = sx.coefficients()[i] * a + sy.coefficients()[i] * b;
            assert!((sc.coefficients()[i] - expected).norm() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_config() {
        let wav = noise(100, 7);
        assert!(stft(&wav, StftConfig { window_length: 63, hop: 16 }).is_err());
        assert!(stft(&wav, StftConfig { window_length: 64, hop: 0 }).is_err());
        let spec = stft(&wav, StftConfig::DEFAULT).unwrap();
        assert!(spec.masked(&Matrix::zeros(2, 2)).is_err());
    }
}
