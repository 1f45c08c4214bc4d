//! Short-time Fourier transform and triangular mel filterbank.

use std::fmt;
use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{AudioClip, DspConfig, EncoderFrontendConfig, MelSpectrogram, LOG_FLOOR};
use crate::{Error, Result};

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// `n_mels x (n_fft/2 + 1)` triangular weights, unnormalized.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    pub weights: Array2<f64>,
    /// `n_mels + 2` band edges in Hz; filter `k` spans `edges[k]..edges[k+2]`
    /// and peaks at `edges[k+1]`.
    pub edges_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(sample_rate_hz: u32, n_fft: usize, n_mels: usize, fmin_hz: f64, fmax_hz: f64) -> Self {
        let n_bins = n_fft / 2 + 1;
        let (lo, hi) = (hz_to_mel(fmin_hz), hz_to_mel(fmax_hz));
        let edges_hz: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bin_hz = sample_rate_hz as f64 / n_fft as f64;
        let mut weights = Array2::zeros((n_mels, n_bins));
        for k in 0..n_mels {
            let (left, center, right) = (edges_hz[k], edges_hz[k + 1], edges_hz[k + 2]);
            for bin in 0..n_bins {
                let f = bin as f64 * bin_hz;
                let rising = (f - left) / (center - left);
                let falling = (right - f) / (right - center);
                weights[[k, bin]] = rising.min(falling).max(0.0);
            }
        }
        Self { weights, edges_hz }
    }

    pub fn n_mels(&self) -> usize {
        self.weights.nrows()
    }

    pub fn n_bins(&self) -> usize {
        self.weights.ncols()
    }

    pub fn center_hz(&self, k: usize) -> f64 {
        self.edges_hz[k + 1]
    }
}

/// A fully specified analysis frontend: window, FFT plan and filterbank.
#[derive(Clone)]
pub struct MelFrontend {
    pub name: String,
    pub sample_rate_hz: u32,
    pub n_fft: usize,
    pub win_length: usize,
    pub hop_length: usize,
    /// Reflect-pad by `n_fft / 2` on both sides so frame `t` is centred on
    /// sample `t * hop`.
    pub center: bool,
    window: Vec<f64>,
    filterbank: MelFilterbank,
    fft: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for MelFrontend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MelFrontend")
            .field("name", &self.name)
            .field("sample_rate_hz", &self.sample_rate_hz)
            .field("n_fft", &self.n_fft)
            .field("hop_length", &self.hop_length)
            .field("n_mels", &self.filterbank.n_mels())
            .field("center", &self.center)
            .finish()
    }
}

impl MelFrontend {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        sample_rate_hz: u32,
        n_fft: usize,
        win_length: usize,
        hop_length: usize,
        n_mels: usize,
        fmin_hz: f64,
        fmax_hz: f64,
        center: bool,
    ) -> Self {
        assert!(win_length <= n_fft && hop_length > 0);
        // Periodic Hann, zero padded to n_fft and centred.
        let offset = (n_fft - win_length) / 2;
        let mut window = vec![0.0; n_fft];
        for i in 0..win_length {
            window[offset + i] = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / win_length as f64).cos();
        }
        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        Self {
            name: name.into(),
            sample_rate_hz,
            n_fft,
            win_length,
            hop_length,
            center,
            window,
            filterbank: MelFilterbank::new(sample_rate_hz, n_fft, n_mels, fmin_hz, fmax_hz),
            fft,
        }
    }

    /// Synthesizer/vocoder frontend: centred frames, `T = 1 + floor(len / hop)`.
    pub fn synthesizer(cfg: &DspConfig) -> Self {
        Self::new(
            "dsp",
            cfg.sampling_rate_hz,
            cfg.filter_length,
            cfg.win_size,
            cfg.hop_length,
            cfg.n_mel_channels,
            cfg.mel_fmin_hz,
            cfg.mel_fmax_hz,
            true,
        )
    }

    /// Speaker encoder frontend: uncentred frames,
    /// `T = 1 + floor((len - window) / hop)`.
    pub fn encoder(cfg: &EncoderFrontendConfig) -> Self {
        let win = cfg.window_samples();
        Self::new(
            "encoder",
            cfg.sampling_rate_hz,
            win,
            win,
            cfg.hop_samples(),
            cfg.n_mel_channels,
            0.0,
            cfg.sampling_rate_hz as f64 / 2.0,
            false,
        )
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    pub fn n_mels(&self) -> usize {
        self.filterbank.n_mels()
    }

    pub fn frame_count(&self, len: usize) -> usize {
        if self.center {
            1 + len / self.hop_length
        } else if len < self.n_fft {
            0
        } else {
            1 + (len - self.n_fft) / self.hop_length
        }
    }

    /// Magnitude spectrogram, `T x (n_fft/2 + 1)`.
    pub fn magnitude(&self, samples: &[f32]) -> Array2<f64> {
        let padded: Vec<f64> = if self.center {
            reflect_pad(samples, self.n_fft / 2)
        } else {
            samples.iter().map(|&s| s as f64).collect()
        };
        let frames = self.frame_count(samples.len());
        let n_bins = self.n_fft / 2 + 1;
        let mut out = Array2::zeros((frames, n_bins));
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for t in 0..frames {
            let start = t * self.hop_length;
            for (i, slot) in buf.iter_mut().enumerate() {
                *slot = Complex::new(padded[start + i] * self.window[i], 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (bin, value) in buf.iter().take(n_bins).enumerate() {
                out[[t, bin]] = value.norm();
            }
        }
        out
    }
}

fn reflect_pad(samples: &[f32], pad: usize) -> Vec<f64> {
    let n = samples.len();
    let at = |i: isize| -> f64 {
        // numpy "reflect": the edge sample is not repeated.
        let period = 2 * (n as isize - 1);
        let mut j = i.rem_euclid(period.max(1));
        if j >= n as isize {
            j = period - j;
        }
        samples[j as usize] as f64
    };
    (-(pad as isize)..(n + pad) as isize).map(at).collect()
}

/// Log-mel spectrogram: magnitude STFT, triangular mel filterbank, natural
/// log with a `1e-5` floor.
pub fn mel_spectrogram(clip: &AudioClip, frontend: &MelFrontend) -> Result<MelSpectrogram> {
    if clip.sample_rate_hz != frontend.sample_rate_hz {
        return Err(Error::Contract(format!(
            "{} frontend expects {} Hz audio, got {} Hz",
            frontend.name, frontend.sample_rate_hz, clip.sample_rate_hz
        )));
    }
    if clip.samples.len() < frontend.win_length.max(2) {
        return Err(Error::DegenerateInput(format!(
            "{}: {} samples is shorter than one {}-sample window",
            clip.source_id,
            clip.samples.len(),
            frontend.win_length
        )));
    }
    let magnitude = frontend.magnitude(&clip.samples);
    let mel = magnitude.dot(&frontend.filterbank.weights.t());
    let frames = mel.mapv(|v| v.max(LOG_FLOOR).ln());
    Ok(MelSpectrogram {
        frames,
        config_ref: frontend.name.clone(),
    })
}
