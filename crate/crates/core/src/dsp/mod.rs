//! Audio I/O, the preprocessing chain, the STFT/mel frontend and SNR
//! estimation.
//!
//! Two frontends share one implementation: the synthesizer/vocoder frontend
//! ([`DspConfig`], 22.05 kHz, 80 mels, centered frames) and the speaker
//! encoder frontend ([`EncoderFrontendConfig`], 16 kHz, 40 mels, uncentered
//! frames over fixed 1.6 s chunks).

mod edit;
mod mel;
mod melfile;
mod resample;
mod snr;
mod wav;

use serde::{Deserialize, Serialize};

pub use edit::{chunk_utterance, frame_is_silent, normalize_amplitude, split_long, truncate_silence};
pub use mel::{hz_to_mel, mel_to_hz, mel_spectrogram, MelFilterbank, MelFrontend};
pub use melfile::{decode_matrix, encode_matrix, read_mels, write_mels, ALGN_MAGIC, CORR_MAGIC, MELS_MAGIC, MELS_VERSION};
pub use resample::resample;
pub use snr::{estimate_snr, SnrEstimate, SnrSettings};
pub use wav::{decode_wav, encode_wav, load_wav, write_wav, MAX_WAV_VALUE};

use crate::{Error, Result};

/// Peak level targeted by [`normalize_amplitude`].
pub const NORMALIZE_PEAK: f32 = 0.95;

/// Log-mel floor applied before the natural log.
pub const LOG_FLOOR: f64 = 1e-5;

/// Mono audio with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate_hz: u32,
    pub source_id: String,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate_hz: u32, source_id: impl Into<String>) -> Self {
        Self {
            samples,
            sample_rate_hz,
            source_id: source_id.into(),
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()))
    }

    /// A copy holding `samples[start..end]`.
    pub fn slice(&self, start: usize, end: usize) -> AudioClip {
        AudioClip {
            samples: self.samples[start..end].to_vec(),
            sample_rate_hz: self.sample_rate_hz,
            source_id: self.source_id.clone(),
        }
    }
}

/// Synthesizer / vocoder audio parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DspConfig {
    pub max_wav_value: f64,
    pub sampling_rate_hz: u32,
    pub filter_length: usize,
    pub hop_length: usize,
    pub win_size: usize,
    pub n_mel_channels: usize,
    pub mel_fmin_hz: f64,
    pub mel_fmax_hz: f64,
}

impl Default for DspConfig {
    fn default() -> Self {
        Self {
            max_wav_value: 32768.0,
            sampling_rate_hz: 22050,
            filter_length: 800,
            hop_length: 200,
            win_size: 800,
            n_mel_channels: 80,
            mel_fmin_hz: 0.0,
            mel_fmax_hz: 7600.0,
        }
    }
}

impl DspConfig {
    pub fn validate(&self) -> Result<()> {
        if self.filter_length != self.win_size {
            return Err(Error::Config(format!(
                "filter_length ({}) must equal win_size ({})",
                self.filter_length, self.win_size
            )));
        }
        if self.hop_length == 0 || self.hop_length >= self.win_size {
            return Err(Error::Config(format!(
                "hop_length ({}) must be in 1..win_size ({})",
                self.hop_length, self.win_size
            )));
        }
        if self.mel_fmax_hz > self.sampling_rate_hz as f64 / 2.0 || self.mel_fmin_hz >= self.mel_fmax_hz {
            return Err(Error::Config(format!(
                "mel band {}..{} Hz does not fit below Nyquist at {} Hz",
                self.mel_fmin_hz, self.mel_fmax_hz, self.sampling_rate_hz
            )));
        }
        if self.n_mel_channels == 0 || self.max_wav_value <= 0.0 {
            return Err(Error::Config("n_mel_channels and max_wav_value must be positive".into()));
        }
        Ok(())
    }
}

/// Speaker encoder frontend. Window and hop are given in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderFrontendConfig {
    pub sampling_rate_hz: u32,
    pub window_ms: u32,
    pub hop_ms: u32,
    pub n_mel_channels: usize,
    pub chunk_seconds: f64,
    pub chunk_overlap_fraction: f64,
}

impl Default for EncoderFrontendConfig {
    fn default() -> Self {
        Self {
            sampling_rate_hz: 16000,
            window_ms: 25,
            hop_ms: 10,
            n_mel_channels: 40,
            chunk_seconds: 1.6,
            chunk_overlap_fraction: 0.5,
        }
    }
}

impl EncoderFrontendConfig {
    pub fn chunk_samples(&self) -> usize {
        (self.chunk_seconds * self.sampling_rate_hz as f64).round() as usize
    }

    pub fn chunk_hop_samples(&self) -> usize {
        ((1.0 - self.chunk_overlap_fraction) * self.chunk_samples() as f64).round() as usize
    }

    pub fn window_samples(&self) -> usize {
        (self.window_ms as usize * self.sampling_rate_hz as usize) / 1000
    }

    pub fn hop_samples(&self) -> usize {
        (self.hop_ms as usize * self.sampling_rate_hz as usize) / 1000
    }

    /// Mel frames in one chunk: `1 + floor((chunk_ms - window_ms) / hop_ms)`.
    pub fn chunk_frames(&self) -> usize {
        let chunk_ms = (self.chunk_seconds * 1000.0).round() as usize;
        1 + (chunk_ms - self.window_ms as usize) / self.hop_ms as usize
    }

    pub fn validate(&self) -> Result<()> {
        let exact = self.chunk_seconds * self.sampling_rate_hz as f64;
        if (exact - exact.round()).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "chunk of {} s is not a whole number of samples at {} Hz",
                self.chunk_seconds, self.sampling_rate_hz
            )));
        }
        if !(0.0..1.0).contains(&self.chunk_overlap_fraction) {
            return Err(Error::Config("chunk_overlap_fraction must be in [0, 1)".into()));
        }
        if self.hop_ms == 0 || self.window_ms == 0 || self.n_mel_channels == 0 {
            return Err(Error::Config("encoder frontend sizes must be positive".into()));
        }
        if (self.chunk_seconds * 1000.0) < self.window_ms as f64 {
            return Err(Error::Config("chunk shorter than one analysis window".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SilencePolicy {
    pub max_silence_s: f64,
    pub retained_silence_s: f64,
    pub silence_floor_dbfs: f64,
    /// Length of the RMS analysis frames used to classify silence.
    pub frame_ms: f64,
}

impl Default for SilencePolicy {
    fn default() -> Self {
        Self {
            max_silence_s: 0.5,
            retained_silence_s: 0.1,
            silence_floor_dbfs: -40.0,
            frame_ms: 10.0,
        }
    }
}

/// `T x n_mel` log-mel energies, row-major by frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub frames: ndarray::Array2<f64>,
    pub config_ref: String,
}

impl MelSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn n_mels(&self) -> usize {
        self.frames.ncols()
    }
}
