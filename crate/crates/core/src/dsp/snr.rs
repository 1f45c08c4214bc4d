//! Energy-threshold SNR estimation.
//!
//! Frames whose energy exceeds `margin` times the 20th-percentile frame
//! energy count as speech, the rest as noise. Speech power is the mean
//! speech-frame power with the noise floor subtracted.

use serde::{Deserialize, Serialize};

use super::AudioClip;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrSettings {
    pub frame_ms: f64,
    pub noise_percentile: f64,
    pub margin: f64,
    pub min_db: f64,
    pub max_db: f64,
}

impl Default for SnrSettings {
    fn default() -> Self {
        Self {
            frame_ms: 20.0,
            noise_percentile: 0.2,
            margin: 3.0,
            min_db: 0.0,
            max_db: 60.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrEstimate {
    pub db: f64,
    pub speech_frames: usize,
    pub noise_frames: usize,
    /// Set when the noise class has zero power; `db` is then the clamp maximum.
    pub no_noise_floor: bool,
}

pub fn estimate_snr(clip: &AudioClip, settings: &SnrSettings) -> Result<SnrEstimate> {
    if clip.duration_s() < 1.0 {
        return Err(Error::DegenerateInput(format!(
            "{}: SNR needs at least 1 s of audio, got {:.3} s",
            clip.source_id,
            clip.duration_s()
        )));
    }
    let frame = ((settings.frame_ms / 1000.0) * clip.sample_rate_hz as f64).round().max(1.0) as usize;
    let energies: Vec<f64> = clip
        .samples
        .chunks_exact(frame)
        .map(|f| f.iter().map(|&s| (s as f64) * (s as f64)).sum::<f64>() / frame as f64)
        .collect();
    let mut sorted = energies.clone();
    sorted.sort_by(f64::total_cmp);
    let idx = ((sorted.len() - 1) as f64 * settings.noise_percentile).floor() as usize;
    let threshold = sorted[idx] * settings.margin;

    let (mut speech_sum, mut speech_n, mut noise_sum, mut noise_n) = (0.0, 0usize, 0.0, 0usize);
    for &e in &energies {
        if e > threshold {
            speech_sum += e;
            speech_n += 1;
        } else {
            noise_sum += e;
            noise_n += 1;
        }
    }
    if speech_n == 0 {
        // One class only: speech and noise are indistinguishable.
        return Ok(SnrEstimate {
            db: settings.min_db,
            speech_frames: 0,
            noise_frames: noise_n,
            no_noise_floor: false,
        });
    }
    let noise = noise_sum / noise_n as f64;
    if noise == 0.0 {
        return Ok(SnrEstimate {
            db: settings.max_db,
            speech_frames: speech_n,
            noise_frames: noise_n,
            no_noise_floor: true,
        });
    }
    let speech = (speech_sum / speech_n as f64 - noise).max(0.0);
    let db = if speech == 0.0 {
        settings.min_db
    } else {
        (10.0 * (speech / noise).log10()).clamp(settings.min_db, settings.max_db)
    };
    Ok(SnrEstimate {
        db,
        speech_frames: speech_n,
        noise_frames: noise_n,
        no_noise_floor: false,
    })
}
