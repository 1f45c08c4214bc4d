use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dsp::{estimate_snr, AudioClip, SnrSettings};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipSnr {
    pub source_id: String,
    pub speaker_id: String,
    pub snr_db: f64,
    pub no_noise_floor: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerSnr {
    pub speaker_id: String,
    pub mean_db: f64,
    pub clips: usize,
}

/// Corpus SNR summary: the per-clip estimates, per-speaker bars, the corpus
/// mean and the one-standard-deviation band around it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrReport {
    pub clips: Vec<ClipSnr>,
    pub speakers: Vec<SpeakerSnr>,
    pub mean_db: f64,
    pub std_db: f64,
    pub band_low_db: f64,
    pub band_high_db: f64,
    /// Fraction of clips inside `[band_low_db, band_high_db]`.
    pub within_band_fraction: f64,
}

/// `items` pairs a speaker id with each clip. Standard deviations are
/// population values.
pub fn snr_report(items: &[(String, AudioClip)], settings: &SnrSettings) -> Result<SnrReport> {
    if items.is_empty() {
        return Err(Error::DegenerateInput("SNR report needs at least one clip".into()));
    }
    let mut clips = Vec::with_capacity(items.len());
    for (speaker, clip) in items {
        let est = estimate_snr(clip, settings)?;
        clips.push(ClipSnr {
            source_id: clip.source_id.clone(),
            speaker_id: speaker.clone(),
            snr_db: est.db,
            no_noise_floor: est.no_noise_floor,
        });
    }
    let mut by_speaker: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for c in &clips {
        by_speaker.entry(&c.speaker_id).or_default().push(c.snr_db);
    }
    let speakers = by_speaker
        .iter()
        .map(|(id, v)| SpeakerSnr {
            speaker_id: id.to_string(),
            mean_db: v.iter().sum::<f64>() / v.len() as f64,
            clips: v.len(),
        })
        .collect();
    let n = clips.len() as f64;
    let mean_db = clips.iter().map(|c| c.snr_db).sum::<f64>() / n;
    let std_db = (clips.iter().map(|c| (c.snr_db - mean_db).powi(2)).sum::<f64>() / n).sqrt();
    let (band_low_db, band_high_db) = (mean_db - std_db, mean_db + std_db);
    let inside = clips
        .iter()
        .filter(|c| c.snr_db >= band_low_db && c.snr_db <= band_high_db)
        .count();
    Ok(SnrReport {
        clips,
        speakers,
        mean_db,
        std_db,
        band_low_db,
        band_high_db,
        within_band_fraction: inside as f64 / n,
    })
}
