//! Clip-level edits of the preprocessing chain.

use super::{AudioClip, EncoderFrontendConfig, SilencePolicy, NORMALIZE_PEAK};
use crate::{Error, Result};

/// Whether a block of samples sits below `floor_dbfs` (RMS, full scale 1.0).
pub fn frame_is_silent(samples: &[f32], floor_dbfs: f64) -> bool {
    if samples.is_empty() {
        return true;
    }
    let power = samples.iter().map(|&s| (s as f64) * (s as f64)).sum::<f64>() / samples.len() as f64;
    if power == 0.0 {
        return true;
    }
    10.0 * power.log10() < floor_dbfs
}

/// Maximal runs of silent analysis frames as half-open sample ranges.
fn silent_runs(clip: &AudioClip, policy: &SilencePolicy) -> Vec<(usize, usize)> {
    let frame = ((policy.frame_ms / 1000.0) * clip.sample_rate_hz as f64).round().max(1.0) as usize;
    let mut runs: Vec<(usize, usize)> = Vec::new();
    for start in (0..clip.samples.len()).step_by(frame) {
        let end = (start + frame).min(clip.samples.len());
        if !frame_is_silent(&clip.samples[start..end], policy.silence_floor_dbfs) {
            continue;
        }
        match runs.last_mut() {
            Some(last) if last.1 == start => last.1 = end,
            _ => runs.push((start, end)),
        }
    }
    runs
}

/// Shorten every silent run longer than `max_silence_s` to its first
/// `retained_silence_s`. Samples outside shortened runs are copied verbatim.
pub fn truncate_silence(clip: &AudioClip, policy: &SilencePolicy) -> AudioClip {
    let sr = clip.sample_rate_hz as f64;
    let max_len = (policy.max_silence_s * sr).round() as usize;
    let keep = (policy.retained_silence_s * sr).round() as usize;
    let mut out = Vec::with_capacity(clip.samples.len());
    let mut cursor = 0;
    for (start, end) in silent_runs(clip, policy) {
        if end - start > max_len {
            out.extend_from_slice(&clip.samples[cursor..start + keep]);
            cursor = end;
        }
    }
    out.extend_from_slice(&clip.samples[cursor..]);
    AudioClip::new(out, clip.sample_rate_hz, clip.source_id.clone())
}

/// Scale so the peak magnitude equals 0.95.
pub fn normalize_amplitude(clip: &AudioClip) -> Result<AudioClip> {
    let peak = clip.peak();
    if peak == 0.0 {
        return Err(Error::DegenerateInput(format!("{}: all-zero clip cannot be normalized", clip.source_id)));
    }
    if peak == NORMALIZE_PEAK {
        return Ok(clip.clone());
    }
    let gain = NORMALIZE_PEAK as f64 / peak as f64;
    let samples = clip.samples.iter().map(|&s| (s as f64 * gain) as f32).collect();
    Ok(AudioClip::new(samples, clip.sample_rate_hz, clip.source_id.clone()))
}

/// Split clips longer than `max_s` in two, recursively, cutting at the
/// silent sample closest to the midpoint (or the midpoint itself when the
/// clip has no silence).
pub fn split_long(clip: &AudioClip, max_s: f64, policy: &SilencePolicy) -> Vec<AudioClip> {
    let max_len = (max_s * clip.sample_rate_hz as f64).round() as usize;
    let mut out = Vec::new();
    split_into(clip, max_len, policy, &mut out);
    out
}

fn split_into(clip: &AudioClip, max_len: usize, policy: &SilencePolicy, out: &mut Vec<AudioClip>) {
    let n = clip.samples.len();
    if n <= max_len {
        out.push(clip.clone());
        return;
    }
    let mid = n / 2;
    let cut = silent_runs(clip, policy)
        .into_iter()
        .map(|(start, end)| mid.clamp(start, end - 1))
        // Never cut at the very edges; that would not shorten anything.
        .filter(|&c| c > 0 && c < n)
        .min_by_key(|&c| (c.abs_diff(mid), c))
        .unwrap_or(mid);
    split_into(&clip.slice(0, cut), max_len, policy, out);
    split_into(&clip.slice(cut, n), max_len, policy, out);
}

/// Fixed-length overlapping windows for the speaker encoder. Trailing
/// samples that do not fill a whole window are dropped.
pub fn chunk_utterance(clip: &AudioClip, cfg: &EncoderFrontendConfig) -> Result<Vec<AudioClip>> {
    if clip.sample_rate_hz != cfg.sampling_rate_hz {
        return Err(Error::Contract(format!(
            "chunking expects {} Hz audio, got {} Hz",
            cfg.sampling_rate_hz, clip.sample_rate_hz
        )));
    }
    let window = cfg.chunk_samples();
    let hop = cfg.chunk_hop_samples().max(1);
    if clip.samples.len() < window {
        return Ok(Vec::new());
    }
    let count = (clip.samples.len() - window) / hop + 1;
    Ok((0..count).map(|i| clip.slice(i * hop, i * hop + window)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tone(seconds: f64, sr: u32, amp: f32) -> Vec<f32> {
        let n = (seconds * sr as f64).round() as usize;
        (0..n)
            .map(|i| amp * (2.0 * std::f32::consts::PI * 220.0 * i as f32 / sr as f32).sin())
            .collect()
    }

    fn silence(seconds: f64, sr: u32) -> Vec<f32> {
        vec![0.0; (seconds * sr as f64).round() as usize]
    }

    fn clip(parts: &[Vec<f32>], sr: u32) -> AudioClip {
        AudioClip::new(parts.concat(), sr, "t")
    }

    #[test]
    fn long_pause_shrinks_to_retained_length() {
        let c = clip(&[tone(1.0, 16000, 0.5), silence(1.0, 16000), tone(1.0, 16000, 0.5)], 16000);
        let out = truncate_silence(&c, &SilencePolicy::default());
        assert_eq!(out.samples.len(), 33600);
        assert!((out.duration_s() - 2.1).abs() < 1e-9);
        assert_eq!(&out.samples[..16000], &c.samples[..16000]);
        assert_eq!(&out.samples[17600..], &c.samples[32000..]);
    }

    #[test]
    fn short_pauses_are_untouched() {
        let c = clip(&[tone(1.0, 16000, 0.5), silence(0.5, 16000), tone(0.3, 16000, 0.5)], 16000);
        assert_eq!(truncate_silence(&c, &SilencePolicy::default()), c);
    }

    #[test]
    fn all_silent_clip_becomes_retained_length() {
        let c = clip(&[silence(2.0, 16000)], 16000);
        let out = truncate_silence(&c, &SilencePolicy::default());
        assert!((out.duration_s() - 0.1).abs() < 1e-9);
    }

    #[test]
    fn normalization_scales_to_target_peak() {
        let c = AudioClip::new(vec![0.5, -0.25, 0.1], 16000, "t");
        let out = normalize_amplitude(&c).unwrap();
        assert!((out.peak() - 0.95).abs() < 1e-6);
        for (a, b) in c.samples.iter().zip(&out.samples) {
            assert!((b - a * 1.9).abs() < 1e-6);
        }
        let at_target = AudioClip::new(vec![0.95, 0.1], 16000, "t");
        assert_eq!(normalize_amplitude(&at_target).unwrap(), at_target);
        assert!(matches!(
            normalize_amplitude(&AudioClip::new(vec![0.0; 10], 16000, "t")),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn splits_at_silence_nearest_midpoint() {
        let c = clip(&[tone(10.2, 16000, 0.5), silence(0.3, 16000), tone(9.5, 16000, 0.5)], 16000);
        let parts = split_long(&c, 15.0, &SilencePolicy::default());
        assert_eq!(parts.len(), 2);
        assert!((parts[0].duration_s() - 10.2).abs() < 1e-9);
        assert!((parts[1].duration_s() - 9.8).abs() < 1e-9);
    }

    #[test]
    fn short_clip_is_singleton() {
        let c = clip(&[tone(14.0, 8000, 0.5)], 8000);
        assert_eq!(split_long(&c, 15.0, &SilencePolicy::default()), vec![c]);
    }

    #[test]
    fn split_recurses_without_silence() {
        // 31 s halves into two 15.5 s parts; each still exceeds 15 s and halves again.
        let c = clip(&[tone(31.0, 8000, 0.5)], 8000);
        let parts = split_long(&c, 15.0, &SilencePolicy::default());
        assert_eq!(parts.len(), 4);
        assert!(parts.iter().all(|p| p.duration_s() <= 15.0));
        assert_eq!(parts.iter().map(|p| p.len()).sum::<usize>(), c.len());
        assert_eq!(parts.concat_samples(), c.samples);
    }

    trait Concat {
        fn concat_samples(&self) -> Vec<f32>;
    }
    impl Concat for Vec<AudioClip> {
        fn concat_samples(&self) -> Vec<f32> {
            self.iter().flat_map(|c| c.samples.iter().copied()).collect()
        }
    }

    #[test]
    fn chunk_counts() {
        let cfg = EncoderFrontendConfig::default();
        let count = |secs: f64| chunk_utterance(&AudioClip::new(silence(secs, 16000), 16000, "t"), &cfg).unwrap().len();
        assert_eq!(count(4.0), 4);
        assert_eq!(count(1.6), 1);
        assert_eq!(count(1.5), 0);
        let wrong_rate = AudioClip::new(vec![0.0; 30000], 22050, "t");
        assert!(chunk_utterance(&wrong_rate, &cfg).is_err());
    }

    proptest! {
        #[test]
        fn chunk_count_matches_sliding_window_enumeration(len in 0usize..120_000) {
            let cfg = EncoderFrontendConfig::default();
            let clip = AudioClip::new(vec![0.0; len], 16000, "t");
            let chunks = chunk_utterance(&clip, &cfg).unwrap();
            let mut brute = 0;
            let mut start = 0;
            while start + 25600 <= len {
                brute += 1;
                start += 12800;
            }
            prop_assert_eq!(chunks.len(), brute);
            prop_assert!(chunks.iter().all(|c| c.len() == 25600));
        }

        #[test]
        fn truncation_never_lengthens_or_edits_voiced_audio(
            segments in proptest::collection::vec((any::<bool>(), 1usize..120), 1..8)
        ) {
            // Segments are in 10 ms frames at 8 kHz: voiced tone or digital silence.
            let sr = 8000;
            let mut samples = Vec::new();
            for (voiced, frames) in &segments {
                let n = frames * 80;
                if *voiced {
                    samples.extend((0..n).map(|i| 0.3 * ((i as f32) * 0.2).sin() + 0.31));
                } else {
                    samples.extend(std::iter::repeat_n(0.0, n));
                }
            }
            let c = AudioClip::new(samples, sr, "p");
            let out = truncate_silence(&c, &SilencePolicy::default());
            prop_assert!(out.len() <= c.len());
            let voiced_in: Vec<f32> = c.samples.iter().copied().filter(|&s| s != 0.0).collect();
            let voiced_out: Vec<f32> = out.samples.iter().copied().filter(|&s| s != 0.0).collect();
            prop_assert_eq!(voiced_in, voiced_out);
        }
    }
}
