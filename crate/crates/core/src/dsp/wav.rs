//! RIFF/WAVE 16-bit PCM reading and writing.

use std::fs;
use std::path::Path;

use super::AudioClip;
use crate::{Error, Result};

const FORMAT_PCM: u16 = 1;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

/// Default integer-to-float scale for 16-bit PCM.
pub const MAX_WAV_VALUE: f64 = 32768.0;

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

struct Format {
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

/// Decode a 16-bit PCM WAV held in memory. Stereo is averaged to mono and
/// integer samples are divided by `max_wav_value`.
pub fn decode_wav(bytes: &[u8], max_wav_value: f64, source_id: &str) -> Result<AudioClip> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::Format(format!("{source_id}: not a RIFF/WAVE file")));
    }
    let mut format: Option<Format> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Format(format!("{source_id}: chunk {:?} overruns file", String::from_utf8_lossy(id))))?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(Error::Format(format!("{source_id}: fmt chunk too short")));
                }
                let tag = u16_at(body, 0);
                let tag = if tag == FORMAT_EXTENSIBLE && body.len() >= 26 {
                    // First two bytes of the sub-format GUID carry the real tag.
                    u16_at(body, 24)
                } else {
                    tag
                };
                if tag != FORMAT_PCM {
                    return Err(Error::Unsupported(format!("{source_id}: WAV format tag {tag} (only PCM)")));
                }
                format = Some(Format {
                    channels: u16_at(body, 2),
                    sample_rate: u32_at(body, 4),
                    bits: u16_at(body, 14),
                });
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // Chunks are word aligned.
        pos = body_end + (size & 1);
    }
    let format = format.ok_or_else(|| Error::Format(format!("{source_id}: missing fmt chunk")))?;
    let data = data.ok_or_else(|| Error::Format(format!("{source_id}: missing data chunk")))?;
    if format.bits != 16 {
        return Err(Error::Unsupported(format!("{source_id}: {}-bit samples (only 16-bit PCM)", format.bits)));
    }
    if format.channels != 1 && format.channels != 2 {
        return Err(Error::Unsupported(format!("{source_id}: {} channels (only mono or stereo)", format.channels)));
    }
    if format.sample_rate == 0 {
        return Err(Error::Format(format!("{source_id}: zero sample rate")));
    }
    let channels = format.channels as usize;
    let frame_bytes = 2 * channels;
    if data.len() % frame_bytes != 0 {
        return Err(Error::Format(format!("{source_id}: data chunk is not a whole number of frames")));
    }
    let samples = data
        .chunks_exact(frame_bytes)
        .map(|frame| {
            let sum: f64 = frame
                .chunks_exact(2)
                .map(|s| i16::from_le_bytes([s[0], s[1]]) as f64 / max_wav_value)
                .sum();
            (sum / channels as f64) as f32
        })
        .collect();
    Ok(AudioClip::new(samples, format.sample_rate, source_id))
}

/// Encode a clip as mono 16-bit PCM. Samples are scaled by 32768 and
/// saturated to the i16 range.
pub fn encode_wav(clip: &AudioClip) -> Vec<u8> {
    let data_len = clip.samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate_hz.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate_hz * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &clip.samples {
        let v = (s as f64 * MAX_WAV_VALUE).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io_at(path, e))?;
    decode_wav(&bytes, MAX_WAV_VALUE, &path.display().to_string())
}

pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_wav(clip)).map_err(|e| Error::io_at(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pcm_bytes(channels: u16, bits: u16, rate: u32, payload: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"RIFF");
        out.extend_from_slice(&((36 + payload.len()) as u32).to_le_bytes());
        out.extend_from_slice(b"WAVE");
        out.extend_from_slice(b"fmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&1u16.to_le_bytes());
        out.extend_from_slice(&channels.to_le_bytes());
        out.extend_from_slice(&rate.to_le_bytes());
        let block = channels as u32 * bits as u32 / 8;
        out.extend_from_slice(&(rate * block).to_le_bytes());
        out.extend_from_slice(&(block as u16).to_le_bytes());
        out.extend_from_slice(&bits.to_le_bytes());
        out.extend_from_slice(b"data");
        out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        out.extend_from_slice(payload);
        out
    }

    #[test]
    fn max_positive_sample_scales_by_32768() {
        let bytes = pcm_bytes(1, 16, 22050, &32767i16.to_le_bytes());
        let clip = decode_wav(&bytes, MAX_WAV_VALUE, "t").unwrap();
        assert_eq!(clip.samples[0] as f64, (32767.0f64 / 32768.0) as f32 as f64);
        assert!((clip.samples[0] - 0.99997).abs() < 1e-5);
    }

    #[test]
    fn zeros_stay_zero() {
        let bytes = pcm_bytes(1, 16, 16000, &[0u8; 200]);
        let clip = decode_wav(&bytes, MAX_WAV_VALUE, "t").unwrap();
        assert_eq!(clip.samples, vec![0.0; 100]);
        assert_eq!(clip.sample_rate_hz, 16000);
    }

    #[test]
    fn stereo_is_averaged() {
        let mut payload = Vec::new();
        payload.extend_from_slice(&16384i16.to_le_bytes());
        payload.extend_from_slice(&(-16384i16).to_le_bytes());
        let clip = decode_wav(&pcm_bytes(2, 16, 16000, &payload), MAX_WAV_VALUE, "t").unwrap();
        assert_eq!(clip.samples, vec![0.0]);
    }

    #[test]
    fn rejects_bad_header_and_bit_depth() {
        assert!(matches!(decode_wav(b"RIFX....WAVE", MAX_WAV_VALUE, "t"), Err(Error::Format(_))));
        let bytes = pcm_bytes(1, 24, 16000, &[0u8; 6]);
        assert!(matches!(decode_wav(&bytes, MAX_WAV_VALUE, "t"), Err(Error::Unsupported(_))));
        let mut truncated = pcm_bytes(1, 16, 16000, &[0u8; 8]);
        truncated.truncate(truncated.len() - 3);
        assert!(matches!(decode_wav(&truncated, MAX_WAV_VALUE, "t"), Err(Error::Format(_))));
    }

    proptest! {
        #[test]
        fn pcm16_round_trip_is_bit_exact(values in proptest::collection::vec(any::<i16>(), 0..300)) {
            let payload: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
            let original = pcm_bytes(1, 16, 22050, &payload);
            let clip = decode_wav(&original, MAX_WAV_VALUE, "t").unwrap();
            prop_assert_eq!(encode_wav(&clip), original);
        }
    }
}
