//! Procedural audio used by tests, demos and the acceptance suite.
//!
//! A [`SyntheticVoice`] is a fixed speaker identity: harmonics of its own
//! fundamental under a formant envelope, plus a resonant noise band.
//! Every utterance draws fresh prosody but keeps that identity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dsp::AudioClip;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticVoice {
    pub id: String,
    pub f0_hz: f64,
    /// (centre Hz, bandwidth Hz) of three spectral-envelope peaks.
    pub formants: [(f64, f64); 3],
    /// Per-harmonic geometric amplitude decay.
    pub tilt: f64,
    pub noise_center_hz: f64,
    pub noise_level: f64,
}

impl SyntheticVoice {
    /// Deterministic voice number `index` of a family seeded by `seed`.
    pub fn generate(index: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index as u64 + 1)));
        // Spread pitches over roughly two octaves so neighbours differ.
        let f0_hz = 90.0 * 2f64.powf(rng.random_range(0.0..2.0));
        let f1 = rng.random_range(300.0..900.0);
        let f2 = rng.random_range(900.0..2200.0);
        let f3 = rng.random_range(2200.0..3600.0);
        Self {
            id: format!("spk{index:02}"),
            f0_hz,
            formants: [
                (f1, rng.random_range(60.0..160.0)),
                (f2, rng.random_range(80.0..220.0)),
                (f3, rng.random_range(120.0..300.0)),
            ],
            tilt: rng.random_range(0.80..0.97),
            noise_center_hz: rng.random_range(1500.0..6000.0),
            noise_level: rng.random_range(0.05..0.35),
        }
    }

    fn envelope(&self, hz: f64) -> f64 {
        self.formants
            .iter()
            .map(|&(c, bw)| 1.0 / (1.0 + ((hz - c) / bw).powi(2)))
            .sum::<f64>()
    }

    /// One utterance of `seconds` at `sample_rate_hz`; peak-normalized to 0.8.
    pub fn utterance(&self, seconds: f64, sample_rate_hz: u32, seed: u64) -> AudioClip {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sr = sample_rate_hz as f64;
        let n = (seconds * sr).round() as usize;
        let f0 = self.f0_hz * (1.0 + rng.random_range(-0.04..0.04));
        let vibrato_hz = rng.random_range(3.0..6.0);
        let syllable_hz = rng.random_range(2.5..5.0);
        let syllable_phase = rng.random_range(0.0..std::f64::consts::TAU);
        let max_harmonic = ((0.45 * sr) / f0).floor() as usize;
        let harmonics: Vec<(f64, f64, f64)> = (1..=max_harmonic.min(60))
            .map(|h| {
                let hz = f0 * h as f64;
                (h as f64, self.envelope(hz) * self.tilt.powi(h as i32), rng.random_range(0.0..std::f64::consts::TAU))
            })
            .collect();

        // Two-pole resonator for the noise band.
        let theta = std::f64::consts::TAU * self.noise_center_hz / sr;
        let r = 0.97;
        let (a1, a2) = (2.0 * r * theta.cos(), -r * r);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let (mut y1, mut y2) = (0.0, 0.0);

        let mut phase = 0.0;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let t = i as f64 / sr;
            let inst_f0 = f0 * (1.0 + 0.01 * (std::f64::consts::TAU * vibrato_hz * t).sin());
            phase += std::f64::consts::TAU * inst_f0 / sr;
            let voiced: f64 = harmonics.iter().map(|&(h, a, p)| a * (h * phase + p).sin()).sum();
            let x: f64 = normal.sample(&mut rng);
            let y = x + a1 * y1 + a2 * y2;
            y2 = y1;
            y1 = y;
            let syllable = 0.55 + 0.45 * (std::f64::consts::TAU * syllable_hz * t + syllable_phase).sin();
            out.push(syllable * (voiced + self.noise_level * 0.05 * y));
        }
        let peak = out.iter().fold(0.0f64, |m, s| m.max(s.abs())).max(1e-12);
        AudioClip::new(
            out.into_iter().map(|s| (0.8 * s / peak) as f32).collect(),
            sample_rate_hz,
            format!("{}-{seed}", self.id),
        )
    }
}

/// Alternating voiced bursts and pauses, with a mask of active samples.
pub fn speechlike_bursts(seconds: f64, sample_rate_hz: u32, seed: u64) -> (Vec<f32>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = sample_rate_hz as f64;
    let n = (seconds * sr).round() as usize;
    let voice = SyntheticVoice::generate(rng.random_range(0..1000), seed);
    let carrier = voice.utterance(seconds, sample_rate_hz, seed.wrapping_add(1));
    let ramp = (0.01 * sr) as usize;
    let mut samples = vec![0.0f32; n];
    let mut active = vec![false; n];
    let mut pos = (rng.random_range(0.1..0.3) * sr) as usize;
    while pos < n {
        let len = (rng.random_range(0.15..0.4) * sr) as usize;
        let end = (pos + len).min(n);
        for i in pos..end {
            let k = (i - pos).min(end - 1 - i);
            let gain = if k < ramp { 0.5 - 0.5 * (std::f64::consts::PI * k as f64 / ramp as f64).cos() } else { 1.0 };
            samples[i] = (carrier.samples[i] as f64 * gain) as f32;
            active[i] = true;
        }
        pos = end + (rng.random_range(0.1..0.3) * sr) as usize;
    }
    (samples, active)
}

/// Bursty speech-like signal plus white noise, where `snr_db` is the clean
/// power over active samples relative to the noise power.
pub fn noisy_speechlike(seconds: f64, sample_rate_hz: u32, snr_db: f64, seed: u64) -> AudioClip {
    let (clean, active) = speechlike_bursts(seconds, sample_rate_hz, seed);
    let (sum, count) = clean
        .iter()
        .zip(&active)
        .filter(|(_, &a)| a)
        .fold((0.0f64, 0usize), |(s, c), (&x, _)| (s + (x as f64).powi(2), c + 1));
    let signal_power = sum / count.max(1) as f64;
    let noise_std = (signal_power / 10f64.powf(snr_db / 10.0)).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(7));
    let normal = Normal::new(0.0, noise_std).unwrap();
    let samples = clean.iter().map(|&x| x + normal.sample(&mut rng) as f32).collect();
    AudioClip::new(samples, sample_rate_hz, format!("mix-{snr_db}dB-{seed}"))
}

/// Uniform white noise in `[-amp, amp]`.
pub fn white_noise(n: usize, amp: f32, sample_rate_hz: u32, seed: u64) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n).map(|_| rng.random_range(-amp..amp)).collect();
    AudioClip::new(samples, sample_rate_hz, format!("noise-{seed}"))
}
