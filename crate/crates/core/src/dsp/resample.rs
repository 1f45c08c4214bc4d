use super::AudioClip;

const TAPS: usize = 64;
const KAISER_BETA: f64 = 8.6;

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..64 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Band-limited resampling with a 64-tap Kaiser-windowed sinc (beta 8.6).
///
/// Output length is `round(len * target / source)`. When downsampling the
/// kernel cutoff drops to the target Nyquist.
pub fn resample(clip: &AudioClip, target_hz: u32) -> AudioClip {
    assert!(target_hz > 0, "target sample rate must be positive");
    let source_hz = clip.sample_rate_hz;
    if source_hz == target_hz {
        return clip.clone();
    }
    let ratio = target_hz as f64 / source_hz as f64;
    let out_len = (clip.samples.len() as f64 * ratio).round() as usize;
    let cutoff = ratio.min(1.0);
    let half = (TAPS / 2) as f64;
    let i0_beta = bessel_i0(KAISER_BETA);
    let input = &clip.samples;
    let n_in = input.len() as isize;

    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len {
        let t = n as f64 / ratio;
        let center = t.floor() as isize;
        let mut acc = 0.0f64;
        for k in (center - TAPS as isize / 2 + 1)..=(center + TAPS as isize / 2) {
            if k < 0 || k >= n_in {
                continue;
            }
            let u = t - k as f64;
            let r = u / half;
            if r.abs() > 1.0 {
                continue;
            }
            let window = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / i0_beta;
            acc += input[k as usize] as f64 * cutoff * sinc(cutoff * u) * window;
        }
        out.push(acc.clamp(-1.0, 1.0) as f32);
    }
    AudioClip::new(out, target_hz, clip.source_id.clone())
}
