//! End-to-end acceptance checks, one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p swar-cli --test acceptance`; pass substrings as
//! arguments to run a subset, e.g. `-- snr mos`.

// `ensure!` negates its condition so NaN counts as failure.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use swar_core::dsp::{
    decode_wav, encode_wav, estimate_snr, mel_spectrogram, write_wav, AudioClip, DspConfig, EncoderFrontendConfig,
    MelFrontend, MelSpectrogram, SnrSettings, MAX_WAV_VALUE,
};
use swar_core::encoder::{
    bank_scores, batch_loss, train_encoder, ChunkBank, EncoderConfig, EncoderParams, EncoderTrainOptions, Ge2eBatch,
};
use swar_core::eval::{
    auc, compute_eer, project_embeddings, snr_report, Band, ProjectionMethod, ScoreSet, EXCELLENT_AT, FAIR_AT, GOOD_AT,
};
use swar_core::nn::gradcheck::check_gradients;
use swar_core::nn::Graph;
use swar_core::synth::{train_synth, SynthConfig, SynthExample, SynthInput, SynthParams, SynthTrainOptions};
use swar_core::synthetic::{noisy_speechlike, SyntheticVoice};
use swar_core::textnorm::below_hundred;
use swar_core::textnorm::{ensure_stop_token, expand_numerals, normalize, segment_sentences, CharVocabulary};
use swar_core::vocoder::{
    train_vocoder, GenerationMode, VocoderConfig, VocoderExample, VocoderParams, VocoderTrainOptions,
};
use swar_core::encoder::SpeakerEmbedding;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

struct Criterion {
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria = [
        Criterion { name: "text normalization golden rows and numeral oracle", budget: secs(5), run: textnorm },
        Criterion { name: "DSP mel frontend", budget: secs(10), run: dsp },
        Criterion { name: "gradient suite", budget: secs(120), run: gradients },
        Criterion { name: "EER oracle equivalence", budget: secs(5), run: eer_oracle },
        Criterion { name: "scaled encoder training", budget: secs(30 * 60), run: encoder_training },
        Criterion { name: "cosine banding", budget: secs(30 * 60), run: cosine_banding },
        Criterion { name: "synthesizer overfit", budget: secs(15 * 60), run: synth_overfit },
        Criterion { name: "vocoder overfit", budget: secs(20 * 60), run: vocoder_overfit },
        Criterion { name: "SNR recovery", budget: secs(30), run: snr },
        Criterion { name: "MOS aggregation and API", budget: secs(60), run: mos },
    ];
    let mut failed = 0;
    for c in criteria.iter().filter(|c| filters.is_empty() || filters.iter().any(|f| c.name.contains(f.as_str()))) {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let result = match result {
            Ok(detail) if elapsed > c.budget => Err(format!("{detail}; over the {:?} budget", c.budget)),
            r => r,
        };
        match result {
            Ok(detail) => println!("PASS {} ({detail}; {:.1} s)", c.name, elapsed.as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("FAIL {} ({why}; {:.1} s)", c.name, elapsed.as_secs_f64());
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

// ---------------------------------------------------------------- textnorm

/// Cardinal composed from the two-digit lexicon: thousands, hundreds, rest.
fn cardinal_oracle(n: u64) -> String {
    if n < 100 {
        return below_hundred(n).to_string();
    }
    let mut parts = Vec::new();
    let (thousands, hundreds, rest) = (n / 1000, (n / 100) % 10, n % 100);
    if thousands > 0 {
        parts.push(format!("{} हजार", below_hundred(thousands)));
    }
    if hundreds > 0 {
        parts.push(format!("{} सय", below_hundred(hundreds)));
    }
    if rest > 0 {
        parts.push(below_hundred(rest).to_string());
    }
    parts.join(" ")
}

fn to_devanagari_digits(n: u64) -> String {
    n.to_string()
        .chars()
        .map(|c| char::from_u32('०' as u32 + c.to_digit(10).unwrap()).unwrap())
        .collect()
}

fn textnorm() -> Outcome {
    let raw = "भर्खर ७ प्याग हुँदैछ, १५ प्याग खाएपछि मात्र मलाई थोरै थोरै लाग्छ ।";
    let want = "भर्खर सात प्याग हुँदैछ, पन्ध्र प्याग खाएपछि मात्र मलाई थोरै थोरै लाग्छ ।";
    ensure!(expand_numerals(raw).map_err(|e| e.to_string())? == want, "numeral row differs");
    ensure!(normalize(raw).map_err(|e| e.to_string())?.sentences == vec![want], "numeral row normalization differs");

    let raw = "बरु अब त अझ बढी लजालु भएकी थिएँ; साथीहरु पनि कम थिए ।";
    let want = vec!["बरु अब त अझ बढी लजालु भएकी थिएँ।", "साथीहरु पनि कम थिए ।"];
    ensure!(segment_sentences(raw) == want, "segmentation row: {:?}", segment_sentences(raw));

    let raw = "त्यो चिच्याहट सुनेर क्यालीगुला आनन्दित हुन्थ्यो";
    let want = "त्यो चिच्याहट सुनेर क्यालीगुला आनन्दित हुन्थ्यो ।";
    ensure!(ensure_stop_token(raw).map_err(|e| e.to_string())? == want, "stop-token row differs");
    ensure!(ensure_stop_token(want).map_err(|e| e.to_string())? == want, "stop token added twice");

    // Independent spot values anchor the lexicon itself.
    for (n, words) in [(0, "शून्य"), (7, "सात"), (15, "पन्ध्र"), (100, "एक सय"), (1000, "एक हजार"), (10000, "दस हजार")] {
        ensure!(cardinal_oracle(n) == words, "oracle lexicon disagrees at {n}");
    }
    for n in 0..=10_000u64 {
        let want = format!("क {} ख", cardinal_oracle(n));
        for digits in [n.to_string(), to_devanagari_digits(n)] {
            let got = expand_numerals(&format!("क {digits} ख")).map_err(|e| e.to_string())?;
            ensure!(got == want, "{digits}: got {got:?}, want {want:?}");
        }
    }
    Ok("3 rows, 10001 numerals in both digit scripts".into())
}

// --------------------------------------------------------------------- dsp

fn sine(hz: f64, seconds: f64, amp: f64, sr: u32) -> AudioClip {
    let n = (seconds * sr as f64) as usize;
    let samples = (0..n)
        .map(|i| (amp * (std::f64::consts::TAU * hz * i as f64 / sr as f64).sin()) as f32)
        .collect();
    AudioClip::new(samples, sr, "sine")
}

fn dsp() -> Outcome {
    let cfg = DspConfig::default();
    ensure!(
        (cfg.filter_length, cfg.hop_length, cfg.win_size) == (800, 200, 800)
            && cfg.n_mel_channels == 80
            && (cfg.mel_fmin_hz, cfg.mel_fmax_hz) == (0.0, 7600.0)
            && cfg.sampling_rate_hz == 22050
            && cfg.max_wav_value == 32768.0,
        "default audio settings differ: {cfg:?}"
    );
    let fe = MelFrontend::synthesizer(&cfg);
    let fb = fe.filterbank();
    ensure!(fb.weights.dim() == (80, 401), "filterbank shape {:?}", fb.weights.dim());
    ensure!(fb.weights.iter().all(|&w| w >= 0.0), "negative filter weight");
    let top_bin = (7600.0f64 / (22050.0 / 800.0)).ceil() as usize;
    ensure!(
        fb.weights.column(top_bin + 1).iter().all(|&w| w == 0.0),
        "energy above fmax"
    );

    // Frame count: centred frames, one per hop plus one.
    for len in [800usize, 801, 999, 1000, 4410, 22050] {
        let clip = sine(440.0, len as f64 / 22050.0, 0.5, 22050);
        let clip = AudioClip::new(clip.samples[..len.min(clip.samples.len())].to_vec(), 22050, "s");
        let mel = mel_spectrogram(&clip, &fe).map_err(|e| e.to_string())?;
        ensure!(mel.n_frames() == 1 + clip.len() / 200, "{} samples gave {} frames", clip.len(), mel.n_frames());
        ensure!(mel.n_mels() == 80, "mel width {}", mel.n_mels());
    }

    // Scaling the waveform by a shifts every unfloored log-mel entry by ln a.
    let base = sine(523.0, 0.5, 0.2, 22050);
    let doubled = AudioClip::new(base.samples.iter().map(|s| s * 2.0).collect(), 22050, "x2");
    let m1 = mel_spectrogram(&base, &fe).map_err(|e| e.to_string())?;
    let m2 = mel_spectrogram(&doubled, &fe).map_err(|e| e.to_string())?;
    let floor = 1e-5f64.ln() + 1e-9;
    let mut compared = 0;
    for (a, b) in m1.frames.iter().zip(m2.frames.iter()) {
        if *a > floor + 1.0 {
            compared += 1;
            ensure!((b - a - 2f64.ln()).abs() < 1e-6, "scale covariance broken: {a} -> {b}");
        }
    }
    ensure!(compared > 1000, "too few unfloored entries ({compared})");

    // A pure tone peaks at its FFT bin and in the mel band centred nearest it.
    let tone = sine(1000.0, 0.5, 0.5, 22050);
    let mag = fe.magnitude(&tone.samples);
    let row = mag.row(mag.nrows() / 2);
    let peak_bin = row.iter().enumerate().fold((0, 0.0), |m, (i, &v)| if v > m.1 { (i, v) } else { m }).0;
    ensure!(peak_bin == (1000.0 * 800.0 / 22050.0f64).round() as usize, "tone peaks at bin {peak_bin}");
    let mel = mel_spectrogram(&tone, &fe).map_err(|e| e.to_string())?;
    let mrow = mel.frames.row(mel.n_frames() / 2);
    let peak_band = mrow.iter().enumerate().fold((0, f64::MIN), |m, (i, &v)| if v > m.1 { (i, v) } else { m }).0;
    let nearest = (0..80)
        .min_by(|&a, &b| (fb.center_hz(a) - 1000.0).abs().total_cmp(&(fb.center_hz(b) - 1000.0).abs()))
        .unwrap();
    ensure!(peak_band.abs_diff(nearest) <= 1, "tone peaks in band {peak_band}, nearest centre is {nearest}");

    // 16-bit PCM scaling by 32768.
    let bytes = encode_wav(&AudioClip::new(vec![0.5, -0.25, -1.0], 22050, "w"));
    let back = decode_wav(&bytes, MAX_WAV_VALUE, "w").map_err(|e| e.to_string())?;
    ensure!(back.samples == vec![0.5, -0.25, -1.0], "PCM round trip {:?}", back.samples);
    let raw: Vec<i16> = bytes[44..].chunks(2).map(|c| i16::from_le_bytes([c[0], c[1]])).collect();
    ensure!(raw == vec![16384, -8192, -32768], "PCM codes {raw:?}");
    Ok("80x401 filterbank, frame law, scale covariance, tone peak, PCM scaling".into())
}

// --------------------------------------------------------------- gradients

/// Largest analytic gradient magnitude; guards against a vacuous check
/// where every gradient is zero.
fn max_gradient(store: &swar_core::nn::ParamStore, f: impl Fn(&mut Graph) -> swar_core::nn::Var) -> f64 {
    let mut g = Graph::new(store);
    let loss = f(&mut g);
    let grads = g.backward(loss);
    store
        .ids()
        .filter_map(|id| grads.get(id).map(|a| a.iter().fold(0.0f64, |m, v| m.max(v.abs()))))
        .fold(0.0, f64::max)
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(lo..hi))
}

fn gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut worst = Vec::new();

    let enc_cfg = EncoderConfig {
        lstm_layers: 2,
        hidden_size: 8,
        embedding_size: 8,
        n_mels: 5,
        ..EncoderConfig::default()
    };
    let enc = EncoderParams::init(&enc_cfg, 3).map_err(|e| e.to_string())?;
    let chunks: Vec<Array2<f64>> = (0..6).map(|_| random_matrix(&mut rng, 4, 5, -6.0, 2.0)).collect();
    let batch = Ge2eBatch::new(chunks, vec!["a".into(), "b".into()], 3).map_err(|e| e.to_string())?;
    let r = check_gradients(&enc.store, |g| batch_loss(&enc, g, &batch).unwrap().0, 1e-5, 12);
    ensure!(r.max_rel_error < 1e-4, "GE2E path: {r:?}");
    let scale = max_gradient(&enc.store, |g| batch_loss(&enc, g, &batch).unwrap().0);
    ensure!(scale > 1e-3, "GE2E gradients vanish (max |g| = {scale:.1e})");
    worst.push(("GE2E", r.max_rel_error, r.entries_checked, scale));

    let vocab = CharVocabulary::from_texts(["कमल"]);
    let syn_cfg = SynthConfig {
        char_embedding_dim: 4,
        encoder_dim: 8,
        decoder_dim: 8,
        attention_dim: 4,
        prenet_dim: 4,
        location_kernel: 3,
        mel_channels: 4,
        speaker_dim: 3,
        ..SynthConfig::default()
    };
    let syn = SynthParams::init(&syn_cfg, vocab.clone(), 5).map_err(|e| e.to_string())?;
    let ids = vocab.encode_str("कमल").map_err(|e| e.to_string())?;
    let speaker = vec![0.6, -0.48, 0.64];
    let target = random_matrix(&mut rng, 5, 4, -3.0, 1.0);
    let r = check_gradients(
        &syn.store,
        |g| syn.teacher_forced_graph(g, &ids, &speaker, &target, 9).unwrap().total,
        1e-5,
        10,
    );
    ensure!(r.max_rel_error < 1e-4, "synthesizer teacher-forced loss: {r:?}");
    let scale = max_gradient(&syn.store, |g| syn.teacher_forced_graph(g, &ids, &speaker, &target, 9).unwrap().total);
    ensure!(scale > 1e-3, "synth gradients vanish (max |g| = {scale:.1e})");
    worst.push(("synth", r.max_rel_error, r.entries_checked, scale));

    let voc_cfg = VocoderConfig {
        hop_length: 4,
        gru_size: 4,
        fc_size: 5,
        conditioning_channels: 3,
        residual_blocks: 1,
        n_mels: 5,
        crop_samples: 8,
        ..VocoderConfig::default()
    };
    let mut voc = VocoderParams::init(&voc_cfg, 7).map_err(|e| e.to_string())?;
    // The output layer starts near zero; enlarge it so upstream gradients
    // are well above the finite-difference noise floor.
    let fc2 = voc.store.id("fc2.w").ok_or("no fc2.w parameter")?;
    voc.store.get_mut(fc2).mapv_inplace(|v| v * 1000.0);
    let mel = random_matrix(&mut rng, 5, 5, -6.0, 1.0);
    let classes: Vec<usize> = (0..20).map(|_| rng.random_range(0..256)).collect();
    let inputs = voc.teacher_inputs(&classes, 3, 12);
    let r = check_gradients(
        &voc.store,
        |g| {
            let c = voc.conditioning_graph(g, &mel);
            voc.crop_loss_graph(g, c, &inputs, &classes, 3)
        },
        1e-5,
        10,
    );
    ensure!(r.max_rel_error < 1e-4, "vocoder cross-entropy: {r:?}");
    let scale = max_gradient(&voc.store, |g| {
            let c = voc.conditioning_graph(g, &mel);
            voc.crop_loss_graph(g, c, &inputs, &classes, 3)
        });
    ensure!(scale > 1e-3, "vocoder gradients vanish (max |g| = {scale:.1e})");
    worst.push(("vocoder", r.max_rel_error, r.entries_checked, scale));

    Ok(worst
        .iter()
        .map(|(n, e, k, m)| format!("{n} max rel err {e:.1e} over {k} entries, max |g| {m:.1e}"))
        .collect::<Vec<_>>()
        .join(", "))
}

// --------------------------------------------------------------------- eer

/// Sweep every observed score plus a sentinel above the maximum; return the
/// rate where FAR and FRR meet, interpolating linearly across a sign change.
fn brute_force_eer(genuine: &[f64], impostor: &[f64]) -> f64 {
    let mut ts: Vec<f64> = genuine.iter().chain(impostor).copied().collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    let rates = |t: f64| {
        let far = impostor.iter().filter(|&&s| s >= t).count() as f64 / impostor.len() as f64;
        let frr = genuine.iter().filter(|&&s| s < t).count() as f64 / genuine.len() as f64;
        (far, frr)
    };
    let mut points: Vec<(f64, f64)> = ts.iter().map(|&t| rates(t)).collect();
    points.push((0.0, 1.0));
    for k in 0..points.len() {
        let (far, frr) = points[k];
        if far == frr {
            return far;
        }
        if far < frr {
            let (far0, frr0) = points[k - 1];
            let (d0, d1) = (far0 - frr0, far - frr);
            return far0 + d0 / (d0 - d1) * (far - far0);
        }
    }
    unreachable!("the sentinel has FAR < FRR")
}

fn eer_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for trial in 0..200 {
        let total = rng.random_range(2..=50);
        let ng = rng.random_range(1..total);
        // Coarse grids force ties, fine ones force interpolation.
        let grid = [4.0, 20.0, 1e6][trial % 3];
        let mut draw = |shift: f64| ((rng.random_range(0.0..1.0) + shift) * grid).round() / grid;
        let genuine: Vec<f64> = (0..ng).map(|_| draw(0.2)).collect();
        let impostor: Vec<f64> = (0..total - ng).map(|_| draw(0.0)).collect();
        let got = compute_eer(&ScoreSet { genuine: genuine.clone(), impostor: impostor.clone() })
            .map_err(|e| e.to_string())?
            .eer;
        let want = brute_force_eer(&genuine, &impostor);
        worst = worst.max((got - want).abs());
        ensure!((got - want).abs() < 1e-12, "trial {trial}: {got} vs {want}");
    }
    let separated = ScoreSet { genuine: vec![0.9, 0.8], impostor: vec![0.1, 0.2, 0.3] };
    let eer = compute_eer(&separated).map_err(|e| e.to_string())?.eer;
    ensure!(eer == 0.0, "separated scores give {eer}");
    let tied = ScoreSet { genuine: vec![0.5; 4], impostor: vec![0.5; 7] };
    let eer = compute_eer(&tied).map_err(|e| e.to_string())?.eer;
    ensure!(eer == 0.5, "identical scores give {eer}");
    Ok(format!("200 random sets, max deviation {worst:.1e}; degenerate cases exact"))
}

// ----------------------------------------------------------------- encoder

struct EncoderRun {
    eer: f64,
    silhouette: f64,
    auc: f64,
    steps: usize,
}

const ENCODER_SPEAKERS: usize = 20;
const HOLDOUT_SPEAKERS: usize = 4;
const CLIPS_PER_SPEAKER: usize = 30;
const ENCODER_STEPS: usize = 500;

fn encoder_run() -> &'static Result<EncoderRun, String> {
    static RUN: std::sync::OnceLock<Result<EncoderRun, String>> = std::sync::OnceLock::new();
    RUN.get_or_init(|| {
        let fe = EncoderFrontendConfig::default();
        let mut train = ChunkBank::default();
        let mut holdout = ChunkBank::default();
        for s in 0..ENCODER_SPEAKERS {
            let voice = SyntheticVoice::generate(s, 2024);
            let clips: Vec<AudioClip> = (0..CLIPS_PER_SPEAKER)
                .map(|u| voice.utterance(fe.chunk_seconds, fe.sampling_rate_hz, (s * 1000 + u) as u64))
                .collect();
            let bank = ChunkBank::from_clips(clips.iter().map(|c| (voice.id.as_str(), c)), &fe)
                .map_err(|e| e.to_string())?;
            let target = if s < ENCODER_SPEAKERS - HOLDOUT_SPEAKERS { &mut train } else { &mut holdout };
            for (id, chunks) in bank.speakers {
                target.push(&id, chunks);
            }
        }
        let cfg = EncoderConfig {
            hidden_size: 32,
            // Narrow ReLU heads leave some unseen speakers with every unit
            // off; the full embedding width avoids that.
            embedding_size: 256,
            speakers_per_batch: 8,
            utterances_per_speaker: 5,
            learning_rate: 0.01,
            eval_every: 100,
            ..EncoderConfig::default()
        };
        let options = EncoderTrainOptions { steps: ENCODER_STEPS, seed: 1 };
        let (params, _) = train_encoder(&cfg, &train, None, options, |_| {}).map_err(|e| e.to_string())?;
        let (scores, embeddings, labels) = bank_scores(&params, &holdout).map_err(|e| e.to_string())?;
        let eer = compute_eer(&scores).map_err(|e| e.to_string())?.eer;
        let auc = auc(&scores).map_err(|e| e.to_string())?;
        let projection =
            project_embeddings(&embeddings, &labels, ProjectionMethod::NeighborEmbed, 1).map_err(|e| e.to_string())?;
        let silhouette = projection.silhouette().map_err(|e| e.to_string())?;
        Ok(EncoderRun { eer, silhouette, auc, steps: ENCODER_STEPS })
    })
}

fn encoder_training() -> Outcome {
    let run = encoder_run().as_ref().map_err(Clone::clone)?;
    ensure!(run.eer < 0.05, "holdout EER {:.4}", run.eer);
    ensure!(run.silhouette > 0.6, "holdout silhouette {:.3}", run.silhouette);
    Ok(format!(
        "{} steps, holdout EER {:.4}, projection silhouette {:.3}",
        run.steps, run.eer, run.silhouette
    ))
}

fn cosine_banding() -> Outcome {
    let run = encoder_run().as_ref().map_err(Clone::clone)?;
    ensure!(run.auc > 0.95, "same- vs cross-speaker AUC {:.4}", run.auc);
    let cases = [
        (1.0, Band::Excellent),
        (EXCELLENT_AT, Band::Excellent),
        (0.95 - 1e-12, Band::Good),
        (GOOD_AT, Band::Good),
        (0.90 - 1e-12, Band::Fair),
        (FAIR_AT, Band::Fair),
        (0.85 - 1e-12, Band::Poor),
        (-1.0, Band::Poor),
    ];
    ensure!((EXCELLENT_AT, GOOD_AT, FAIR_AT) == (0.95, 0.90, 0.85), "band thresholds moved");
    for (score, band) in cases {
        ensure!(Band::of(score) == band, "{score} banded as {:?}", Band::of(score));
    }
    Ok(format!("holdout AUC {:.4}; thresholds 0.95/0.90/0.85 exact", run.auc))
}

// ------------------------------------------------------------------- synth

const SYNTH_STEPS: usize = 500;

fn synth_overfit() -> Outcome {
    let dsp = DspConfig::default();
    let clip = SyntheticVoice::generate(0, 7).utterance(2.0, 22050, 1);
    let mel = mel_spectrogram(&clip, &MelFrontend::synthesizer(&dsp)).map_err(|e| e.to_string())?.frames;
    let text = "नमस्ते दुनिया कमल";
    let vocab = CharVocabulary::from_texts([text]);
    let speaker: Vec<f64> = (0..32).map(|i| ((i as f64) * 0.37).sin() / 4.0).collect();
    let cfg = SynthConfig {
        char_embedding_dim: 32,
        encoder_dim: 64,
        decoder_dim: 128,
        attention_dim: 32,
        prenet_dim: 32,
        speaker_dim: 32,
        learning_rate: 2e-3,
        max_decoder_steps: 600,
        ..SynthConfig::default()
    };
    let example = SynthExample {
        char_ids: vocab.encode_str(text).map_err(|e| e.to_string())?,
        speaker: speaker.clone(),
        mel: mel.clone(),
    };
    let options = SynthTrainOptions { steps: SYNTH_STEPS, seed: 3 };
    let (params, log) =
        train_synth(&cfg, vocab, std::slice::from_ref(&example), options, |_| {}).map_err(|e| e.to_string())?;
    // Dropout makes single steps noisy; compare averaged ends of the run.
    let mean_mel = |m: &[swar_core::synth::SynthMetrics]| m.iter().map(|x| x.mel_loss).sum::<f64>() / m.len() as f64;
    let ratio = mean_mel(&log[log.len() - 10..]) / log[0].mel_loss;
    ensure!(ratio < 0.1, "mel loss fell only to {:.1}% of its initial value", ratio * 100.0);

    let input = SynthInput {
        char_ids: example.char_ids.clone(),
        speaker: SpeakerEmbedding { vector: speaker, speaker_id: "spk".into() },
    };
    let out = params.infer(&input).map_err(|e| e.to_string())?;
    let target = mel.nrows() as f64;
    let frames = out.mel.n_frames() as f64;
    ensure!(!out.truncated, "gate never fired within {} frames", cfg.max_decoder_steps);
    ensure!((frames - target).abs() <= 0.2 * target, "stopped at {frames} frames, target {target}");
    let tf = params.teacher_forced(&input, &mel).map_err(|e| e.to_string())?;
    for (which, alignment) in [("free-running", &out.alignment), ("teacher-forced", &tf.alignment)] {
        for (t, row) in alignment.rows().into_iter().enumerate() {
            ensure!((row.sum() - 1.0).abs() <= 1e-5, "{which} attention row {t} sums to {}", row.sum());
        }
    }
    Ok(format!(
        "{SYNTH_STEPS} steps, mel loss at {:.1}% of initial, stopped at {frames} of {target} frames",
        ratio * 100.0
    ))
}

// ----------------------------------------------------------------- vocoder

const VOCODER_STEPS: usize = 1500;

fn vocoder_overfit() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);

    // Initial loss on random data is the uniform cross-entropy.
    let init_cfg = VocoderConfig { gru_size: 32, fc_size: 32, conditioning_channels: 16, ..VocoderConfig::default() };
    let p = VocoderParams::init(&init_cfg, 5).map_err(|e| e.to_string())?;
    let mel = random_matrix(&mut rng, 12, 80, -8.0, 1.0);
    let classes: Vec<usize> = (0..12 * 200).map(|_| rng.random_range(0..256)).collect();
    let mut g = Graph::new(&p.store);
    let cond = p.conditioning_graph(&mut g, &mel);
    let inputs = p.teacher_inputs(&classes, 0, classes.len());
    let loss = p.crop_loss_graph(&mut g, cond, &inputs, &classes, 0);
    let init_loss = g.scalar(loss);
    ensure!((init_loss - 256f64.ln()).abs() <= 0.05, "initial loss {init_loss:.4}, ln 256 = {:.4}", 256f64.ln());

    // Length law on 100 random mels.
    for trial in 0..100 {
        let frames = rng.random_range(1..40);
        let mel = MelSpectrogram { frames: random_matrix(&mut rng, frames, 80, -8.0, 1.0), config_ref: "dsp".into() };
        let audio = p.generate(&mel, trial, GenerationMode::Sample).map_err(|e| e.to_string())?;
        ensure!(audio.len() == frames * 200, "{frames} frames gave {} samples", audio.len());
    }

    // Single-clip overfit.
    let dsp = DspConfig::default();
    let clip = voice_for_vocoder();
    let mel = mel_spectrogram(&clip, &MelFrontend::synthesizer(&dsp)).map_err(|e| e.to_string())?;
    let cfg = VocoderConfig {
        gru_size: 96,
        fc_size: 96,
        conditioning_channels: 32,
        learning_rate: 5e-3,
        ..VocoderConfig::default()
    };
    let example = VocoderExample::new("clip", &mel.frames, &clip.samples, &cfg).map_err(|e| e.to_string())?;
    let options = VocoderTrainOptions { steps: VOCODER_STEPS, seed: 1 };
    let (params, log) = train_vocoder(&cfg, std::slice::from_ref(&example), options, |_| {}).map_err(|e| e.to_string())?;
    let final_ce = log[log.len() - 10..].iter().map(|m| m.loss).sum::<f64>() / 10.0;
    let mel = MelSpectrogram { frames: example.mel.clone(), config_ref: "dsp".into() };
    let out = params.generate(&mel, 0, GenerationMode::Argmax).map_err(|e| e.to_string())?;
    let n = out.len();
    let mae = out.samples.iter().zip(&clip.samples).map(|(a, b)| (a - b).abs() as f64).sum::<f64>() / n as f64;
    ensure!(final_ce < 0.5, "cross-entropy {final_ce:.3} nats");
    ensure!(mae < 0.05, "regenerated waveform MAE {mae:.4} (cross-entropy {final_ce:.3} nats)");
    Ok(format!(
        "init loss {init_loss:.4}; length law on 100 mels; {VOCODER_STEPS} steps, cross-entropy {final_ce:.3}, MAE {mae:.4}"
    ))
}

fn voice_for_vocoder() -> AudioClip {
    let mut voice = SyntheticVoice::generate(0, 7);
    voice.noise_level = 0.0;
    voice.utterance(0.25, 22050, 1)
}

// --------------------------------------------------------------------- snr

fn snr() -> Outcome {
    let settings = SnrSettings::default();
    let mut items = Vec::new();
    let mut errors = Vec::new();
    for (i, db) in [15.0, 20.0, 25.0, 30.0].into_iter().enumerate() {
        let clip = noisy_speechlike(4.0, 16000, db, 100 + i as u64);
        let est = estimate_snr(&clip, &settings).map_err(|e| e.to_string())?.db;
        ensure!((est - db).abs() <= 1.5, "{db} dB mixture estimated at {est:.2} dB");
        errors.push(format!("{db}:{est:.2}"));
        items.push((format!("spk{}", i % 2), clip));
    }
    let report = serde_json::to_value(snr_report(&items, &settings).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    for key in ["mean_db", "std_db", "band_low_db", "band_high_db", "within_band_fraction"] {
        ensure!(report[key].is_number(), "report lacks {key}");
    }
    let (mean, std) = (report["mean_db"].as_f64().unwrap(), report["std_db"].as_f64().unwrap());
    ensure!((report["band_low_db"].as_f64().unwrap() - (mean - std)).abs() < 1e-9, "band low is not mean - std");
    ensure!((report["band_high_db"].as_f64().unwrap() - (mean + std)).abs() < 1e-9, "band high is not mean + std");
    ensure!(report["speakers"].as_array().map(Vec::len) == Some(2), "per-speaker rows missing");
    Ok(format!("estimates {}", errors.join(", ")))
}

// --------------------------------------------------------------------- mos

struct Server {
    child: Child,
    addr: String,
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn start_server(dir: &Path) -> Result<Server, String> {
    let mut child = Command::new(env!("CARGO_BIN_EXE_swar"))
        .args(["serve-mos", "--study", "study.jsonl", "--ratings", "ratings", "--addr", "127.0.0.1:0"])
        .current_dir(dir)
        .env_remove("SWAR_CONFIG")
        .env("RUST_LOG", "info")
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| e.to_string())?;
    let mut lines = BufReader::new(child.stderr.take().unwrap()).lines();
    loop {
        let line = lines.next().ok_or("server exited before listening")?.map_err(|e| e.to_string())?;
        if line.contains("rating service listening") {
            if let Some(addr) = line.split("addr=").nth(1).and_then(|r| r.split_whitespace().next()) {
                // Keep draining stderr so the server never blocks on a full pipe.
                std::thread::spawn(move || lines.for_each(drop));
                return Ok(Server { child, addr: addr.to_string() });
            }
        }
    }
}

fn http(addr: &str, method: &str, path: &str, body: Option<&str>) -> Result<(u16, Value), String> {
    let mut s = TcpStream::connect(addr).map_err(|e| e.to_string())?;
    let body = body.unwrap_or("");
    let req = format!(
        "{method} {path} HTTP/1.1\r\nHost: x\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    s.write_all(req.as_bytes()).map_err(|e| e.to_string())?;
    let mut resp = String::new();
    s.read_to_string(&mut resp).map_err(|e| e.to_string())?;
    let status: u16 = resp.get(9..12).and_then(|c| c.parse().ok()).ok_or("no status line")?;
    let payload = resp.split("\r\n\r\n").nth(1).unwrap_or("");
    Ok((status, serde_json::from_str(payload).unwrap_or(Value::Null)))
}

fn rating(rater: &str, pair: &str, q: Value, s: Value) -> String {
    json!({"rater_id": rater, "pair_id": pair, "quality": q, "similarity": s}).to_string()
}

fn close(v: &Value, want: f64) -> bool {
    v.as_f64().is_some_and(|x| (x - want).abs() < 1e-9)
}

fn mos() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let clip = SyntheticVoice::generate(1, 3).utterance(1.0, 22050, 1);
    write_wav(dir.path().join("a.wav"), &clip).map_err(|e| e.to_string())?;
    let pairs = [("p1", "m1", "male"), ("p2", "m1", "male"), ("p3", "f1", "female"), ("p4", "f2", "female")];
    let study: String = pairs
        .iter()
        .map(|(id, spk, g)| {
            format!(
                "{}\n",
                json!({"pair_id": id, "speaker_id": spk, "gender": g, "original": "a.wav", "cloned": "a.wav"})
            )
        })
        .collect();
    std::fs::write(dir.path().join("study.jsonl"), study).map_err(|e| e.to_string())?;
    let server = start_server(dir.path())?;
    let addr = server.addr.as_str();

    let mut contract = 0;
    let mut expect = |status: u16, method: &str, path: &str, body: Option<String>| -> Result<Value, String> {
        let (got, v) = http(addr, method, path, body.as_deref())?;
        ensure!(got == status, "{method} {path} {body:?}: status {got}, want {status} ({v})");
        contract += 1;
        Ok(v)
    };
    expect(400, "GET", "/api/pairs", None)?;
    let session = expect(200, "GET", "/api/pairs?token=abc", None)?;
    ensure!(session["pairs"].as_array().map(Vec::len) == Some(4), "session lists {session}");
    expect(400, "POST", "/api/ratings", Some("{not json".into()))?;
    expect(400, "POST", "/api/ratings", Some(json!({"rater_id": "r1", "pair_id": "p1", "quality": 3}).to_string()))?;
    expect(400, "POST", "/api/ratings", Some(rating("r1", "p1", json!("3"), json!(3))))?;
    expect(404, "POST", "/api/ratings", Some(rating("r1", "nope", json!(3), json!(3))))?;
    for bad in [json!(0), json!(6), json!(2.5), json!(-1)] {
        expect(422, "POST", "/api/ratings", Some(rating("r1", "p1", bad.clone(), json!(3))))?;
        expect(422, "POST", "/api/ratings", Some(rating("r1", "p1", json!(3), bad)))?;
    }
    expect(404, "GET", "/api/audio/nope.original", None)?;

    let empty = expect(200, "GET", "/api/aggregate", None)?;
    ensure!(empty["empty"] == json!(true), "aggregate before any rating: {empty}");

    for (r, p, q, s) in [
        ("r1", "p1", 4, 5),
        ("r2", "p1", 2, 3),
        ("r1", "p2", 5, 4),
        ("r1", "p3", 3, 3),
        ("r2", "p3", 1, 1),
        ("r2", "p3", 4, 2), // replaces the previous r2/p3 rating
        ("r1", "p4", 5, 5),
    ] {
        expect(201, "POST", "/api/ratings", Some(rating(r, p, json!(q), json!(s))))?;
    }
    let agg = expect(200, "GET", "/api/aggregate", None)?;
    drop(server);

    // Hand-computed: m1 quality {4,2,5}, similarity {5,3,4}; f1 {3,4} and
    // {3,2}; f2 {5} and {5}. Spreads are population standard deviations.
    ensure!(agg["records"] == json!(6) && agg["raters"] == json!(2), "counts in {agg}");
    ensure!(close(&agg["overall_quality"]["mean"], 23.0 / 6.0), "overall quality {}", agg["overall_quality"]);
    ensure!(close(&agg["overall_similarity"]["mean"], 22.0 / 6.0), "overall similarity {}", agg["overall_similarity"]);
    let speakers = agg["speakers"].as_array().ok_or("no speaker rows")?;
    let ids: Vec<&str> = speakers.iter().filter_map(|r| r["speaker_id"].as_str()).collect();
    ensure!(ids == ["m1", "f1", "f2"], "speaker order {ids:?}");
    let m1 = &speakers[0];
    ensure!(close(&m1["quality"]["mean"], 11.0 / 3.0), "m1 quality {}", m1["quality"]);
    ensure!(close(&m1["quality"]["std"], (14.0f64 / 9.0).sqrt()), "m1 quality std {}", m1["quality"]);
    ensure!(close(&m1["similarity"]["mean"], 4.0) && close(&m1["similarity"]["std"], (2.0f64 / 3.0).sqrt()), "m1 similarity {}", m1["similarity"]);
    ensure!(close(&m1["quality_over_pairs"]["mean"], 4.0) && close(&m1["quality_over_pairs"]["std"], 1.0), "m1 per-pair quality {}", m1["quality_over_pairs"]);
    ensure!(m1["MOS Quality"] == json!("3.67 ± 1.25") && m1["MOS Similarity"] == json!("4.00 ± 0.82"), "m1 display {m1}");
    let f1 = &speakers[1];
    ensure!(close(&f1["quality"]["mean"], 3.5) && close(&f1["quality"]["std"], 0.5), "f1 quality {}", f1["quality"]);
    ensure!(close(&f1["similarity"]["mean"], 2.5) && close(&f1["similarity"]["std"], 0.5), "f1 similarity {}", f1["similarity"]);
    let genders = agg["genders"].as_array().ok_or("no gender rows")?;
    ensure!(genders.len() == 2, "gender rows {genders:?}");
    let (male, female) = (&genders[0], &genders[1]);
    ensure!(male["gender"] == json!("Male") && close(&male["quality"]["mean"], 11.0 / 3.0) && close(&male["quality"]["std"], 0.0), "male row {male}");
    ensure!(female["gender"] == json!("Female") && female["speakers"] == json!(2), "female row {female}");
    ensure!(close(&female["quality"]["mean"], 4.25) && close(&female["quality"]["std"], 0.75), "female quality {}", female["quality"]);
    ensure!(close(&female["similarity"]["mean"], 3.75) && close(&female["similarity"]["std"], 1.25), "female similarity {}", female["similarity"]);
    ensure!(female["MOS Quality"] == json!("4.25 ± 0.75"), "female display {female}");

    let schema_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../mos/schema/aggregate.schema.json");
    let schema: Value = serde_json::from_str(&std::fs::read_to_string(&schema_path).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let validator = jsonschema::validator_for(&schema).map_err(|e| e.to_string())?;
    for doc in [&agg, &empty] {
        let errors: Vec<String> = validator.iter_errors(doc).map(|e| e.to_string()).collect();
        ensure!(errors.is_empty(), "schema violations: {errors:?}");
    }
    Ok(format!("{contract} API calls with expected status; per-speaker and per-gender rows match; schema valid"))
}
