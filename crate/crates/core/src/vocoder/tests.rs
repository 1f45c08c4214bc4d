use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::nn::gradcheck::check_gradients;

fn tiny() -> VocoderConfig {
    VocoderConfig {
        hop_length: 4,
        gru_size: 8,
        fc_size: 8,
        conditioning_channels: 4,
        residual_blocks: 2,
        n_mels: 5,
        crop_samples: 12,
        learning_rate: 0.01,
        ..VocoderConfig::default()
    }
}

fn random_mel(frames: usize, mels: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((frames, mels), || rng.random_range(-8.0..2.0))
}

fn spec(frames: Array2<f64>) -> MelSpectrogram {
    MelSpectrogram {
        frames,
        config_ref: "test".into(),
    }
}

fn compand(x: f64) -> f64 {
    x.signum() * (1.0 + 255.0 * x.abs()).ln() / 256f64.ln()
}

fn expand(y: f64) -> f64 {
    y.signum() * (256f64.powf(y.abs()) - 1.0) / 255.0
}

#[test]
fn mu_law_fixed_points() {
    assert_eq!(mu_encode(0.0, 256).unwrap(), 128);
    assert_eq!(mu_encode(1.0, 256).unwrap(), 255);
    assert_eq!(mu_encode(-1.0, 256).unwrap(), 0);
    let half_step = expand(1.0 / 255.0);
    assert!(mu_decode(128, 256).unwrap().abs() <= half_step);
    assert_eq!(mu_decode(255, 256).unwrap(), 1.0);
    assert_eq!(mu_decode(0, 256).unwrap(), -1.0);
}

#[test]
fn mu_law_contract_violations() {
    assert!(matches!(mu_encode(1.0001, 256), Err(Error::Contract(_))));
    assert!(matches!(mu_encode(-2.0, 256), Err(Error::Contract(_))));
    assert!(matches!(mu_encode(f64::NAN, 256), Err(Error::Contract(_))));
    assert!(matches!(mu_decode(256, 256), Err(Error::Contract(_))));
}

#[test]
fn mu_law_round_trip_within_companded_half_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..10_000 {
        let x: f64 = rng.random_range(-1.0..=1.0);
        let c = mu_encode(x, 256).unwrap();
        let xr = mu_decode(c, 256).unwrap();
        let y = compand(x);
        let yc = 2.0 * c as f64 / 255.0 - 1.0;
        assert!((y - yc).abs() <= 1.0 / 255.0 + 1e-12, "x {x} class {c}");
        let bound = expand(y.abs() + 1.0 / 255.0) - expand(y.abs());
        assert!((xr - x).abs() <= bound + 1e-12, "x {x} -> {xr}");
    }
}

proptest! {
    #[test]
    fn mu_law_is_monotone(a in -1.0f64..=1.0, b in -1.0f64..=1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(mu_encode(lo, 256).unwrap() <= mu_encode(hi, 256).unwrap());
    }

    #[test]
    fn mu_law_decode_encode_is_identity(c in 0usize..256) {
        prop_assert_eq!(mu_encode(mu_decode(c, 256).unwrap(), 256).unwrap(), c);
    }
}

#[test]
fn upsampled_length_is_frames_times_hop() {
    let cfg = VocoderConfig {
        gru_size: 8,
        fc_size: 8,
        conditioning_channels: 8,
        ..VocoderConfig::default()
    };
    let p = VocoderParams::init(&cfg, 0).unwrap();
    let up = p.upsample_mel(&spec(random_mel(10, 80, 1))).unwrap();
    assert_eq!(up.dim(), (2000, 8));
    let flat = p.upsample_mel(&spec(Array2::from_elem((10, 80), -3.0))).unwrap();
    assert!(flat.iter().all(|v| v.is_finite()));
}

#[test]
fn mel_width_is_checked() {
    let p = VocoderParams::init(&tiny(), 0).unwrap();
    assert!(matches!(p.upsample_mel(&spec(random_mel(3, 4, 0))), Err(Error::Contract(_))));
    assert!(matches!(p.upsample_mel(&spec(Array2::zeros((0, 5)))), Err(Error::Contract(_))));
}

#[test]
fn perturbation_stays_within_receptive_field() {
    let cfg = tiny();
    let p = VocoderParams::init(&cfg, 3).unwrap();
    let rf = cfg.receptive_field_frames();
    assert_eq!(rf, 3);
    let base = random_mel(15, 5, 2);
    let k = 7;
    let mut moved = base.clone();
    moved.row_mut(k).mapv_inplace(|v| v + 1.5);
    let a = p.upsample_mel(&spec(base)).unwrap();
    let b = p.upsample_mel(&spec(moved)).unwrap();
    for f in 0..15 {
        let rows = f * 4..(f + 1) * 4;
        let diff = rows.map(|r| (&a.row(r) - &b.row(r)).mapv(f64::abs).sum()).sum::<f64>();
        if f.abs_diff(k) > rf {
            assert_eq!(diff, 0.0, "frame {f}");
        } else {
            assert!(diff > 0.0, "frame {f}");
        }
    }
}

#[test]
fn generation_length_law_on_random_mels() {
    let cfg = tiny();
    let p = VocoderParams::init(&cfg, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for i in 0..100 {
        let frames = rng.random_range(1..20);
        let mode = if i % 2 == 0 { GenerationMode::Argmax } else { GenerationMode::Sample };
        let clip = p.generate(&spec(random_mel(frames, 5, i)), i, mode).unwrap();
        assert_eq!(clip.samples.len(), frames * cfg.hop_length);
        assert_eq!(clip.sample_rate_hz, 22050);
        assert!(clip.samples.iter().all(|s| s.abs() <= 1.0));
    }
}

#[test]
fn fifty_frames_give_ten_thousand_samples() {
    let cfg = VocoderConfig {
        gru_size: 8,
        fc_size: 8,
        conditioning_channels: 4,
        ..VocoderConfig::default()
    };
    let p = VocoderParams::init(&cfg, 1).unwrap();
    let clip = p.generate(&spec(random_mel(50, 80, 0)), 0, GenerationMode::Argmax).unwrap();
    assert_eq!(clip.samples.len(), 10_000);
}

#[test]
fn generation_determinism() {
    let p = VocoderParams::init(&tiny(), 2).unwrap();
    let mel = spec(random_mel(12, 5, 8));
    let a = p.generate(&mel, 1, GenerationMode::Argmax).unwrap();
    let b = p.generate(&mel, 99, GenerationMode::Argmax).unwrap();
    assert_eq!(a.samples, b.samples);
    let s1 = p.generate(&mel, 5, GenerationMode::Sample).unwrap();
    let s2 = p.generate(&mel, 5, GenerationMode::Sample).unwrap();
    let s3 = p.generate(&mel, 6, GenerationMode::Sample).unwrap();
    assert_eq!(s1.samples, s2.samples);
    assert_ne!(s1.samples, s3.samples);
}

#[test]
fn generation_agrees_with_teacher_forced_graph() {
    let mut p = VocoderParams::init(&tiny(), 6).unwrap();
    // Sharpen the output layer so argmax decisions are not near-ties.
    let w = p.fc2.w;
    p.store.get_mut(w).mapv_inplace(|v| v * 3000.0);
    let mel = random_mel(10, 5, 1);
    let cond = p.upsample_mel(&spec(mel.clone())).unwrap();
    let classes = p.generate_classes(&cond, 0, GenerationMode::Argmax).unwrap();
    let mut g = Graph::new(&p.store);
    let c = p.conditioning_graph(&mut g, &mel);
    let inputs = p.teacher_inputs(&classes, 0, classes.len());
    let logits = p.logits_graph(&mut g, c, &inputs, 0);
    for (t, row) in g.value(logits).rows().into_iter().enumerate() {
        assert_eq!(argmax(row), classes[t], "sample {t}");
    }
}

#[test]
fn truncated_mel_reproduces_prefix() {
    let cfg = tiny();
    let p = VocoderParams::init(&cfg, 5).unwrap();
    let mel = random_mel(20, 5, 3);
    let full = p.generate(&spec(mel.clone()), 0, GenerationMode::Argmax).unwrap();
    let k = 12;
    let part = p.generate(&spec(mel.slice(s![..k, ..]).to_owned()), 0, GenerationMode::Argmax).unwrap();
    let exact = (k - cfg.receptive_field_frames()) * cfg.hop_length;
    assert_eq!(part.samples.len(), k * cfg.hop_length);
    assert_eq!(part.samples[..exact], full.samples[..exact]);
}

#[test]
fn teacher_inputs_shift_by_one_with_silence_first() {
    let p = VocoderParams::init(&tiny(), 0).unwrap();
    let classes = [10, 20, 30, 40];
    assert_eq!(p.teacher_inputs(&classes, 0, 3), vec![128, 10, 20]);
    assert_eq!(p.teacher_inputs(&classes, 2, 2), vec![20, 30]);
}

#[test]
fn initial_loss_is_uniform_cross_entropy() {
    let cfg = VocoderConfig {
        crop_samples: 600,
        ..VocoderConfig::default()
    };
    let p = VocoderParams::init(&cfg, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mel = random_mel(6, 80, 2);
    let classes: Vec<usize> = (0..1200).map(|_| rng.random_range(0..256)).collect();
    let mut g = Graph::new(&p.store);
    let c = p.conditioning_graph(&mut g, &mel);
    let inputs = p.teacher_inputs(&classes, 300, 600);
    let loss = p.crop_loss_graph(&mut g, c, &inputs, &classes, 300);
    assert!((g.scalar(loss) - 256f64.ln()).abs() < 0.05, "{}", g.scalar(loss));
}

#[test]
fn cross_entropy_gradients_match_finite_differences() {
    let mut p = VocoderParams::init(&tiny(), 7).unwrap();
    // Undo the near-zero output scaling so every parameter has a visible gradient.
    let w = p.fc2.w;
    p.store.get_mut(w).mapv_inplace(|v| v * 1000.0);
    let mel = random_mel(5, 5, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let classes: Vec<usize> = (0..20).map(|_| rng.random_range(0..256)).collect();
    let inputs = p.teacher_inputs(&classes, 3, 12);
    let report = check_gradients(
        &p.store,
        |g| {
            let c = p.conditioning_graph(g, &mel);
            p.crop_loss_graph(g, c, &inputs, &classes, 3)
        },
        1e-5,
        10,
    );
    assert!(report.max_rel_error < 1e-4, "{report:?}");
    assert!(report.entries_checked > 100);
}

#[test]
fn example_pairing_trims_centred_frames() {
    let cfg = tiny();
    let audio = vec![0.1f32; 41];
    let ex = VocoderExample::new("a", &random_mel(11, 5, 0), &audio, &cfg).unwrap();
    assert_eq!(ex.mel.nrows(), 10);
    assert_eq!(ex.classes.len(), 40);
    let ex = VocoderExample::new("b", &random_mel(10, 5, 0), &audio, &cfg).unwrap();
    assert_eq!(ex.classes.len(), 40);
    let ex = VocoderExample::new("c", &random_mel(9, 5, 0), &audio, &cfg).unwrap();
    assert_eq!((ex.mel.nrows(), ex.classes.len()), (9, 36));
}

#[test]
fn misaligned_pairs_name_the_item() {
    let cfg = tiny();
    let audio = vec![0.0f32; 40];
    match VocoderExample::new("clip-7", &random_mel(14, 5, 0), &audio, &cfg) {
        Err(Error::Alignment(m)) => assert!(m.contains("clip-7")),
        other => panic!("{other:?}"),
    }
    assert!(matches!(
        VocoderExample::new("w", &random_mel(10, 6, 0), &audio, &cfg),
        Err(Error::Alignment(_))
    ));
    let bad = VocoderExample {
        id: "hand-made".into(),
        mel: random_mel(3, 5, 0),
        classes: vec![0; 11],
    };
    match train_vocoder(&cfg, &[bad], VocoderTrainOptions { steps: 1, seed: 0 }, |_| {}) {
        Err(Error::Alignment(m)) => assert!(m.contains("hand-made")),
        other => panic!("{other:?}"),
    }
}

fn tiny_example(seed: u64) -> VocoderExample {
    let cfg = tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let audio: Vec<f32> = (0..48).map(|i| 0.5 * (i as f32 * 0.7).sin() + rng.random_range(-0.01..0.01)).collect();
    VocoderExample::new("t", &random_mel(12, 5, seed), &audio, &cfg).unwrap()
}

#[test]
fn zero_steps_returns_initialization() {
    let cfg = tiny();
    let (p, log) = train_vocoder(&cfg, &[tiny_example(0)], VocoderTrainOptions { steps: 0, seed: 3 }, |_| {}).unwrap();
    let init = VocoderParams::init(&cfg, 3).unwrap();
    assert!(log.is_empty());
    for ((_, a), (_, b)) in p.store.iter().zip(init.store.iter()) {
        assert_eq!(a, b);
    }
}

#[test]
fn training_is_deterministic_and_learns() {
    let cfg = tiny();
    let ex = [tiny_example(1)];
    let opts = VocoderTrainOptions { steps: 150, seed: 2 };
    let (a, la) = train_vocoder(&cfg, &ex, opts, |_| {}).unwrap();
    let (b, lb) = train_vocoder(&cfg, &ex, opts, |_| {}).unwrap();
    assert_eq!(la, lb);
    for ((_, x), (_, y)) in a.store.iter().zip(b.store.iter()) {
        assert_eq!(x, y);
    }
    assert!(la[149].loss < la[0].loss - 1.0, "{} -> {}", la[0].loss, la[149].loss);
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.vocr");
    let p = VocoderParams::init(&tiny(), 4).unwrap();
    p.save(&path).unwrap();
    let q = VocoderParams::load(&path).unwrap();
    assert_eq!(q.config, p.config);
    let mel = spec(random_mel(6, 5, 1));
    let a = p.upsample_mel(&mel).unwrap();
    let b = q.upsample_mel(&mel).unwrap();
    for (x, y) in a.iter().zip(b.iter()) {
        assert!((x - y).abs() < 1e-5);
    }
    let mut ck = p.to_checkpoint().unwrap();
    ck.magic = *b"SYNT";
    ck.save(&path).unwrap();
    assert!(VocoderParams::load(&path).is_err());
}

#[test]
fn config_validation_and_modes() {
    assert!(VocoderConfig::default().validate().is_ok());
    let bad = VocoderConfig {
        mu_classes: 200,
        ..VocoderConfig::default()
    };
    assert!(matches!(bad.validate(), Err(Error::Config(_))));
    assert_eq!("argmax".parse::<GenerationMode>().unwrap(), GenerationMode::Argmax);
    assert_eq!("sample".parse::<GenerationMode>().unwrap(), GenerationMode::Sample);
    assert!("greedy".parse::<GenerationMode>().is_err());
}
