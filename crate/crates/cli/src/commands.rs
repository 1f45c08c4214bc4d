use std::io::{BufRead, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _};
use serde::{Deserialize, Serialize};
use swar_core::config::PipelineConfig;
use swar_core::corpus::{
    compute_stats, read_manifest, scan_corpus, split_holdout_count, write_manifest, ManifestEntry, ManifestKind,
};
use swar_core::dsp::{
    load_wav, mel_spectrogram, normalize_amplitude, resample, split_long, truncate_silence, write_wav, AudioClip,
    MelFrontend, SnrSettings,
};
use swar_core::encoder::{
    bank_scores, train_encoder as fit_encoder, utterance_chunks, ChunkBank, EncoderParams, EncoderTrainOptions,
};
use swar_core::eval::{
    auc, comparison_bundle, compute_eer, cosine_similarity, project_embeddings, similarity_report, snr_report, svg,
    ComparisonInput, ProjectionMethod, ScoreRecord, ScoreSet,
};
use swar_core::synth::{prepare_examples, train_synth as fit_synth, write_alignment, SynthInput, SynthParams, SynthTrainOptions};
use swar_core::textnorm::{encode_chars, normalize as normalize_text, CharVocabulary};
use swar_core::vocoder::{train_vocoder as fit_vocoder, GenerationMode, VocoderExample, VocoderParams, VocoderTrainOptions};
use swar_core::Error as CoreError;
use tracing::{info, warn};

use crate::workers::par_map;

pub struct Context {
    pub config: PipelineConfig,
    pub workers: usize,
}

impl Context {
    fn path_or(&self, explicit: Option<PathBuf>, configured: &str) -> PathBuf {
        explicit.unwrap_or_else(|| PathBuf::from(configured))
    }

    fn encoder_path(&self, explicit: Option<PathBuf>) -> PathBuf {
        self.path_or(explicit, &self.config.paths.encoder_checkpoint)
    }

    fn load_encoder(&self, explicit: Option<PathBuf>) -> anyhow::Result<EncoderParams> {
        let path = self.encoder_path(explicit);
        EncoderParams::load(&path).with_context(|| format!("loading encoder checkpoint {}", path.display()))
    }
}

fn ensure_parent(path: &Path) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

/// Pretty JSON to `out`, or to stdout when no path is given.
fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match out {
        Some(path) => {
            ensure_parent(path)?;
            std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
            info!(path = %path.display(), "wrote report");
        }
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    ensure_parent(path)?;
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn preprocess(
    ctx: &Context,
    input: &Path,
    output: &Path,
    kind: ManifestKind,
    strict: bool,
    max_seconds: f64,
) -> anyhow::Result<()> {
    let scan = scan_corpus(input, kind)?;
    let mut problems = scan.problems;
    if strict && !problems.is_empty() {
        return Err(CoreError::Itemized(problems).into());
    }
    let target_hz = match kind {
        ManifestKind::Encoder => ctx.config.encoder_frontend.sampling_rate_hz,
        ManifestKind::Synth => ctx.config.dsp.sampling_rate_hz,
    };
    let policy = &ctx.config.silence;

    // Outer error aborts the run; inner error is a per-clip problem.
    let processed = par_map(ctx.workers, &scan.entries, |e| -> anyhow::Result<Result<Vec<(PathBuf, AudioClip)>, String>> {
        let clip = load_wav(&e.audio_path)?;
        let clip = truncate_silence(&resample(&clip, target_hz), policy);
        let clip = match normalize_amplitude(&clip) {
            Ok(c) => c,
            Err(err @ CoreError::DegenerateInput(_)) => return Ok(Err(format!("{}: {err}", e.audio_path.display()))),
            Err(err) => return Err(err.into()),
        };
        let parts = split_long(&clip, max_seconds, policy);
        if kind == ManifestKind::Synth && parts.len() > 1 {
            return Ok(Err(format!(
                "{}: longer than {max_seconds} s and its transcript cannot be split with it",
                e.audio_path.display()
            )));
        }
        let stem = e.audio_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let single = parts.len() == 1;
        Ok(Ok(parts
            .into_iter()
            .enumerate()
            .map(|(k, part)| {
                let name = if single { format!("{stem}.wav") } else { format!("{stem}_part{}.wav", k + 1) };
                (Path::new(&e.speaker_id).join(name), part)
            })
            .collect()))
    })?;

    let mut entries = Vec::new();
    for (e, result) in scan.entries.iter().zip(processed) {
        match result {
            Ok(parts) => {
                for (rel, clip) in parts {
                    let dest = output.join(&rel);
                    ensure_parent(&dest)?;
                    write_wav(&dest, &clip)?;
                    entries.push(ManifestEntry {
                        audio_path: rel,
                        duration_s: clip.duration_s(),
                        ..e.clone()
                    });
                }
            }
            Err(p) => {
                if strict {
                    return Err(CoreError::Itemized(vec![p]).into());
                }
                problems.push(p);
            }
        }
    }
    for p in &problems {
        warn!("skipped: {p}");
    }
    if entries.is_empty() {
        bail!("no usable clips under {}", input.display());
    }
    let manifest = output.join("manifest.jsonl");
    write_manifest(&manifest, &entries)?;
    info!(clips = entries.len(), skipped = problems.len(), manifest = %manifest.display(), "preprocessing done");
    Ok(())
}

pub fn normalize(mut input: impl BufRead, mut output: impl Write) -> anyhow::Result<()> {
    let mut text = String::new();
    input.read_to_string(&mut text).context("stdin is not valid UTF-8")?;
    let normalized = normalize_text(&text)?;
    for s in &normalized.sentences {
        writeln!(output, "{s}")?;
    }
    Ok(())
}

pub enum Holdout {
    None,
    File(PathBuf),
    Speakers(usize),
}

impl Holdout {
    pub fn from_flags(file: Option<PathBuf>, speakers: usize) -> Self {
        match (file, speakers) {
            (Some(f), _) => Holdout::File(f),
            (None, 0) => Holdout::None,
            (None, n) => Holdout::Speakers(n),
        }
    }
}

fn chunk_bank(ctx: &Context, entries: &[ManifestEntry]) -> anyhow::Result<ChunkBank> {
    let frontend = &ctx.config.encoder_frontend;
    let chunks = par_map(ctx.workers, entries, |e| -> swar_core::Result<_> {
        let clip = load_wav(&e.audio_path)?;
        match utterance_chunks(&clip, frontend) {
            Ok(c) => Ok(Some(c)),
            Err(CoreError::DegenerateInput(msg)) => {
                warn!("skipped: {msg}");
                Ok(None)
            }
            Err(err) => Err(err),
        }
    })?;
    let mut bank = ChunkBank::default();
    for (e, c) in entries.iter().zip(chunks) {
        if let Some(c) = c {
            bank.push(&e.speaker_id, c);
        }
    }
    Ok(bank)
}

pub fn train_encoder(
    ctx: &Context,
    manifest: &Path,
    holdout: Holdout,
    steps: usize,
    out: Option<PathBuf>,
    metrics: Option<PathBuf>,
) -> anyhow::Result<()> {
    let entries = read_manifest(manifest)?;
    let (train, held) = match holdout {
        Holdout::None => (entries, None),
        Holdout::File(path) => (entries, Some(read_manifest(path)?)),
        Holdout::Speakers(n) => {
            let (t, h) = split_holdout_count(&entries, n, ctx.config.seed)?;
            (t, Some(h))
        }
    };
    let bank = chunk_bank(ctx, &train)?;
    let held_bank = held.map(|h| chunk_bank(ctx, &h)).transpose()?;
    info!(chunks = bank.total_chunks(), speakers = bank.speakers.len(), "training encoder");
    let options = EncoderTrainOptions {
        steps,
        seed: ctx.config.seed,
    };
    let (params, log) = fit_encoder(&ctx.config.encoder, &bank, held_bank.as_ref(), options, |m| {
        if let Some(eer) = m.eer {
            info!(step = m.step, loss = m.loss, eer, "encoder");
        } else if m.step % 10 == 0 {
            info!(step = m.step, loss = m.loss, "encoder");
        }
    })?;
    let path = ctx.encoder_path(out);
    ensure_parent(&path)?;
    params.save(&path)?;
    info!(checkpoint = %path.display(), "saved encoder");
    if let Some(m) = metrics {
        write_jsonl(&m, &log)?;
    }
    Ok(())
}

pub fn train_synth(
    ctx: &Context,
    manifest: &Path,
    encoder: Option<PathBuf>,
    steps: usize,
    out: Option<PathBuf>,
    metrics: Option<PathBuf>,
) -> anyhow::Result<()> {
    let entries = read_manifest(manifest)?;
    let encoder = ctx.load_encoder(encoder)?;
    let vocab = CharVocabulary::full_devanagari();
    let examples = prepare_examples(
        &entries,
        &encoder,
        &ctx.config.dsp,
        &ctx.config.encoder_frontend,
        &vocab,
    )?;
    info!(utterances = examples.len(), "training synthesizer");
    let options = SynthTrainOptions {
        steps,
        seed: ctx.config.seed,
    };
    let (params, log) = fit_synth(&ctx.config.synth, vocab.clone(), &examples, options, |m| {
        if m.step % 10 == 0 {
            info!(step = m.step, loss = m.loss, mel = m.mel_loss, gate = m.gate_loss, "synth");
        }
    })?;
    let path = ctx.path_or(out, &ctx.config.paths.synth_checkpoint);
    ensure_parent(&path)?;
    params.save(&path)?;
    let vocab_path = PathBuf::from(&ctx.config.paths.vocab);
    ensure_parent(&vocab_path)?;
    vocab.save(&vocab_path)?;
    info!(checkpoint = %path.display(), vocab = %vocab_path.display(), "saved synthesizer");
    if let Some(m) = metrics {
        write_jsonl(&m, &log)?;
    }
    Ok(())
}

pub fn train_vocoder(
    ctx: &Context,
    manifest: &Path,
    steps: usize,
    out: Option<PathBuf>,
    metrics: Option<PathBuf>,
) -> anyhow::Result<()> {
    let entries = read_manifest(manifest)?;
    let dsp = &ctx.config.dsp;
    let frontend = MelFrontend::synthesizer(dsp);
    let cfg = &ctx.config.vocoder;
    let examples = par_map(ctx.workers, &entries, |e| -> swar_core::Result<_> {
        let clip = resample(&load_wav(&e.audio_path)?, dsp.sampling_rate_hz);
        let mel = mel_spectrogram(&clip, &frontend)?;
        VocoderExample::new(e.audio_path.display().to_string(), &mel.frames, &clip.samples, cfg)
    })?;
    info!(clips = examples.len(), "training vocoder");
    let options = VocoderTrainOptions {
        steps,
        seed: ctx.config.seed,
    };
    let (params, log) = fit_vocoder(cfg, &examples, options, |m| {
        if m.step % 10 == 0 {
            info!(step = m.step, loss = m.loss, "vocoder");
        }
    })?;
    let path = ctx.path_or(out, &ctx.config.paths.vocoder_checkpoint);
    ensure_parent(&path)?;
    params.save(&path)?;
    info!(checkpoint = %path.display(), "saved vocoder");
    if let Some(m) = metrics {
        write_jsonl(&m, &log)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct EmbeddingRow {
    source: String,
    vector: Vec<f64>,
}

pub fn embed(ctx: &Context, encoder: Option<PathBuf>, inputs: &[PathBuf], out: Option<PathBuf>) -> anyhow::Result<()> {
    let encoder = ctx.load_encoder(encoder)?;
    let frontend = &ctx.config.encoder_frontend;
    let rows = par_map(ctx.workers, inputs, |p| -> swar_core::Result<_> {
        let e = encoder.embed_utterance(&load_wav(p)?, frontend)?;
        Ok(EmbeddingRow {
            source: p.display().to_string(),
            vector: e.vector,
        })
    })?;
    emit_json(out.as_deref(), &rows)
}

pub struct CloneRequest {
    pub reference: PathBuf,
    pub text: String,
    pub out: PathBuf,
    pub encoder: Option<PathBuf>,
    pub synth: Option<PathBuf>,
    pub vocoder: Option<PathBuf>,
    pub alignment: Option<PathBuf>,
    pub mode: GenerationMode,
}

/// normalize, embed the reference, decode mels, vocode.
pub fn clone_voice(ctx: &Context, req: &CloneRequest) -> anyhow::Result<()> {
    let text = normalize_text(&req.text)?;
    info!(text = %text.joined(), "normalized");

    let encoder = ctx.load_encoder(req.encoder.clone())?;
    let reference = load_wav(&req.reference)?;
    let speaker = encoder.embed_utterance(&reference, &ctx.config.encoder_frontend)?;

    let synth_path = ctx.path_or(req.synth.clone(), &ctx.config.paths.synth_checkpoint);
    let synth = SynthParams::load(&synth_path)
        .with_context(|| format!("loading synthesizer checkpoint {}", synth_path.display()))?;
    let char_ids = encode_chars(&text, &synth.vocab)?;
    let output = synth.infer(&SynthInput { char_ids, speaker })?;
    if output.truncated {
        warn!(
            frames = output.mel.n_frames(),
            "decoder hit max_decoder_steps before the stop gate fired"
        );
    }
    info!(frames = output.mel.n_frames(), "decoded mel frames");

    let vocoder_path = ctx.path_or(req.vocoder.clone(), &ctx.config.paths.vocoder_checkpoint);
    let vocoder = VocoderParams::load(&vocoder_path)
        .with_context(|| format!("loading vocoder checkpoint {}", vocoder_path.display()))?;
    let audio = vocoder.generate(&output.mel, ctx.config.seed, req.mode)?;

    ensure_parent(&req.out)?;
    write_wav(&req.out, &audio)?;
    if let Some(path) = &req.alignment {
        ensure_parent(path)?;
        write_alignment(path, &output.alignment)?;
    }
    info!(out = %req.out.display(), seconds = audio.duration_s(), "wrote clone");
    Ok(())
}

#[derive(Serialize)]
struct EerReport {
    eer: f64,
    threshold: f64,
    auc: f64,
    genuine_trials: usize,
    impostor_trials: usize,
}

fn eer_report(scores: &ScoreSet) -> anyhow::Result<EerReport> {
    let r = compute_eer(scores)?;
    Ok(EerReport {
        eer: r.eer,
        threshold: r.threshold,
        auc: auc(scores)?,
        genuine_trials: scores.genuine.len(),
        impostor_trials: scores.impostor.len(),
    })
}

pub fn eval_eer(
    ctx: &Context,
    scores: Option<PathBuf>,
    manifest: Option<PathBuf>,
    encoder: Option<PathBuf>,
    out: Option<PathBuf>,
) -> anyhow::Result<()> {
    let set = match (scores, manifest) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            let mut records = Vec::new();
            for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let r: ScoreRecord =
                    serde_json::from_str(line).with_context(|| format!("{} line {}", path.display(), i + 1))?;
                records.push(r);
            }
            ScoreSet::from_records(&records)
        }
        (None, Some(manifest)) => {
            let encoder = ctx.load_encoder(encoder)?;
            let bank = chunk_bank(ctx, &read_manifest(manifest)?)?;
            bank_scores(&encoder, &bank)?.0
        }
        (None, None) => bail!("give --scores or --manifest"),
    };
    emit_json(out.as_deref(), &eer_report(&set)?)
}

#[derive(Deserialize)]
struct ClonePairLine {
    speaker_id: String,
    original: PathBuf,
    cloned: PathBuf,
}

pub fn eval_sim(
    ctx: &Context,
    pairs: &Path,
    encoder: Option<PathBuf>,
    bundle_dir: Option<PathBuf>,
    out: Option<PathBuf>,
) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(pairs).with_context(|| format!("reading {}", pairs.display()))?;
    let base = pairs.parent().unwrap_or(Path::new("."));
    let mut lines = Vec::new();
    for (i, l) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let mut p: ClonePairLine = serde_json::from_str(l).with_context(|| format!("{} line {}", pairs.display(), i + 1))?;
        p.original = base.join(p.original);
        p.cloned = base.join(p.cloned);
        lines.push(p);
    }
    let encoder = ctx.load_encoder(encoder)?;
    let frontend = &ctx.config.encoder_frontend;
    let dsp = &ctx.config.dsp;
    let scores = par_map(ctx.workers, &lines, |p| -> anyhow::Result<_> {
        let original = load_wav(&p.original)?;
        let cloned = load_wav(&p.cloned)?;
        let a = encoder.embed_utterance(&original, frontend)?;
        let b = encoder.embed_utterance(&cloned, frontend)?;
        Ok((p.speaker_id.clone(), cosine_similarity(&a.vector, &b.vector), original, cloned, a, b))
    })?;
    if let Some(dir) = &bundle_dir {
        for (i, (speaker, _, original, cloned, a, b)) in scores.iter().enumerate() {
            let original = resample(original, dsp.sampling_rate_hz);
            let cloned = resample(cloned, dsp.sampling_rate_hz);
            let input = ComparisonInput {
                original: &original,
                cloned: &cloned,
                original_embedding: Some(&a.vector),
                cloned_embedding: Some(&b.vector),
                alignment: None,
            };
            comparison_bundle(&input, dsp, &dir.join(format!("{:03}_{speaker}", i + 1)))?;
        }
    }
    let pairs: Vec<(String, f64)> = scores.into_iter().map(|(s, c, ..)| (s, c)).collect();
    emit_json(out.as_deref(), &similarity_report(&pairs))
}

#[derive(Serialize)]
struct ProjectionReport {
    #[serde(flatten)]
    projection: swar_core::eval::Projection2D,
    silhouette: f64,
}

pub fn project(
    ctx: &Context,
    manifest: &Path,
    encoder: Option<PathBuf>,
    method: ProjectionMethod,
    out: Option<PathBuf>,
    svg_path: Option<PathBuf>,
) -> anyhow::Result<()> {
    let entries = read_manifest(manifest)?;
    let encoder = ctx.load_encoder(encoder)?;
    let frontend = &ctx.config.encoder_frontend;
    let embedded = par_map(ctx.workers, &entries, |e| -> swar_core::Result<_> {
        match encoder.embed_utterance(&load_wav(&e.audio_path)?, frontend) {
            Ok(v) => Ok(Some((v.vector, e.speaker_id.clone()))),
            Err(CoreError::DegenerateInput(msg)) => {
                warn!("skipped: {msg}");
                Ok(None)
            }
            Err(err) => Err(err),
        }
    })?;
    let (vectors, labels): (Vec<_>, Vec<_>) = embedded.into_iter().flatten().unzip();
    let projection = project_embeddings(&vectors, &labels, method, ctx.config.seed)?;
    let silhouette = projection.silhouette()?;
    info!(points = labels.len(), silhouette, "projected embeddings");
    if let Some(path) = svg_path {
        ensure_parent(&path)?;
        std::fs::write(&path, svg::scatter(&projection.points, &projection.labels, "speaker embeddings"))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    emit_json(out.as_deref(), &ProjectionReport { projection, silhouette })
}

pub fn snr(ctx: &Context, manifest: &Path, out: Option<PathBuf>) -> anyhow::Result<()> {
    let entries = read_manifest(manifest)?;
    let items = par_map(ctx.workers, &entries, |e| -> swar_core::Result<_> {
        Ok((e.speaker_id.clone(), load_wav(&e.audio_path)?))
    })?;
    emit_json(out.as_deref(), &snr_report(&items, &SnrSettings::default())?)
}

pub fn stats(manifest: &Path, out: Option<PathBuf>) -> anyhow::Result<()> {
    emit_json(out.as_deref(), &compute_stats(&read_manifest(manifest)?)?)
}

pub fn serve_mos(
    ctx: &Context,
    study: &Path,
    ratings: &Path,
    addr: SocketAddr,
    static_dir: Option<PathBuf>,
    snapshot_every: usize,
) -> anyhow::Result<()> {
    let study = swar_mos::Study::load(study)?;
    let store = swar_mos::RatingStore::open(ratings, snapshot_every)?;
    info!(pairs = study.pairs().len(), ratings = store.len(), %addr, "starting rating service");
    let state = swar_mos::AppState::new(study, store, ctx.config.seed);
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(ctx.workers)
        .enable_all()
        .build()?;
    runtime.block_on(swar_mos::serve(addr, state, static_dir))?;
    Ok(())
}
