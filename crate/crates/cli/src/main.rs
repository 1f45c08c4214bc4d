//! `swar`: preprocess corpora, train the three models, clone voices,
//! evaluate, and serve listening tests.
//!
//! Exit status is 0 on success, 1 when a pipeline stage fails (the stage's
//! message goes to stderr) and 2 for usage errors.

mod commands;
mod workers;

use std::io::IsTerminal;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use swar_core::config::{PipelineConfig, CONFIG_ENV};
use swar_core::corpus::ManifestKind;
use swar_core::eval::ProjectionMethod;
use swar_core::vocoder::GenerationMode;

#[derive(Debug, Parser)]
#[command(name = "swar", version, about = "Few-shot Nepali voice cloning pipeline")]
struct Cli {
    /// Pipeline config file (`key = value` with `[section]` headers).
    /// Falls back to the SWAR_CONFIG environment variable, then to the
    /// built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Upper bound on threads used for loading and analysing audio.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    workers: u16,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Resample, trim silence, normalize and split a `speaker/clip.wav` tree
    /// and write a manifest for it.
    Preprocess(PreprocessArgs),
    /// Normalize Devanagari text from stdin, one sentence per output line.
    Normalize,
    /// Train the speaker encoder with the GE2E loss.
    TrainEncoder(TrainEncoderArgs),
    /// Train the mel synthesizer on a paired manifest.
    TrainSynth(TrainSynthArgs),
    /// Train the vocoder on a manifest's audio.
    TrainVocoder(TrainVocoderArgs),
    /// Compute speaker embeddings for WAV files.
    Embed(EmbedArgs),
    /// Speak `--text` in the voice of `--ref`.
    Clone(CloneArgs),
    /// Equal error rate from a score file or from encoder embeddings.
    EvalEer(EvalEerArgs),
    /// Cosine similarity between original and cloned clips, with bands.
    EvalSim(EvalSimArgs),
    /// 2-D projection of speaker embeddings.
    Project(ProjectArgs),
    /// Signal-to-noise estimates for every clip of a manifest.
    Snr(SnrArgs),
    /// Dataset statistics for a manifest.
    Stats(StatsArgs),
    /// Serve the listening-test API (and optionally a static UI).
    ServeMos(ServeMosArgs),
}

#[derive(Debug, Args)]
struct PreprocessArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// `encoder` (audio only) or `synth` (audio with `.txt` transcripts).
    #[arg(long, default_value = "encoder", value_parser = parse_kind)]
    kind: ManifestKind,
    /// Fail on the first problem instead of skipping the affected clips.
    #[arg(long)]
    strict: bool,
    /// Clips longer than this are split at a pause.
    #[arg(long, default_value_t = 15.0)]
    max_seconds: f64,
}

#[derive(Debug, Args)]
struct TrainEncoderArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Separate holdout manifest for EER logging.
    #[arg(long, conflicts_with = "holdout_speakers")]
    holdout: Option<PathBuf>,
    /// Hold out this many speakers of `--manifest` for EER logging;
    /// defaults to `encoder.holdout_speakers`, and 0 disables the holdout.
    #[arg(long)]
    holdout_speakers: Option<usize>,
    #[arg(long)]
    steps: usize,
    /// Checkpoint path; defaults to `paths.encoder_checkpoint`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-step metrics as JSON lines.
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainSynthArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    encoder: Option<PathBuf>,
    #[arg(long)]
    steps: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainVocoderArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    steps: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EmbedArgs {
    #[arg(long)]
    encoder: Option<PathBuf>,
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    /// JSON output; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CloneArgs {
    /// Reference recording of the target voice (at least 1.6 s).
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    text: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    encoder: Option<PathBuf>,
    #[arg(long)]
    synth: Option<PathBuf>,
    #[arg(long)]
    vocoder: Option<PathBuf>,
    /// Also write the attention alignment (ALGN matrix file).
    #[arg(long)]
    alignment: Option<PathBuf>,
    #[arg(long, default_value = "sample", value_parser = parse_mode)]
    mode: GenerationMode,
}

#[derive(Debug, Args)]
struct EvalEerArgs {
    /// JSON-lines trial scores (`pair_id`, `label`, `score`).
    #[arg(long, conflicts_with_all = ["manifest", "encoder"], required_unless_present = "manifest")]
    scores: Option<PathBuf>,
    /// Score every chunk pair of this manifest with the encoder.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    encoder: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalSimArgs {
    /// JSON lines of `{"speaker_id", "original", "cloned"}`; relative
    /// paths resolve against the file's directory.
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    encoder: Option<PathBuf>,
    /// Write a comparison bundle per pair under this directory.
    #[arg(long)]
    bundle_dir: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ProjectArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    encoder: Option<PathBuf>,
    /// `pca` or `neighbor-embed`.
    #[arg(long, default_value = "neighbor-embed", value_parser = parse_method)]
    method: ProjectionMethod,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Scatter plot of the projection.
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SnrArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ServeMosArgs {
    /// JSON lines of clip pairs.
    #[arg(long)]
    study: PathBuf,
    /// Directory holding the rating log and its snapshot.
    #[arg(long)]
    ratings: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Built UI assets served at `/`.
    #[arg(long)]
    static_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    snapshot_every: usize,
}

fn parse_kind(s: &str) -> Result<ManifestKind, String> {
    s.parse().map_err(|e: swar_core::Error| e.to_string())
}

fn parse_mode(s: &str) -> Result<GenerationMode, String> {
    s.parse().map_err(|e: swar_core::Error| e.to_string())
}

fn parse_method(s: &str) -> Result<ProjectionMethod, String> {
    s.parse().map_err(|e: swar_core::Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests print to stdout and succeed.
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_target(false)
        .with_ansi(std::io::stderr().is_terminal())
        .init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config = PipelineConfig::resolve(cli.config.as_deref())?;
    if cli.config.is_none() && std::env::var_os(CONFIG_ENV).is_none() {
        tracing::debug!("no config file given; using built-in defaults");
    }
    let workers = usize::from(cli.workers);
    let ctx = commands::Context { config, workers };
    match cli.command {
        Command::Preprocess(a) => commands::preprocess(&ctx, &a.input, &a.output, a.kind, a.strict, a.max_seconds),
        Command::Normalize => commands::normalize(std::io::stdin().lock(), std::io::stdout().lock()),
        Command::TrainEncoder(a) => commands::train_encoder(
            &ctx,
            &a.manifest,
            commands::Holdout::from_flags(a.holdout, a.holdout_speakers.unwrap_or(ctx.config.encoder.holdout_speakers)),
            a.steps,
            a.out,
            a.metrics,
        ),
        Command::TrainSynth(a) => commands::train_synth(&ctx, &a.manifest, a.encoder, a.steps, a.out, a.metrics),
        Command::TrainVocoder(a) => commands::train_vocoder(&ctx, &a.manifest, a.steps, a.out, a.metrics),
        Command::Embed(a) => commands::embed(&ctx, a.encoder, &a.input, a.out),
        Command::Clone(a) => commands::clone_voice(
            &ctx,
            &commands::CloneRequest {
                reference: a.reference,
                text: a.text,
                out: a.out,
                encoder: a.encoder,
                synth: a.synth,
                vocoder: a.vocoder,
                alignment: a.alignment,
                mode: a.mode,
            },
        ),
        Command::EvalEer(a) => commands::eval_eer(&ctx, a.scores, a.manifest, a.encoder, a.out),
        Command::EvalSim(a) => commands::eval_sim(&ctx, &a.pairs, a.encoder, a.bundle_dir, a.out),
        Command::Project(a) => commands::project(&ctx, &a.manifest, a.encoder, a.method, a.out, a.svg),
        Command::Snr(a) => commands::snr(&ctx, &a.manifest, a.out),
        Command::Stats(a) => commands::stats(&a.manifest, a.out),
        Command::ServeMos(a) => commands::serve_mos(&ctx, &a.study, &a.ratings, a.addr, a.static_dir, a.snapshot_every),
    }
}
