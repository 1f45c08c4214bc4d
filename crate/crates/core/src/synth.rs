//! Speaker-conditioned attention sequence-to-sequence mel synthesizer.
//!
//! Characters are embedded and read by a bidirectional LSTM. The speaker
//! embedding is appended to every encoder state. Each decoder step attends
//! over those conditioned states with additive content attention queried
//! by the previous decoder state, feeds the previous mel frame through a
//! two-layer prenet, advances an LSTM and emits one mel frame plus a stop
//! gate.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::ManifestEntry;
use crate::dsp::{
    decode_matrix, encode_matrix, load_wav, mel_spectrogram, resample, DspConfig, EncoderFrontendConfig, MelFrontend,
    MelSpectrogram, ALGN_MAGIC, MELS_VERSION,
};
use crate::encoder::{EncoderParams, SpeakerEmbedding};
use crate::nn::{config_block, parse_config_block, Adam, Checkpoint, Graph, Linear, Lstm, ParamId, ParamStore, Var};
use crate::textnorm::CharVocabulary;
use crate::{Error, Result};

pub const SYNT_MAGIC: [u8; 4] = *b"SYNT";
const VOCAB_KEY: &str = "vocab";
/// Prenet mask seed used by `infer`, `decode_step` and `teacher_forced`.
pub const INFERENCE_DROPOUT_SEED: u64 = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub char_embedding_dim: usize,
    pub encoder_dim: usize,
    pub decoder_dim: usize,
    pub attention_dim: usize,
    pub prenet_dim: usize,
    /// Prenet dropout rate, applied in training and inference alike.
    pub prenet_dropout: f64,
    /// Width of the window over previous and cumulative attention that
    /// feeds the attention energies. Must be odd.
    pub location_kernel: usize,
    pub mel_channels: usize,
    pub speaker_dim: usize,
    pub max_decoder_steps: usize,
    pub gate_threshold: f64,
    pub teacher_forcing: bool,
    pub learning_rate: f64,
    pub grad_clip_norm: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            char_embedding_dim: 128,
            encoder_dim: 128,
            decoder_dim: 256,
            attention_dim: 64,
            prenet_dim: 64,
            prenet_dropout: 0.5,
            location_kernel: 15,
            mel_channels: 80,
            speaker_dim: 256,
            max_decoder_steps: 2000,
            gate_threshold: 0.5,
            teacher_forcing: true,
            learning_rate: 1e-3,
            grad_clip_norm: 1.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            self.char_embedding_dim,
            self.decoder_dim,
            self.attention_dim,
            self.prenet_dim,
            self.location_kernel,
            self.mel_channels,
            self.speaker_dim,
            self.max_decoder_steps,
        ];
        if sizes.contains(&0) {
            return Err(Error::Config("synthesizer sizes must be positive".into()));
        }
        if self.encoder_dim < 2 || self.encoder_dim % 2 != 0 {
            return Err(Error::Config("synthesizer encoder_dim must be even (two directions)".into()));
        }
        if self.location_kernel % 2 == 0 {
            return Err(Error::Config("location_kernel must be odd".into()));
        }
        if !(0.0..1.0).contains(&self.prenet_dropout) {
            return Err(Error::Config("prenet_dropout must lie in [0, 1)".into()));
        }
        if !(self.gate_threshold > 0.0 && self.gate_threshold < 1.0) {
            return Err(Error::Config("gate_threshold must lie in (0, 1)".into()));
        }
        if !(self.learning_rate > 0.0 && self.grad_clip_norm > 0.0) {
            return Err(Error::Config("synthesizer learning rate and clip norm must be positive".into()));
        }
        Ok(())
    }

    pub fn conditioned_dim(&self) -> usize {
        self.encoder_dim + self.speaker_dim
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthInput {
    pub char_ids: Vec<usize>,
    pub speaker: SpeakerEmbedding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub mel: MelSpectrogram,
    /// Stop probabilities, one per frame.
    pub gate: Vec<f64>,
    /// Decoder steps x encoder steps; every row is a distribution.
    pub alignment: Array2<f64>,
    /// Decoding hit `max_decoder_steps` before the gate fired.
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    pub h: Array2<f64>,
    pub c: Array2<f64>,
    /// Previous attention row, `1 x chars`.
    pub attention: Array2<f64>,
    /// Sum of all previous attention rows, `1 x chars`.
    pub cumulative: Array2<f64>,
    /// Index of the next frame.
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub mel_frame: Vec<f64>,
    pub gate: f64,
    pub attention: Vec<f64>,
    pub state: DecoderState,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    pub mel: f64,
    pub gate: f64,
}

#[derive(Debug, Clone)]
pub struct SynthParams {
    pub config: SynthConfig,
    pub vocab: CharVocabulary,
    pub store: ParamStore,
    embedding: ParamId,
    enc_fwd: Lstm,
    enc_bwd: Lstm,
    attn_key: ParamId,
    attn_query: ParamId,
    attn_v: ParamId,
    attn_loc: ParamId,
    prenet1: Linear,
    prenet2: Linear,
    decoder: Lstm,
    mel_out: Linear,
    gate_out: Linear,
}

/// Graph nodes of one teacher-forced pass.
#[derive(Debug, Clone, Copy)]
pub struct TeacherForced {
    pub total: Var,
    pub mel_loss: Var,
    pub gate_loss: Var,
    /// `frames x mel_channels`
    pub mel: Var,
    /// `frames x 1`
    pub gate_logits: Var,
    /// `frames x chars`
    pub alignment: Var,
}

struct StepVars {
    mel: Var,
    gate_logit: Var,
    alpha: Var,
    h: Var,
    c: Var,
    cumulative: Var,
}

impl SynthParams {
    pub fn init(config: &SynthConfig, vocab: CharVocabulary, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let cond = config.conditioned_dim();
        let half = config.encoder_dim / 2;
        let embedding = s.add_uniform("embed", vocab.len(), config.char_embedding_dim, 3, &mut rng);
        let enc_fwd = Lstm::new(&mut s, "enc_fwd", config.char_embedding_dim, half, &mut rng);
        let enc_bwd = Lstm::new(&mut s, "enc_bwd", config.char_embedding_dim, half, &mut rng);
        let attn_key = s.add_uniform("attn.key", cond, config.attention_dim, cond, &mut rng);
        let attn_query = s.add_uniform("attn.query", config.decoder_dim, config.attention_dim, config.decoder_dim, &mut rng);
        let attn_v = s.add_uniform("attn.v", config.attention_dim, 1, config.attention_dim, &mut rng);
        let loc_in = 2 * config.location_kernel;
        let attn_loc = s.add_uniform("attn.loc", loc_in, config.attention_dim, loc_in, &mut rng);
        let prenet1 = Linear::new(&mut s, "prenet1", config.mel_channels, config.prenet_dim, &mut rng);
        let prenet2 = Linear::new(&mut s, "prenet2", config.prenet_dim, config.prenet_dim, &mut rng);
        let decoder = Lstm::new(&mut s, "decoder", config.prenet_dim + cond, config.decoder_dim, &mut rng);
        let mel_out = Linear::new(&mut s, "mel_out", config.decoder_dim + cond, config.mel_channels, &mut rng);
        let gate_out = Linear::new(&mut s, "gate_out", config.decoder_dim + cond, 1, &mut rng);
        Ok(Self {
            config: config.clone(),
            vocab,
            store: s,
            embedding,
            enc_fwd,
            enc_bwd,
            attn_key,
            attn_query,
            attn_v,
            attn_loc,
            prenet1,
            prenet2,
            decoder,
            mel_out,
            gate_out,
        })
    }

    fn bind(config: SynthConfig, vocab: CharVocabulary, store: ParamStore) -> Result<Self> {
        let missing = |n: &str| Error::Format(format!("synthesizer checkpoint lacks parameter {n}"));
        let id = |n: &str| store.id(n).ok_or_else(|| missing(n));
        let lstm = |n: &str| Lstm::bind(&store, n).ok_or_else(|| missing(n));
        let linear = |n: &str| Linear::bind(&store, n).ok_or_else(|| missing(n));
        let p = Self {
            embedding: id("embed")?,
            enc_fwd: lstm("enc_fwd")?,
            enc_bwd: lstm("enc_bwd")?,
            attn_key: id("attn.key")?,
            attn_query: id("attn.query")?,
            attn_v: id("attn.v")?,
            attn_loc: id("attn.loc")?,
            prenet1: linear("prenet1")?,
            prenet2: linear("prenet2")?,
            decoder: lstm("decoder")?,
            mel_out: linear("mel_out")?,
            gate_out: linear("gate_out")?,
            config,
            vocab,
            store,
        };
        if p.store.get(p.embedding).dim() != (p.vocab.len(), p.config.char_embedding_dim)
            || p.mel_out.out_dim != p.config.mel_channels
            || p.decoder.hidden != p.config.decoder_dim
        {
            return Err(Error::Format("synthesizer checkpoint shapes disagree with its config".into()));
        }
        Ok(p)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut block: BTreeMap<String, String> = config_block(&self.config)?;
        block.insert(VOCAB_KEY.into(), self.vocab.to_file_string());
        Ok(Checkpoint::new(SYNT_MAGIC, block, self.store.clone()))
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        if ck.magic != SYNT_MAGIC {
            return Err(Error::Format("not a synthesizer checkpoint".into()));
        }
        let config: SynthConfig = parse_config_block(&ck.config)?;
        config.validate()?;
        let vocab = CharVocabulary::from_file_string(ck.config_value(VOCAB_KEY)?)?;
        Self::bind(config, vocab, ck.params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(SYNT_MAGIC, path)?)
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::Contract("character sequence is empty".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.vocab.len()) {
            return Err(Error::Contract(format!(
                "character id {bad} outside a vocabulary of {}",
                self.vocab.len()
            )));
        }
        Ok(())
    }

    fn check_speaker(&self, speaker: &SpeakerEmbedding) -> Result<()> {
        if speaker.vector.len() != self.config.speaker_dim {
            return Err(Error::Contract(format!(
                "speaker embedding has {} dimensions, synthesizer expects {}",
                speaker.vector.len(),
                self.config.speaker_dim
            )));
        }
        Ok(())
    }

    fn encode_graph(&self, g: &mut Graph, ids: &[usize]) -> Var {
        let table = g.param(self.embedding);
        let x = g.gather_rows(table, ids);
        let fwd = self.enc_fwd.run(g, x, 1, false);
        let bwd = self.enc_bwd.run(g, x, 1, true);
        let f = g.concat_rows(&fwd);
        let b = g.concat_rows(&bwd);
        g.concat_cols(&[f, b])
    }

    fn condition_graph(&self, g: &mut Graph, states: Var, speaker: &[f64]) -> Var {
        let t = g.value(states).nrows();
        let row = g.constant(Array2::from_shape_vec((1, speaker.len()), speaker.to_vec()).expect("row"));
        let tiled = g.tile_rows(row, t);
        g.concat_cols(&[states, tiled])
    }

    fn keys_graph(&self, g: &mut Graph, cond: Var) -> Var {
        let wk = g.param(self.attn_key);
        g.matmul(cond, wk)
    }

    /// Dropout masks of both prenet layers for frames `first..first + n`.
    /// Frame `t` always draws the same mask for a given seed.
    fn prenet_masks(&self, seed: u64, first: usize, n: usize) -> (Array2<f64>, Array2<f64>) {
        let p = self.config.prenet_dropout;
        let dim = self.config.prenet_dim;
        let keep = 1.0 / (1.0 - p);
        let mut m1 = Array2::zeros((n, dim));
        let mut m2 = Array2::zeros((n, dim));
        for r in 0..n {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((first + r) as u64);
            for m in [&mut m1, &mut m2] {
                for v in m.row_mut(r) {
                    *v = if rng.random::<f64>() < p { 0.0 } else { keep };
                }
            }
        }
        (m1, m2)
    }

    fn prenet_graph(&self, g: &mut Graph, frames: Var, seed: u64, first: usize) -> Var {
        let n = g.value(frames).nrows();
        let (m1, m2) = self.prenet_masks(seed, first, n);
        let a = self.prenet1.forward(g, frames);
        let a = g.relu(a);
        let a = if self.config.prenet_dropout > 0.0 {
            let m = g.constant(m1);
            g.mul(a, m)
        } else {
            a
        };
        let b = self.prenet2.forward(g, a);
        let b = g.relu(b);
        if self.config.prenet_dropout > 0.0 {
            let m = g.constant(m2);
            g.mul(b, m)
        } else {
            b
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn step_graph(
        &self,
        g: &mut Graph,
        keys: Var,
        cond: Var,
        h: Var,
        c: Var,
        prev_alpha: Var,
        cumulative: Var,
        prenet_out: Var,
    ) -> StepVars {
        let wq = g.param(self.attn_query);
        let v = g.param(self.attn_v);
        let wl = g.param(self.attn_loc);
        let q = g.matmul(h, wq);
        let both = g.concat_rows(&[prev_alpha, cumulative]);
        let both = g.transpose(both);
        let patches = g.unfold(both, self.config.location_kernel);
        let loc = g.matmul(patches, wl);
        let pre = g.add_row(keys, q);
        let pre = g.add(pre, loc);
        let e = g.tanh(pre);
        let scores = g.matmul(e, v);
        let scores = g.transpose(scores);
        let alpha = g.softmax_rows(scores);
        let ctx = g.matmul(alpha, cond);
        let x = g.concat_cols(&[prenet_out, ctx]);
        let (h, c) = self.decoder.step(g, x, h, c);
        let hc = g.concat_cols(&[h, ctx]);
        let mel = self.mel_out.forward(g, hc);
        let gate_logit = self.gate_out.forward(g, hc);
        let cumulative = g.add(cumulative, alpha);
        StepVars {
            mel,
            gate_logit,
            alpha,
            h,
            c,
            cumulative,
        }
    }

    /// Per-character encoder states, `len(ids) x encoder_dim`.
    pub fn encode_text(&self, ids: &[usize]) -> Result<Array2<f64>> {
        self.check_ids(ids)?;
        let mut g = Graph::new(&self.store);
        let s = self.encode_graph(&mut g, ids);
        Ok(g.value(s).clone())
    }

    pub fn initial_state(&self, chars: usize) -> DecoderState {
        DecoderState {
            h: Array2::zeros((1, self.config.decoder_dim)),
            c: Array2::zeros((1, self.config.decoder_dim)),
            attention: Array2::zeros((1, chars)),
            cumulative: Array2::zeros((1, chars)),
            step: 0,
        }
    }

    /// One decoder step outside of any training graph.
    pub fn decode_step(&self, state: &DecoderState, conditioned: &Array2<f64>, prev_frame: &[f64]) -> Result<StepOutput> {
        if prev_frame.len() != self.config.mel_channels {
            return Err(Error::Contract(format!(
                "previous frame has {} channels, expected {}",
                prev_frame.len(),
                self.config.mel_channels
            )));
        }
        if conditioned.ncols() != self.config.conditioned_dim() || conditioned.nrows() == 0 {
            return Err(Error::Contract("conditioned states have the wrong width".into()));
        }
        let chars = conditioned.nrows();
        if state.attention.dim() != (1, chars) || state.cumulative.dim() != (1, chars) {
            return Err(Error::Contract("decoder state was built for a different text length".into()));
        }
        let mut g = Graph::new(&self.store);
        let cond = g.constant(conditioned.clone());
        let keys = self.keys_graph(&mut g, cond);
        let h = g.constant(state.h.clone());
        let c = g.constant(state.c.clone());
        let prev = g.constant(Array2::from_shape_vec((1, prev_frame.len()), prev_frame.to_vec()).expect("row"));
        let a = g.constant(state.attention.clone());
        let cum = g.constant(state.cumulative.clone());
        let p = self.prenet_graph(&mut g, prev, INFERENCE_DROPOUT_SEED, state.step);
        let out = self.step_graph(&mut g, keys, cond, h, c, a, cum, p);
        let step = StepOutput {
            mel_frame: g.value(out.mel).row(0).to_vec(),
            gate: sigmoid(g.scalar(out.gate_logit)),
            attention: g.value(out.alpha).row(0).to_vec(),
            state: DecoderState {
                h: g.value(out.h).clone(),
                c: g.value(out.c).clone(),
                attention: g.value(out.alpha).clone(),
                cumulative: g.value(out.cumulative).clone(),
                step: state.step + 1,
            },
        };
        if step.mel_frame.iter().chain(&step.attention).any(|v| !v.is_finite()) || !step.gate.is_finite() {
            return Err(Error::NumericalFault("non-finite synthesizer output".into()));
        }
        Ok(step)
    }

    /// Teacher-forced forward pass on the graph. `dropout_seed` selects the
    /// prenet masks; inference uses `INFERENCE_DROPOUT_SEED`.
    pub fn teacher_forced_graph(
        &self,
        g: &mut Graph,
        ids: &[usize],
        speaker: &[f64],
        target: &Array2<f64>,
        dropout_seed: u64,
    ) -> Result<TeacherForced> {
        self.check_ids(ids)?;
        let (frames, channels) = target.dim();
        if frames == 0 || channels != self.config.mel_channels {
            return Err(Error::Contract(format!(
                "target mel must be frames x {}, got {frames} x {channels}",
                self.config.mel_channels
            )));
        }
        let states = self.encode_graph(g, ids);
        let cond = self.condition_graph(g, states, speaker);
        let keys = self.keys_graph(g, cond);
        let mut prev = Array2::zeros((frames, channels));
        if frames > 1 {
            prev.slice_mut(ndarray::s![1.., ..]).assign(&target.slice(ndarray::s![..frames - 1, ..]));
        }
        let prev = g.constant(prev);
        let prenet = self.prenet_graph(g, prev, dropout_seed, 0);
        let mut h = g.constant(Array2::zeros((1, self.config.decoder_dim)));
        let mut c = g.constant(Array2::zeros((1, self.config.decoder_dim)));
        let mut alpha = g.constant(Array2::zeros((1, ids.len())));
        let mut cum = alpha;
        let mut mels = Vec::with_capacity(frames);
        let mut gates = Vec::with_capacity(frames);
        let mut alphas = Vec::with_capacity(frames);
        for t in 0..frames {
            let p = g.row(prenet, t);
            let out = self.step_graph(g, keys, cond, h, c, alpha, cum, p);
            mels.push(out.mel);
            gates.push(out.gate_logit);
            alphas.push(out.alpha);
            h = out.h;
            c = out.c;
            alpha = out.alpha;
            cum = out.cumulative;
        }
        let mel = g.concat_rows(&mels);
        let gate = g.concat_rows(&gates);
        let alignment = g.concat_rows(&alphas);
        let target_var = g.constant(target.clone());
        let mel_term = g.mse(mel, target_var);
        let gate_targets = Array2::from_shape_vec((frames, 1), gate_targets(frames)).expect("column");
        let gate_term = g.bce_with_logits(gate, gate_targets);
        let total = g.add(mel_term, gate_term);
        Ok(TeacherForced {
            total,
            mel_loss: mel_term,
            gate_loss: gate_term,
            mel,
            gate_logits: gate,
            alignment,
        })
    }

    /// Teacher-forced prediction for `input` against `target`.
    pub fn teacher_forced(&self, input: &SynthInput, target: &Array2<f64>) -> Result<SynthOutput> {
        self.check_speaker(&input.speaker)?;
        let mut g = Graph::new(&self.store);
        let tf = self.teacher_forced_graph(&mut g, &input.char_ids, &input.speaker.vector, target, INFERENCE_DROPOUT_SEED)?;
        Ok(SynthOutput {
            mel: MelSpectrogram {
                frames: g.value(tf.mel).clone(),
                config_ref: "synth".into(),
            },
            gate: g.value(tf.gate_logits).iter().map(|&x| sigmoid(x)).collect(),
            alignment: g.value(tf.alignment).clone(),
            truncated: false,
        })
    }

    /// Free-running decoding from the all-zero frame until the gate fires or
    /// `max_decoder_steps` frames have been produced.
    pub fn infer(&self, input: &SynthInput) -> Result<SynthOutput> {
        self.check_ids(&input.char_ids)?;
        self.check_speaker(&input.speaker)?;
        let mut g = Graph::new(&self.store);
        let states = self.encode_graph(&mut g, &input.char_ids);
        let cond = self.condition_graph(&mut g, states, &input.speaker.vector);
        let keys = self.keys_graph(&mut g, cond);
        let mut h = g.constant(Array2::zeros((1, self.config.decoder_dim)));
        let mut c = g.constant(Array2::zeros((1, self.config.decoder_dim)));
        let mut prev = g.constant(Array2::zeros((1, self.config.mel_channels)));
        let mut alpha = g.constant(Array2::zeros((1, input.char_ids.len())));
        let mut cum = alpha;
        let mut frames: Vec<Vec<f64>> = Vec::new();
        let mut gate = Vec::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut truncated = true;
        for t in 0..self.config.max_decoder_steps {
            let p = self.prenet_graph(&mut g, prev, INFERENCE_DROPOUT_SEED, t);
            let out = self.step_graph(&mut g, keys, cond, h, c, alpha, cum, p);
            let frame = g.value(out.mel).row(0).to_vec();
            let stop = sigmoid(g.scalar(out.gate_logit));
            if frame.iter().any(|v| !v.is_finite()) || !stop.is_finite() {
                return Err(Error::NumericalFault("non-finite synthesizer output".into()));
            }
            frames.push(frame);
            gate.push(stop);
            rows.push(g.value(out.alpha).row(0).to_vec());
            h = out.h;
            c = out.c;
            alpha = out.alpha;
            cum = out.cumulative;
            prev = out.mel;
            if stop > self.config.gate_threshold {
                truncated = false;
                break;
            }
        }
        let t_enc = input.char_ids.len();
        let mel = Array2::from_shape_fn((frames.len(), self.config.mel_channels), |(r, c)| frames[r][c]);
        let alignment = Array2::from_shape_fn((rows.len(), t_enc), |(r, c)| rows[r][c]);
        Ok(SynthOutput {
            mel: MelSpectrogram {
                frames: mel,
                config_ref: "synth".into(),
            },
            gate,
            alignment,
            truncated,
        })
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Append the same speaker vector to every encoder state row.
pub fn condition_on_speaker(states: &Array2<f64>, speaker: &SpeakerEmbedding) -> Array2<f64> {
    let (t, d) = states.dim();
    let s = speaker.vector.len();
    Array2::from_shape_fn((t, d + s), |(r, c)| if c < d { states[[r, c]] } else { speaker.vector[c - d] })
}

/// Stop-gate targets: 1 on the final frame, 0 elsewhere.
pub fn gate_targets(frames: usize) -> Vec<f64> {
    (0..frames).map(|t| if t + 1 == frames { 1.0 } else { 0.0 }).collect()
}

/// Mel mean squared error plus mean binary cross-entropy of the stop
/// probabilities (with `0 ln 0 = 0`).
pub fn synth_loss(pred: &SynthOutput, target_mel: &Array2<f64>, target_gate: &[f64]) -> Result<LossTerms> {
    let p = &pred.mel.frames;
    if p.dim() != target_mel.dim() || pred.gate.len() != target_gate.len() || p.nrows() != target_gate.len() {
        return Err(Error::Contract(format!(
            "prediction has {} frames, target {} frames and {} gate labels",
            p.nrows(),
            target_mel.nrows(),
            target_gate.len()
        )));
    }
    if p.is_empty() {
        return Err(Error::Contract("cannot score an empty prediction".into()));
    }
    let mel = (p - target_mel).mapv(|d| d * d).mean().expect("non-empty");
    let gate = pred
        .gate
        .iter()
        .zip(target_gate)
        .map(|(&q, &t)| {
            let q = q.clamp(0.0, 1.0);
            let pos = if t > 0.0 { -t * q.max(f64::MIN_POSITIVE).ln() } else { 0.0 };
            let neg = if t < 1.0 { -(1.0 - t) * (1.0 - q).max(f64::MIN_POSITIVE).ln() } else { 0.0 };
            pos + neg
        })
        .sum::<f64>()
        / target_gate.len() as f64;
    Ok(LossTerms {
        total: mel + gate,
        mel,
        gate,
    })
}

pub fn write_alignment(path: impl AsRef<Path>, alignment: &Array2<f64>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_matrix(ALGN_MAGIC, MELS_VERSION, alignment)).map_err(|e| Error::io_at(path, e))
}

pub fn read_alignment(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io_at(path, e))?;
    Ok(decode_matrix(ALGN_MAGIC, &bytes)?.1)
}

/// One teacher-forcing training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthExample {
    pub char_ids: Vec<usize>,
    pub speaker: Vec<f64>,
    pub mel: Array2<f64>,
}

/// Load audio, compute mel targets and speaker embeddings (once per
/// utterance), and encode transcripts.
pub fn prepare_examples(
    entries: &[ManifestEntry],
    encoder: &EncoderParams,
    dsp: &DspConfig,
    encoder_frontend: &EncoderFrontendConfig,
    vocab: &CharVocabulary,
) -> Result<Vec<SynthExample>> {
    let frontend = MelFrontend::synthesizer(dsp);
    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        let text = e
            .text
            .as_deref()
            .ok_or_else(|| Error::Manifest(format!("{}: no transcript", e.audio_path.display())))?;
        let clip = load_wav(&e.audio_path)?;
        let speaker = encoder.embed_utterance(&clip, encoder_frontend)?;
        let clip = resample(&clip, dsp.sampling_rate_hz);
        out.push(SynthExample {
            char_ids: vocab.encode_str(text)?,
            speaker: speaker.vector,
            mel: mel_spectrogram(&clip, &frontend)?.frames,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthMetrics {
    pub step: usize,
    pub loss: f64,
    pub mel_loss: f64,
    pub gate_loss: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct SynthTrainOptions {
    pub steps: usize,
    pub seed: u64,
}

/// Teacher-forced training, one utterance per step, Adam with global
/// gradient-norm clipping.
pub fn train_synth(
    config: &SynthConfig,
    vocab: CharVocabulary,
    examples: &[SynthExample],
    options: SynthTrainOptions,
    mut on_metrics: impl FnMut(&SynthMetrics),
) -> Result<(SynthParams, Vec<SynthMetrics>)> {
    if examples.is_empty() {
        return Err(Error::Manifest("synthesizer training needs at least one example".into()));
    }
    let mut params = SynthParams::init(config, vocab, options.seed)?;
    for ex in examples {
        params.check_ids(&ex.char_ids)?;
        if ex.speaker.len() != config.speaker_dim {
            return Err(Error::Contract("example speaker embedding has the wrong size".into()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    rng.set_stream(2);
    let mut adam = Adam::new(config.learning_rate);
    let mut log = Vec::with_capacity(options.steps);
    for step in 0..options.steps {
        let ex = &examples[rng.random_range(0..examples.len())];
        let (mut grads, record) = {
            let mut g = Graph::new(&params.store);
            let tf = params.teacher_forced_graph(&mut g, &ex.char_ids, &ex.speaker, &ex.mel, rng.random())?;
            let total = tf.total;
            let record = SynthMetrics {
                step,
                loss: g.scalar(total),
                mel_loss: g.scalar(tf.mel_loss),
                gate_loss: g.scalar(tf.gate_loss),
            };
            if !record.loss.is_finite() {
                return Err(Error::NumericalFault(format!("synthesizer loss is {} at step {step}", record.loss)));
            }
            (g.backward(total), record)
        };
        grads.clip_norm(config.grad_clip_norm);
        if !grads.all_finite() {
            return Err(Error::NumericalFault(format!("non-finite synthesizer gradient at step {step}")));
        }
        adam.step(&mut params.store, &grads);
        on_metrics(&record);
        log.push(record);
    }
    Ok((params, log))
}
