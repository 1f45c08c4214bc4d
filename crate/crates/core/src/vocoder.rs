//! Autoregressive µ-law vocoder: a residual convolution stack over mel
//! frames, a learned per-hop upsampler, and a GRU that predicts the next
//! sample class from the previous one and the upsampled conditioning.

use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1};
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{AudioClip, MelSpectrogram};
use crate::nn::{config_block, parse_config_block, Adam, Checkpoint, Graph, GruRecurrence, Linear, ParamId, ParamStore, Var};
use crate::{Error, Result};

pub const VOCR_MAGIC: [u8; 4] = *b"VOCR";
const KERNEL: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VocoderConfig {
    pub hop_length: usize,
    pub gru_size: usize,
    pub fc_size: usize,
    pub conditioning_channels: usize,
    pub residual_blocks: usize,
    pub mu_classes: usize,
    pub sample_rate_hz: u32,
    pub n_mels: usize,
    pub learning_rate: f64,
    pub grad_clip_norm: f64,
    pub crop_samples: usize,
    /// Training shifts each previous-sample input class by a uniform
    /// offset in `-input_jitter..=input_jitter`.
    pub input_jitter: usize,
    /// Mel inputs enter as `(x + mel_shift) / mel_scale`.
    pub mel_shift: f64,
    pub mel_scale: f64,
}

impl Default for VocoderConfig {
    fn default() -> Self {
        Self {
            hop_length: 200,
            gru_size: 128,
            fc_size: 128,
            conditioning_channels: 64,
            residual_blocks: 3,
            mu_classes: 256,
            sample_rate_hz: 22050,
            n_mels: 80,
            learning_rate: 1e-3,
            grad_clip_norm: 1.0,
            crop_samples: 2400,
            input_jitter: 0,
            mel_shift: 4.0,
            mel_scale: 4.0,
        }
    }
}

impl VocoderConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            self.hop_length,
            self.gru_size,
            self.fc_size,
            self.conditioning_channels,
            self.n_mels,
            self.crop_samples,
        ];
        if sizes.contains(&0) || self.sample_rate_hz == 0 {
            return Err(Error::Config("vocoder sizes must be positive".into()));
        }
        if self.mu_classes < 2 || !self.mu_classes.is_power_of_two() {
            return Err(Error::Config(format!("mu_classes must be a power of two, got {}", self.mu_classes)));
        }
        if !(self.learning_rate > 0.0 && self.grad_clip_norm > 0.0 && self.mel_scale > 0.0) {
            return Err(Error::Config("vocoder learning rate, clip norm and mel scale must be positive".into()));
        }
        Ok(())
    }

    /// Frames on either side of a frame that influence its conditioning.
    pub fn receptive_field_frames(&self) -> usize {
        (KERNEL / 2) * (1 + self.residual_blocks)
    }
}

fn mu(mu_classes: usize) -> f64 {
    (mu_classes - 1) as f64
}

/// µ-law compress and quantize `x` in `[-1, 1]` to one of `mu_classes` bins.
pub fn mu_encode(x: f64, mu_classes: usize) -> Result<usize> {
    if !(x.abs() <= 1.0) {
        return Err(Error::Contract(format!("µ-law input {x} outside [-1, 1]")));
    }
    let m = mu(mu_classes);
    let y = x.signum() * (1.0 + m * x.abs()).ln() / (1.0 + m).ln();
    Ok((((y + 1.0) / 2.0 * m) + 0.5).floor().min(m) as usize)
}

/// Inverse of [`mu_encode`]: the expansion of the bin's companded centre.
pub fn mu_decode(class: usize, mu_classes: usize) -> Result<f64> {
    if class >= mu_classes {
        return Err(Error::Contract(format!("µ-law class {class} outside 0..{mu_classes}")));
    }
    let m = mu(mu_classes);
    let y = 2.0 * class as f64 / m - 1.0;
    Ok(y.signum() * ((1.0 + m).powf(y.abs()) - 1.0) / m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenerationMode {
    Argmax,
    Sample,
}

impl std::str::FromStr for GenerationMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "argmax" => Ok(Self::Argmax),
            "sample" => Ok(Self::Sample),
            other => Err(Error::Config(format!("unknown generation mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
struct ResBlock {
    conv: Linear,
    mix: Linear,
}

#[derive(Debug, Clone)]
pub struct VocoderParams {
    pub config: VocoderConfig,
    pub store: ParamStore,
    conv_in: Linear,
    blocks: Vec<ResBlock>,
    position: ParamId,
    embed: ParamId,
    cond_proj: Linear,
    gru: GruRecurrence,
    fc1: Linear,
    fc2: Linear,
}

impl VocoderParams {
    pub fn init(config: &VocoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let (c, g) = (config.conditioning_channels, config.gru_size);
        let conv_in = Linear::new(&mut s, "conv_in", KERNEL * config.n_mels, c, &mut rng);
        let blocks = (0..config.residual_blocks)
            .map(|i| ResBlock {
                conv: Linear::new(&mut s, &format!("res{i}.conv"), KERNEL * c, c, &mut rng),
                mix: Linear::new(&mut s, &format!("res{i}.mix"), c, c, &mut rng),
            })
            .collect();
        let position = s.add_uniform("upsample.position", config.hop_length, c, c, &mut rng);
        let embed = s.add_uniform("embed", config.mu_classes, 3 * g, g, &mut rng);
        let cond_proj = Linear::new(&mut s, "cond_proj", c, 3 * g, &mut rng);
        let gru = GruRecurrence::new(&mut s, "gru", g, &mut rng);
        let fc1 = Linear::new(&mut s, "fc1", g + c, config.fc_size, &mut rng);
        let fc2 = Linear::new(&mut s, "fc2", config.fc_size, config.mu_classes, &mut rng);
        // Near-zero logits at initialization give a uniform class posterior.
        s.get_mut(fc2.w).mapv_inplace(|w| w * 1e-3);
        s.get_mut(fc2.b).fill(0.0);
        Ok(Self {
            config: config.clone(),
            store: s,
            conv_in,
            blocks,
            position,
            embed,
            cond_proj,
            gru,
            fc1,
            fc2,
        })
    }

    fn bind(config: VocoderConfig, store: ParamStore) -> Result<Self> {
        let missing = |n: &str| Error::Format(format!("vocoder checkpoint lacks parameter {n}"));
        let linear = |n: &str| Linear::bind(&store, n).ok_or_else(|| missing(n));
        let blocks = (0..config.residual_blocks)
            .map(|i| {
                Ok(ResBlock {
                    conv: linear(&format!("res{i}.conv"))?,
                    mix: linear(&format!("res{i}.mix"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let p = Self {
            conv_in: linear("conv_in")?,
            blocks,
            position: store.id("upsample.position").ok_or_else(|| missing("upsample.position"))?,
            embed: store.id("embed").ok_or_else(|| missing("embed"))?,
            cond_proj: linear("cond_proj")?,
            gru: GruRecurrence::bind(&store, "gru").ok_or_else(|| missing("gru"))?,
            fc1: linear("fc1")?,
            fc2: linear("fc2")?,
            config,
            store,
        };
        let c = &p.config;
        if p.store.get(p.position).dim() != (c.hop_length, c.conditioning_channels)
            || p.store.get(p.embed).dim() != (c.mu_classes, 3 * c.gru_size)
            || p.conv_in.in_dim != KERNEL * c.n_mels
            || p.fc2.out_dim != c.mu_classes
        {
            return Err(Error::Format("vocoder checkpoint shapes disagree with its config".into()));
        }
        Ok(p)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint::new(VOCR_MAGIC, config_block(&self.config)?, self.store.clone()))
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        if ck.magic != VOCR_MAGIC {
            return Err(Error::Format("not a vocoder checkpoint".into()));
        }
        let config: VocoderConfig = parse_config_block(&ck.config)?;
        config.validate()?;
        Self::bind(config, ck.params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(VOCR_MAGIC, path)?)
    }

    fn check_mel(&self, mel: &Array2<f64>) -> Result<()> {
        if mel.ncols() != self.config.n_mels {
            return Err(Error::Contract(format!(
                "mel has {} channels, vocoder expects {}",
                mel.ncols(),
                self.config.n_mels
            )));
        }
        if mel.nrows() == 0 {
            return Err(Error::Contract("mel has no frames".into()));
        }
        Ok(())
    }

    /// Frame-rate conditioning, `frames x conditioning_channels`.
    fn frame_graph(&self, g: &mut Graph, mel: &Array2<f64>) -> Var {
        let c = &self.config;
        let x = g.constant(mel.mapv(|v| (v + c.mel_shift) / c.mel_scale));
        let patches = g.unfold(x, KERNEL);
        let h = self.conv_in.forward(g, patches);
        let mut h = g.tanh(h);
        for b in &self.blocks {
            let p = g.unfold(h, KERNEL);
            let y = b.conv.forward(g, p);
            let y = g.relu(y);
            let y = b.mix.forward(g, y);
            h = g.add(h, y);
        }
        h
    }

    /// Sample-rate conditioning, `(frames * hop) x conditioning_channels`.
    pub fn conditioning_graph(&self, g: &mut Graph, mel: &Array2<f64>) -> Var {
        let frames = self.frame_graph(g, mel);
        let n = g.value(frames).nrows();
        let held = g.repeat_rows(frames, self.config.hop_length);
        let pos = g.param(self.position);
        let pos = g.tile_rows(pos, n);
        g.add(held, pos)
    }

    /// Upsampled conditioning; exactly `frames * hop_length` rows.
    pub fn upsample_mel(&self, mel: &MelSpectrogram) -> Result<Array2<f64>> {
        self.check_mel(&mel.frames)?;
        let mut g = Graph::new(&self.store);
        let c = self.conditioning_graph(&mut g, &mel.frames);
        let out = g.value(c).clone();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFault("non-finite vocoder conditioning".into()));
        }
        Ok(out)
    }

    /// Class logits for samples `start..start + inputs.len()` with the GRU
    /// started from zero at `start`; `inputs[k]` is the class fed before
    /// sample `start + k`.
    pub fn logits_graph(&self, g: &mut Graph, cond: Var, inputs: &[usize], start: usize) -> Var {
        let len = inputs.len();
        let cond = g.slice_rows(cond, start, start + len);
        let table = g.param(self.embed);
        let emb = g.gather_rows(table, inputs);
        let proj = self.cond_proj.forward(g, cond);
        let xg = g.add(emb, proj);
        let mut h = g.constant(Array2::zeros((1, self.config.gru_size)));
        let mut hs = Vec::with_capacity(len);
        for t in 0..len {
            let x = g.row(xg, t);
            h = self.gru.step(g, x, h);
            hs.push(h);
        }
        let hs = g.concat_rows(&hs);
        let joint = g.concat_cols(&[hs, cond]);
        let a = self.fc1.forward(g, joint);
        let a = g.relu(a);
        self.fc2.forward(g, a)
    }

    /// Teacher-forcing inputs for `classes[start..start + len]`: each
    /// sample's predecessor, with silence before the first sample.
    pub fn teacher_inputs(&self, classes: &[usize], start: usize, len: usize) -> Vec<usize> {
        let silence = self.config.mu_classes / 2;
        (start..start + len)
            .map(|i| if i == 0 { silence } else { classes[i - 1] })
            .collect()
    }

    /// Mean next-sample cross-entropy over `classes[start..start + len]`
    /// given the fed `inputs`.
    pub fn crop_loss_graph(&self, g: &mut Graph, cond: Var, inputs: &[usize], classes: &[usize], start: usize) -> Var {
        let logits = self.logits_graph(g, cond, inputs, start);
        g.softmax_cross_entropy(logits, &classes[start..start + inputs.len()])
    }

    /// Autoregressive generation; output length is `frames * hop_length`.
    pub fn generate(&self, mel: &MelSpectrogram, seed: u64, mode: GenerationMode) -> Result<AudioClip> {
        let cond = self.upsample_mel(mel)?;
        let classes = self.generate_classes(&cond, seed, mode)?;
        let samples = classes
            .iter()
            .map(|&c| mu_decode(c, self.config.mu_classes).map(|x| x as f32))
            .collect::<Result<Vec<_>>>()?;
        Ok(AudioClip::new(samples, self.config.sample_rate_hz, "vocoder"))
    }

    fn generate_classes(&self, cond: &Array2<f64>, seed: u64, mode: GenerationMode) -> Result<Vec<usize>> {
        let g = self.config.gru_size;
        let st = &self.store;
        let cond_x = cond.dot(st.get(self.cond_proj.w)) + st.get(self.cond_proj.b);
        let embed = st.get(self.embed);
        let w_hh = st.get(self.gru.w_hh);
        let b_hh = st.get(self.gru.b_hh).row(0).to_owned();
        let (w1, b1) = (st.get(self.fc1.w), st.get(self.fc1.b).row(0).to_owned());
        let (w1h, w1c) = (w1.slice(s![..g, ..]), w1.slice(s![g.., ..]));
        let (w2, b2) = (st.get(self.fc2.w), st.get(self.fc2.b).row(0).to_owned());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut h = Array1::<f64>::zeros(g);
        let mut prev = self.config.mu_classes / 2;
        let mut out = Vec::with_capacity(cond.nrows());
        for t in 0..cond.nrows() {
            let x = &embed.row(prev) + &cond_x.row(t);
            let hg = h.dot(w_hh) + &b_hh;
            h = gru_update(x.view(), hg.view(), h.view());
            let a = (h.dot(&w1h) + cond.row(t).dot(&w1c) + &b1).mapv(|v| v.max(0.0));
            let logits = a.dot(w2) + &b2;
            if logits.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericalFault(format!("non-finite vocoder logits at sample {t}")));
            }
            prev = match mode {
                GenerationMode::Argmax => argmax(logits.view()),
                GenerationMode::Sample => {
                    let m = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                    let w: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
                    WeightedIndex::new(&w)
                        .map_err(|e| Error::NumericalFault(format!("vocoder class distribution: {e}")))?
                        .sample(&mut rng)
                }
            };
            out.push(prev);
        }
        Ok(out)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn gru_update(x: ArrayView1<f64>, hg: ArrayView1<f64>, h: ArrayView1<f64>) -> Array1<f64> {
    let n = h.len();
    Array1::from_shape_fn(n, |j| {
        let r = sigmoid(x[j] + hg[j]);
        let z = sigmoid(x[n + j] + hg[n + j]);
        let cand = (x[2 * n + j] + r * hg[2 * n + j]).tanh();
        (1.0 - z) * cand + z * h[j]
    })
}

fn argmax(v: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// One aligned training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct VocoderExample {
    pub id: String,
    pub mel: Array2<f64>,
    /// Target classes, exactly `mel.nrows() * hop` of them.
    pub classes: Vec<usize>,
}

impl VocoderExample {
    /// Pair a mel with its audio. Centred framing yields one frame more than
    /// there are whole hops; the surplus frame and the incomplete trailing
    /// hop of audio are dropped. Any other mismatch is an alignment error.
    pub fn new(id: impl Into<String>, mel: &Array2<f64>, audio: &[f32], cfg: &VocoderConfig) -> Result<Self> {
        let id = id.into();
        let whole = audio.len() / cfg.hop_length;
        let frames = mel.nrows();
        if frames.abs_diff(whole) > 1 || whole == 0 || frames == 0 {
            return Err(Error::Alignment(format!(
                "{id}: {frames} mel frames do not match {} samples at hop {}",
                audio.len(),
                cfg.hop_length
            )));
        }
        if mel.ncols() != cfg.n_mels {
            return Err(Error::Alignment(format!("{id}: mel has {} channels, expected {}", mel.ncols(), cfg.n_mels)));
        }
        let keep = frames.min(whole);
        let classes = audio[..keep * cfg.hop_length]
            .iter()
            .map(|&x| mu_encode((x as f64).clamp(-1.0, 1.0), cfg.mu_classes))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            id,
            mel: mel.slice(s![..keep, ..]).to_owned(),
            classes,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocoderMetrics {
    pub step: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct VocoderTrainOptions {
    pub steps: usize,
    pub seed: u64,
}

/// Teacher-forced cross-entropy on one random crop per step.
pub fn train_vocoder(
    config: &VocoderConfig,
    examples: &[VocoderExample],
    options: VocoderTrainOptions,
    mut on_metrics: impl FnMut(&VocoderMetrics),
) -> Result<(VocoderParams, Vec<VocoderMetrics>)> {
    if examples.is_empty() {
        return Err(Error::Manifest("vocoder training needs at least one example".into()));
    }
    for ex in examples {
        if ex.classes.len() != ex.mel.nrows() * config.hop_length || ex.mel.ncols() != config.n_mels {
            return Err(Error::Alignment(format!("{}: audio and mel are not aligned", ex.id)));
        }
    }
    let mut params = VocoderParams::init(config, options.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    rng.set_stream(3);
    let mut adam = Adam::new(config.learning_rate);
    let mut log = Vec::with_capacity(options.steps);
    for step in 0..options.steps {
        let ex = &examples[rng.random_range(0..examples.len())];
        let n = ex.classes.len();
        // Windows may hang off either end and are clipped there, so every
        // sample is covered equally often, the first and last included.
        let width = config.crop_samples.min(n);
        let end = rng.random_range(1..n + width);
        let (start, end) = (end.saturating_sub(width), end.min(n));
        let mut inputs = params.teacher_inputs(&ex.classes, start, end - start);
        if config.input_jitter > 0 {
            let j = config.input_jitter as i64;
            let top = config.mu_classes as i64 - 1;
            for c in &mut inputs {
                *c = (*c as i64 + rng.random_range(-j..=j)).clamp(0, top) as usize;
            }
        }
        let (mut grads, loss) = {
            let mut g = Graph::new(&params.store);
            let cond = params.conditioning_graph(&mut g, &ex.mel);
            let loss = params.crop_loss_graph(&mut g, cond, &inputs, &ex.classes, start);
            let value = g.scalar(loss);
            if !value.is_finite() {
                return Err(Error::NumericalFault(format!("vocoder loss is {value} at step {step}")));
            }
            (g.backward(loss), value)
        };
        grads.clip_norm(config.grad_clip_norm);
        if !grads.all_finite() {
            return Err(Error::NumericalFault(format!("non-finite vocoder gradient at step {step}")));
        }
        adam.step(&mut params.store, &grads);
        let record = VocoderMetrics { step, loss };
        on_metrics(&record);
        log.push(record);
    }
    Ok((params, log))
}

#[cfg(test)]
mod tests;
