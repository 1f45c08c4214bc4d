//! d-vector speaker encoder: stacked LSTMs over a log-mel chunk, the final
//! hidden state of the top layer projected, rectified and L2-normalized.
//! Trained with the GE2E softmax loss.

use std::path::Path;

use ndarray::Array2;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::ManifestEntry;
use crate::dsp::{chunk_utterance, load_wav, mel_spectrogram, resample, AudioClip, EncoderFrontendConfig, MelFrontend, MelSpectrogram};
use crate::eval::{compute_eer, ScoreSet};
use crate::nn::{config_block, parse_config_block, Checkpoint, Graph, Linear, Lstm, ParamId, ParamStore, Sgd, Var};
use crate::{Error, Result};

pub const SPKE_MAGIC: [u8; 4] = *b"SPKE";
/// Lower bound kept on the GE2E scale after every update.
pub const MIN_GE2E_SCALE: f64 = 1e-4;
const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub lstm_layers: usize,
    pub hidden_size: usize,
    pub embedding_size: usize,
    pub speakers_per_batch: usize,
    pub utterances_per_speaker: usize,
    pub learning_rate: f64,
    pub n_mels: usize,
    pub grad_clip_norm: f64,
    pub ge2e_init_scale: f64,
    pub ge2e_init_offset: f64,
    /// Multiplier applied to the gradients of the GE2E scale and offset.
    pub ge2e_grad_factor: f64,
    /// Log-mel inputs enter the network as `(x - input_shift) / input_scale`.
    pub input_shift: f64,
    pub input_scale: f64,
    pub eval_every: usize,
    pub holdout_speakers: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            lstm_layers: 3,
            hidden_size: 256,
            embedding_size: 256,
            speakers_per_batch: 16,
            utterances_per_speaker: 10,
            learning_rate: 1e-5,
            n_mels: 40,
            grad_clip_norm: 3.0,
            ge2e_init_scale: 10.0,
            ge2e_init_offset: -5.0,
            ge2e_grad_factor: 0.5,
            input_shift: -4.0,
            input_scale: 4.0,
            eval_every: 100,
            holdout_speakers: 4,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [self.lstm_layers, self.hidden_size, self.embedding_size, self.n_mels];
        if sizes.contains(&0) {
            return Err(Error::Config("encoder sizes must be positive".into()));
        }
        if self.speakers_per_batch < 2 || self.utterances_per_speaker < 2 {
            return Err(Error::Config(
                "GE2E batches need at least 2 speakers and 2 utterances per speaker".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || !(self.grad_clip_norm > 0.0) || !(self.input_scale > 0.0) {
            return Err(Error::Config("encoder learning rate, clip norm and input scale must be positive".into()));
        }
        if !(self.ge2e_init_scale > 0.0) {
            return Err(Error::Config("GE2E scale must start positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerEmbedding {
    pub vector: Vec<f64>,
    pub speaker_id: String,
}

impl SpeakerEmbedding {
    pub fn norm(&self) -> f64 {
        self.vector.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub store: ParamStore,
    layers: Vec<Lstm>,
    proj: Linear,
    scale: ParamId,
    offset: ParamId,
}

impl EncoderParams {
    pub fn init(config: &EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut layers = Vec::with_capacity(config.lstm_layers);
        for l in 0..config.lstm_layers {
            let input = if l == 0 { config.n_mels } else { config.hidden_size };
            layers.push(Lstm::new(&mut store, &format!("lstm{l}"), input, config.hidden_size, &mut rng));
        }
        let proj = Linear::new(&mut store, "proj", config.hidden_size, config.embedding_size, &mut rng);
        let scale = store.add("ge2e.w", Array2::from_elem((1, 1), config.ge2e_init_scale));
        let offset = store.add("ge2e.b", Array2::from_elem((1, 1), config.ge2e_init_offset));
        Ok(Self {
            config: config.clone(),
            store,
            layers,
            proj,
            scale,
            offset,
        })
    }

    fn bind(config: EncoderConfig, store: ParamStore) -> Result<Self> {
        let missing = |n: &str| Error::Format(format!("encoder checkpoint lacks parameter {n}"));
        let mut layers = Vec::with_capacity(config.lstm_layers);
        for l in 0..config.lstm_layers {
            let name = format!("lstm{l}");
            layers.push(Lstm::bind(&store, &name).ok_or_else(|| missing(&name))?);
        }
        let proj = Linear::bind(&store, "proj").ok_or_else(|| missing("proj"))?;
        let scale = store.id("ge2e.w").ok_or_else(|| missing("ge2e.w"))?;
        let offset = store.id("ge2e.b").ok_or_else(|| missing("ge2e.b"))?;
        if layers[0].in_dim != config.n_mels || proj.out_dim != config.embedding_size {
            return Err(Error::Format("encoder checkpoint shapes disagree with its config".into()));
        }
        Ok(Self {
            config,
            store,
            layers,
            proj,
            scale,
            offset,
        })
    }

    pub fn ge2e_scale(&self) -> f64 {
        self.store.get(self.scale)[[0, 0]]
    }

    pub fn ge2e_offset(&self) -> f64 {
        self.store.get(self.offset)[[0, 0]]
    }

    pub fn set_ge2e(&mut self, w: f64, b: f64) {
        self.store.get_mut(self.scale)[[0, 0]] = w;
        self.store.get_mut(self.offset)[[0, 0]] = b;
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint::new(SPKE_MAGIC, config_block(&self.config)?, self.store.clone()))
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        if ck.magic != SPKE_MAGIC {
            return Err(Error::Format("not a speaker encoder checkpoint".into()));
        }
        let config: EncoderConfig = parse_config_block(&ck.config)?;
        config.validate()?;
        Self::bind(config, ck.params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(SPKE_MAGIC, path)?)
    }

    /// Unit-norm embeddings (rows) of equally long chunks, on the graph.
    pub fn forward(&self, g: &mut Graph, chunks: &[&Array2<f64>]) -> Result<Var> {
        let Some(first) = chunks.first() else {
            return Err(Error::Contract("no chunks to embed".into()));
        };
        let (frames, mels) = first.dim();
        if frames == 0 {
            return Err(Error::Contract("chunk has no frames".into()));
        }
        if mels != self.config.n_mels {
            return Err(Error::Contract(format!(
                "encoder expects {} mel channels, chunk has {mels}",
                self.config.n_mels
            )));
        }
        if chunks.iter().any(|c| c.dim() != (frames, mels)) {
            return Err(Error::Contract("chunks in one batch must share a shape".into()));
        }
        let n = chunks.len();
        let (shift, scale) = (self.config.input_shift, self.config.input_scale);
        let input = Array2::from_shape_fn((frames * n, mels), |(r, c)| (chunks[r % n][[r / n, c]] - shift) / scale);
        let mut x = g.constant(input);
        let mut top = x;
        for (l, layer) in self.layers.iter().enumerate() {
            let hs = layer.run(g, x, n, false);
            top = *hs.last().expect("at least one frame");
            if l + 1 < self.layers.len() {
                x = g.concat_rows(&hs);
            }
        }
        let p = self.proj.forward(g, top);
        let r = g.relu(p);
        Ok(g.normalize_rows(r, NORM_EPS))
    }

    /// Embeddings of many chunks, batched by shape.
    pub fn embed_frames(&self, chunks: &[Array2<f64>]) -> Result<Vec<Vec<f64>>> {
        const BATCH: usize = 64;
        let mut out = vec![Vec::new(); chunks.len()];
        let mut order: Vec<usize> = (0..chunks.len()).collect();
        order.sort_by_key(|&i| chunks[i].nrows());
        for group in order.chunk_by(|&a, &b| chunks[a].nrows() == chunks[b].nrows()) {
            for part in group.chunks(BATCH) {
                let refs: Vec<&Array2<f64>> = part.iter().map(|&i| &chunks[i]).collect();
                let mut g = Graph::new(&self.store);
                let e = self.forward(&mut g, &refs)?;
                let m = g.value(e);
                for (row, &i) in m.rows().into_iter().zip(part) {
                    let v = row.to_vec();
                    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if v.iter().any(|x| !x.is_finite()) {
                        return Err(Error::NumericalFault("non-finite speaker embedding".into()));
                    }
                    if norm < 0.5 {
                        return Err(Error::NumericalFault(
                            "speaker embedding collapsed to zero after rectification".into(),
                        ));
                    }
                    out[i] = v.iter().map(|x| x / norm).collect();
                }
            }
        }
        Ok(out)
    }

    pub fn embed_chunk(&self, chunk: &MelSpectrogram) -> Result<SpeakerEmbedding> {
        let v = self.embed_frames(std::slice::from_ref(&chunk.frames))?;
        Ok(SpeakerEmbedding {
            vector: v.into_iter().next().expect("one chunk"),
            speaker_id: String::new(),
        })
    }

    /// Resample to the encoder rate, cut overlapping chunks, embed each,
    /// average and renormalize.
    pub fn embed_utterance(&self, clip: &AudioClip, frontend: &EncoderFrontendConfig) -> Result<SpeakerEmbedding> {
        let chunks = utterance_chunks(clip, frontend)?;
        let vectors = self.embed_frames(&chunks)?;
        Ok(SpeakerEmbedding {
            vector: mean_direction(&vectors),
            speaker_id: String::new(),
        })
    }
}

/// Log-mel frames of every encoder chunk of `clip`.
pub fn utterance_chunks(clip: &AudioClip, frontend: &EncoderFrontendConfig) -> Result<Vec<Array2<f64>>> {
    let clip = resample(clip, frontend.sampling_rate_hz);
    if clip.samples.len() < frontend.chunk_samples() {
        return Err(Error::DegenerateInput(format!(
            "`{}` lasts {:.3} s; speaker embedding needs at least {} s",
            clip.source_id,
            clip.duration_s(),
            frontend.chunk_seconds
        )));
    }
    let mel = MelFrontend::encoder(frontend);
    chunk_utterance(&clip, frontend)?
        .iter()
        .map(|c| mel_spectrogram(c, &mel).map(|m| m.frames))
        .collect()
}

/// Mean of unit vectors, renormalized.
pub fn mean_direction(vectors: &[Vec<f64>]) -> Vec<f64> {
    let dim = vectors.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; dim];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    let norm = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        mean.iter_mut().for_each(|m| *m /= norm);
    }
    mean
}

/// GE2E softmax loss on the graph.
///
/// `e` holds `speakers * utterances` unit-norm rows, speaker-major. Each row
/// is scored against every speaker centroid with `w * cos + b`; against its
/// own speaker the centroid leaves the row itself out. Returns the mean
/// cross-entropy selecting the own speaker, and the `rows x speakers`
/// similarity matrix.
pub fn ge2e_graph(g: &mut Graph, e: Var, speakers: usize, utterances: usize, w: Var, b: Var) -> (Var, Var) {
    let n = speakers * utterances;
    let mut avg = Array2::zeros((speakers, n));
    let mut excl = Array2::zeros((n, n));
    let mut own = Array2::zeros((n, speakers));
    for j in 0..speakers {
        for i in 0..utterances {
            let r = j * utterances + i;
            avg[[j, r]] = 1.0 / utterances as f64;
            own[[r, j]] = 1.0;
            for k in 0..utterances {
                if k != i {
                    excl[[r, j * utterances + k]] = 1.0 / (utterances - 1) as f64;
                }
            }
        }
    }
    let dim = g.value(e).ncols();
    let others = own.mapv(|v| 1.0 - v);
    let targets: Vec<usize> = (0..n).map(|r| r / utterances).collect();

    let avg = g.constant(avg);
    let excl = g.constant(excl);
    let own_mask = g.constant(own);
    let other_mask = g.constant(others);
    let ones_d = g.constant(Array2::ones((dim, 1)));
    let ones_s = g.constant(Array2::ones((1, speakers)));

    let centroids = g.matmul(avg, e);
    let centroids = g.normalize_rows(centroids, NORM_EPS);
    let ct = g.transpose(centroids);
    let cos_all = g.matmul(e, ct);
    let excl_centroids = g.matmul(excl, e);
    let excl_centroids = g.normalize_rows(excl_centroids, NORM_EPS);
    let prod = g.mul(e, excl_centroids);
    let cos_self = g.matmul(prod, ones_d);
    let cos_self = g.matmul(cos_self, ones_s);
    let a = g.mul(cos_all, other_mask);
    let s = g.mul(cos_self, own_mask);
    let cos = g.add(a, s);
    let sim = g.scale_by(cos, w);
    let sim = g.shift(sim, b);
    let loss = g.softmax_cross_entropy(sim, &targets);
    (loss, sim)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ge2eOutput {
    pub loss: f64,
    /// `[speaker][utterance][centroid speaker]`.
    pub similarity: Vec<Vec<Vec<f64>>>,
}

/// GE2E loss of precomputed embeddings `[speaker][utterance][dim]` under
/// scale `w` and offset `b`.
pub fn ge2e_loss_with(w: f64, b: f64, batch: &[Vec<Vec<f64>>]) -> Result<Ge2eOutput> {
    if !(w > 0.0) {
        return Err(Error::Contract(format!("GE2E scale must be positive, got {w}")));
    }
    let speakers = batch.len();
    let utterances = batch.first().map_or(0, Vec::len);
    if speakers < 2 || utterances < 2 || batch.iter().any(|s| s.len() != utterances) {
        return Err(Error::Contract("GE2E needs a rectangular batch of at least 2 x 2".into()));
    }
    let dim = batch[0][0].len();
    let rows: Vec<f64> = batch.iter().flatten().flat_map(|v| v.iter().copied()).collect();
    if rows.len() != speakers * utterances * dim {
        return Err(Error::Contract("embeddings in a GE2E batch must share a dimension".into()));
    }
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let e = g.constant(Array2::from_shape_vec((speakers * utterances, dim), rows).expect("shape checked"));
    let wv = g.constant(Array2::from_elem((1, 1), w));
    let bv = g.constant(Array2::from_elem((1, 1), b));
    let (loss, sim) = ge2e_graph(&mut g, e, speakers, utterances, wv, bv);
    let sim = g.value(sim);
    let similarity = (0..speakers)
        .map(|j| (0..utterances).map(|i| sim.row(j * utterances + i).to_vec()).collect())
        .collect();
    Ok(Ge2eOutput {
        loss: g.scalar(loss),
        similarity,
    })
}

pub fn ge2e_loss(params: &EncoderParams, batch: &[Vec<Vec<f64>>]) -> Result<Ge2eOutput> {
    ge2e_loss_with(params.ge2e_scale(), params.ge2e_offset(), batch)
}

/// A speaker-major GE2E batch of equally long mel chunks.
#[derive(Debug, Clone)]
pub struct Ge2eBatch {
    pub chunks: Vec<Array2<f64>>,
    pub speaker_ids: Vec<String>,
    pub utterances: usize,
}

impl Ge2eBatch {
    pub fn new(chunks: Vec<Array2<f64>>, speaker_ids: Vec<String>, utterances: usize) -> Result<Self> {
        if chunks.len() != speaker_ids.len() * utterances {
            return Err(Error::Contract(format!(
                "{} chunks do not fill {} speakers x {utterances} utterances",
                chunks.len(),
                speaker_ids.len()
            )));
        }
        let mut seen = speaker_ids.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != speaker_ids.len() {
            return Err(Error::Contract("a speaker appears twice in one GE2E batch".into()));
        }
        Ok(Self {
            chunks,
            speaker_ids,
            utterances,
        })
    }

    pub fn speakers(&self) -> usize {
        self.speaker_ids.len()
    }
}

/// GE2E loss of a batch on the graph, through the full encoder.
pub fn batch_loss(params: &EncoderParams, g: &mut Graph, batch: &Ge2eBatch) -> Result<(Var, Var)> {
    let refs: Vec<&Array2<f64>> = batch.chunks.iter().collect();
    let e = params.forward(g, &refs)?;
    let w = g.param(params.scale);
    let b = g.param(params.offset);
    Ok(ge2e_graph(g, e, batch.speakers(), batch.utterances, w, b))
}

/// Encoder chunks grouped by speaker.
#[derive(Debug, Clone, Default)]
pub struct ChunkBank {
    pub speakers: Vec<(String, Vec<Array2<f64>>)>,
}

impl ChunkBank {
    pub fn from_clips<'a>(
        clips: impl IntoIterator<Item = (&'a str, &'a AudioClip)>,
        frontend: &EncoderFrontendConfig,
    ) -> Result<Self> {
        let mut bank = ChunkBank::default();
        for (speaker, clip) in clips {
            let chunks = match utterance_chunks(clip, frontend) {
                Ok(c) => c,
                Err(Error::DegenerateInput(_)) => continue,
                Err(e) => return Err(e),
            };
            bank.push(speaker, chunks);
        }
        Ok(bank)
    }

    pub fn from_manifest(entries: &[ManifestEntry], frontend: &EncoderFrontendConfig) -> Result<Self> {
        let mut bank = ChunkBank::default();
        for e in entries {
            let clip = load_wav(&e.audio_path)?;
            match utterance_chunks(&clip, frontend) {
                Ok(c) => bank.push(&e.speaker_id, c),
                Err(Error::DegenerateInput(_)) => continue,
                Err(err) => return Err(err),
            }
        }
        Ok(bank)
    }

    pub fn push(&mut self, speaker: &str, chunks: Vec<Array2<f64>>) {
        match self.speakers.iter_mut().find(|(s, _)| s == speaker) {
            Some((_, v)) => v.extend(chunks),
            None => self.speakers.push((speaker.to_string(), chunks)),
        }
    }

    pub fn total_chunks(&self) -> usize {
        self.speakers.iter().map(|(_, c)| c.len()).sum()
    }

    /// Speakers with at least `min_chunks` chunks.
    pub fn eligible(&self, min_chunks: usize) -> Vec<usize> {
        (0..self.speakers.len()).filter(|&i| self.speakers[i].1.len() >= min_chunks).collect()
    }

    pub fn check_batchable(&self, speakers: usize, utterances: usize) -> Result<()> {
        let eligible = self.eligible(utterances).len();
        if eligible < speakers {
            return Err(Error::Manifest(format!(
                "GE2E batches need {speakers} speakers with at least {utterances} chunks each; only {eligible} qualify"
            )));
        }
        Ok(())
    }

    /// Draw distinct speakers and distinct chunks per speaker.
    pub fn sample(&self, rng: &mut ChaCha8Rng, speakers: usize, utterances: usize) -> Result<Ge2eBatch> {
        self.check_batchable(speakers, utterances)?;
        let eligible = self.eligible(utterances);
        let chosen: Vec<usize> = eligible.choose_multiple(rng, speakers).copied().collect();
        let mut chunks = Vec::with_capacity(speakers * utterances);
        let mut ids = Vec::with_capacity(speakers);
        for s in chosen {
            let (id, pool) = &self.speakers[s];
            let mut idx: Vec<usize> = (0..pool.len()).collect();
            idx.shuffle(rng);
            chunks.extend(idx[..utterances].iter().map(|&i| pool[i].clone()));
            ids.push(id.clone());
        }
        Ge2eBatch::new(chunks, ids, utterances)
    }

    /// Every chunk with its speaker label.
    pub fn flatten(&self) -> (Vec<Array2<f64>>, Vec<String>) {
        let mut chunks = Vec::new();
        let mut labels = Vec::new();
        for (id, pool) in &self.speakers {
            for c in pool {
                chunks.push(c.clone());
                labels.push(id.clone());
            }
        }
        (chunks, labels)
    }
}

/// Genuine and impostor cosine scores over all chunk pairs of a bank.
pub fn bank_scores(params: &EncoderParams, bank: &ChunkBank) -> Result<(ScoreSet, Vec<Vec<f64>>, Vec<String>)> {
    let (chunks, labels) = bank.flatten();
    let embeddings = params.embed_frames(&chunks)?;
    Ok((ScoreSet::from_embeddings(&embeddings, &labels), embeddings, labels))
}

pub fn holdout_eer(params: &EncoderParams, bank: &ChunkBank) -> Result<f64> {
    Ok(compute_eer(&bank_scores(params, bank)?.0)?.eer)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderMetrics {
    pub step: usize,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eer: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct EncoderTrainOptions {
    pub steps: usize,
    pub seed: u64,
}

/// Plain SGD on the GE2E loss with global gradient-norm clipping.
///
/// Holdout EER, when a holdout bank is given, is logged every
/// `config.eval_every` steps and after the final step. `on_metrics` sees
/// each record as it is produced.
pub fn train_encoder(
    config: &EncoderConfig,
    train: &ChunkBank,
    holdout: Option<&ChunkBank>,
    options: EncoderTrainOptions,
    mut on_metrics: impl FnMut(&EncoderMetrics),
) -> Result<(EncoderParams, Vec<EncoderMetrics>)> {
    let mut params = EncoderParams::init(config, options.seed)?;
    train.check_batchable(config.speakers_per_batch, config.utterances_per_speaker)?;
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    rng.set_stream(1);
    let mut sgd = Sgd::new(config.learning_rate);
    let mut log = Vec::with_capacity(options.steps);
    for step in 0..options.steps {
        let batch = train.sample(&mut rng, config.speakers_per_batch, config.utterances_per_speaker)?;
        let mut grads = {
            let mut g = Graph::new(&params.store);
            let (loss, _) = batch_loss(&params, &mut g, &batch)?;
            let value = g.scalar(loss);
            if !value.is_finite() {
                return Err(Error::NumericalFault(format!("GE2E loss is {value} at step {step}")));
            }
            let grads = g.backward(loss);
            log.push(EncoderMetrics {
                step,
                loss: value,
                eer: None,
            });
            grads
        };
        for id in [params.scale, params.offset] {
            if let Some(gr) = grads.get_mut(id) {
                gr.mapv_inplace(|v| v * config.ge2e_grad_factor);
            }
        }
        grads.clip_norm(config.grad_clip_norm);
        if !grads.all_finite() {
            return Err(Error::NumericalFault(format!("non-finite encoder gradient at step {step}")));
        }
        sgd.step(&mut params.store, &grads);
        let w = params.store.get_mut(params.scale);
        w[[0, 0]] = w[[0, 0]].max(MIN_GE2E_SCALE);

        let last = log.last_mut().expect("pushed above");
        if let Some(bank) = holdout {
            if (step + 1) % config.eval_every.max(1) == 0 || step + 1 == options.steps {
                last.eer = Some(holdout_eer(&params, bank)?);
            }
        }
        on_metrics(last);
    }
    Ok((params, log))
}
