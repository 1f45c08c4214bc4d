//! Whole-pipeline configuration stored as UTF-8 `key = value` text with
//! `[section]` headers.
//!
//! Every key is optional; missing keys keep their built-in defaults, so an
//! empty file (or no file at all) is a valid configuration. Values are
//! written as JSON literals (`1e-5`, `true`, `"text"`); string fields also
//! accept bare text.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use serde_json::Value;

use crate::dsp::{DspConfig, EncoderFrontendConfig, SilencePolicy};
use crate::encoder::EncoderConfig;
use crate::synth::SynthConfig;
use crate::vocoder::VocoderConfig;
use crate::{Error, Result};

/// Environment variable naming the config file used when none is given.
pub const CONFIG_ENV: &str = "SWAR_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    pub data_dir: String,
    pub runs_dir: String,
    pub encoder_checkpoint: String,
    pub synth_checkpoint: String,
    pub vocoder_checkpoint: String,
    pub vocab: String,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            data_dir: "data".into(),
            runs_dir: "runs".into(),
            encoder_checkpoint: "runs/encoder.spke".into(),
            synth_checkpoint: "runs/synth.synt".into(),
            vocoder_checkpoint: "runs/vocoder.vocr".into(),
            vocab: "runs/vocab.txt".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub dsp: DspConfig,
    pub encoder_frontend: EncoderFrontendConfig,
    pub silence: SilencePolicy,
    pub encoder: EncoderConfig,
    pub synth: SynthConfig,
    pub vocoder: VocoderConfig,
    pub paths: PathsConfig,
}

const SECTIONS: [&str; 7] = ["dsp", "encoder_frontend", "silence", "encoder", "synth", "vocoder", "paths"];

type Sections = BTreeMap<String, BTreeMap<String, (usize, String)>>;

fn parse_sections(text: &str) -> Result<Sections> {
    let mut out: Sections = BTreeMap::new();
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| Error::Config(format!("line {line_no}: unterminated section header")))?
                .trim();
            if !SECTIONS.contains(&name) {
                return Err(Error::Config(format!("line {line_no}: unknown section [{name}]")));
            }
            current = name.to_string();
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {line_no}: expected key = value")))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Config(format!("line {line_no}: empty key")));
        }
        let section = out.entry(current.clone()).or_default();
        if section.insert(key.to_string(), (line_no, value.trim().to_string())).is_some() {
            return Err(Error::Config(format!("line {line_no}: duplicate key {key}")));
        }
    }
    Ok(out)
}

fn overlay<T: Serialize + DeserializeOwned>(default: &T, name: &str, keys: Option<&BTreeMap<String, (usize, String)>>) -> Result<T> {
    let Some(keys) = keys else { return Ok(serde_json::from_value(serde_json::to_value(default)?)?) };
    let mut obj = match serde_json::to_value(default)? {
        Value::Object(m) => m,
        _ => unreachable!("config sections are structs"),
    };
    for (key, (line_no, text)) in keys {
        let slot = obj
            .get_mut(key)
            .ok_or_else(|| Error::Config(format!("line {line_no}: unknown key {key} in [{name}]")))?;
        let parsed = match serde_json::from_str::<Value>(text) {
            Ok(v) => v,
            Err(_) if slot.is_string() => Value::String(text.clone()),
            Err(_) => return Err(Error::Config(format!("line {line_no}: cannot read {key} = {text}"))),
        };
        let parsed = match (&*slot, parsed) {
            (Value::String(_), Value::Number(n)) => Value::String(n.to_string()),
            (_, v) => v,
        };
        *slot = parsed;
    }
    serde_json::from_value(Value::Object(obj)).map_err(|e| Error::Config(format!("[{name}]: {e}")))
}

fn render<T: Serialize>(out: &mut String, name: &str, section: &T) -> Result<()> {
    out.push_str(&format!("\n[{name}]\n"));
    if let Value::Object(m) = serde_json::to_value(section)? {
        for (k, v) in m {
            out.push_str(&format!("{k} = {v}\n"));
        }
    }
    Ok(())
}

impl PipelineConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let sections = parse_sections(text)?;
        let d = Self::default();
        let mut seed = d.seed;
        if let Some(top) = sections.get("") {
            for (key, (line_no, value)) in top {
                match key.as_str() {
                    "seed" => {
                        seed = value
                            .parse()
                            .map_err(|_| Error::Config(format!("line {line_no}: seed must be a non-negative integer")))?
                    }
                    other => return Err(Error::Config(format!("line {line_no}: unknown top-level key {other}"))),
                }
            }
        }
        let cfg = Self {
            seed,
            dsp: overlay(&d.dsp, "dsp", sections.get("dsp"))?,
            encoder_frontend: overlay(&d.encoder_frontend, "encoder_frontend", sections.get("encoder_frontend"))?,
            silence: overlay(&d.silence, "silence", sections.get("silence"))?,
            encoder: overlay(&d.encoder, "encoder", sections.get("encoder"))?,
            synth: overlay(&d.synth, "synth", sections.get("synth"))?,
            vocoder: overlay(&d.vocoder, "vocoder", sections.get("vocoder"))?,
            paths: overlay(&d.paths, "paths", sections.get("paths"))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> Result<String> {
        let mut out = format!("seed = {}\n", self.seed);
        render(&mut out, "dsp", &self.dsp)?;
        render(&mut out, "encoder_frontend", &self.encoder_frontend)?;
        render(&mut out, "silence", &self.silence)?;
        render(&mut out, "encoder", &self.encoder)?;
        render(&mut out, "synth", &self.synth)?;
        render(&mut out, "vocoder", &self.vocoder)?;
        render(&mut out, "paths", &self.paths)?;
        Ok(out)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io_at(path, e))?;
        Self::from_text(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// The explicit path if given, else the file named by `SWAR_CONFIG`,
    /// else the built-in defaults.
    pub fn resolve(explicit: Option<&Path>) -> Result<Self> {
        Self::resolve_with(explicit, std::env::var_os(CONFIG_ENV).map(PathBuf::from))
    }

    pub fn resolve_with(explicit: Option<&Path>, env: Option<PathBuf>) -> Result<Self> {
        match (explicit, env) {
            (Some(p), _) => Self::load(p),
            (None, Some(p)) if !p.as_os_str().is_empty() => Self::load(p),
            _ => Ok(Self::default()),
        }
    }

    /// Section-level checks plus the cross-section agreements the stages
    /// rely on.
    pub fn validate(&self) -> Result<()> {
        self.dsp.validate()?;
        self.encoder_frontend.validate()?;
        self.encoder.validate()?;
        self.synth.validate()?;
        self.vocoder.validate()?;
        let mut problems = Vec::new();
        if self.encoder.n_mels != self.encoder_frontend.n_mel_channels {
            problems.push(format!(
                "encoder.n_mels = {} but encoder_frontend.n_mel_channels = {}",
                self.encoder.n_mels, self.encoder_frontend.n_mel_channels
            ));
        }
        if self.synth.mel_channels != self.dsp.n_mel_channels {
            problems.push(format!(
                "synth.mel_channels = {} but dsp.n_mel_channels = {}",
                self.synth.mel_channels, self.dsp.n_mel_channels
            ));
        }
        if self.synth.speaker_dim != self.encoder.embedding_size {
            problems.push(format!(
                "synth.speaker_dim = {} but encoder.embedding_size = {}",
                self.synth.speaker_dim, self.encoder.embedding_size
            ));
        }
        if self.vocoder.hop_length != self.dsp.hop_length {
            problems.push(format!(
                "vocoder.hop_length = {} but dsp.hop_length = {}",
                self.vocoder.hop_length, self.dsp.hop_length
            ));
        }
        if self.vocoder.n_mels != self.dsp.n_mel_channels {
            problems.push(format!(
                "vocoder.n_mels = {} but dsp.n_mel_channels = {}",
                self.vocoder.n_mels, self.dsp.n_mel_channels
            ));
        }
        if self.vocoder.sample_rate_hz != self.dsp.sampling_rate_hz {
            problems.push(format!(
                "vocoder.sample_rate_hz = {} but dsp.sampling_rate_hz = {}",
                self.vocoder.sample_rate_hz, self.dsp.sampling_rate_hz
            ));
        }
        match problems.len() {
            0 => Ok(()),
            _ => Err(Error::Config(problems.join("; "))),
        }
    }
}
