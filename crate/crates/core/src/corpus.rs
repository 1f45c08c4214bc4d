//! Dataset manifests: one JSON object per line describing a clip, its
//! speaker, optional speaker metadata and optional normalized transcript.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{decode_wav, MAX_WAV_VALUE};
use crate::textnorm::normalize;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub audio_path: PathBuf,
    pub speaker_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gender: Option<Gender>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age_group: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub duration_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ManifestKind {
    Encoder,
    Synth,
}

impl std::str::FromStr for ManifestKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "encoder" => Ok(Self::Encoder),
            "synth" => Ok(Self::Synth),
            other => Err(Error::Config(format!("manifest kind must be encoder or synth, not `{other}`"))),
        }
    }
}

/// Optional `speakers.json` side file: speaker id to metadata.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SpeakerMeta {
    #[serde(default)]
    pub gender: Option<Gender>,
    #[serde(default)]
    pub age_group: Option<String>,
}

pub const SPEAKERS_FILE: &str = "speakers.json";

#[derive(Debug, Clone, PartialEq)]
pub struct ScanResult {
    pub entries: Vec<ManifestEntry>,
    pub problems: Vec<String>,
}

pub fn validate_entry(entry: &ManifestEntry, kind: ManifestKind) -> Result<()> {
    if !(entry.duration_s > 0.0 && entry.duration_s.is_finite()) {
        return Err(Error::Manifest(format!(
            "{}: duration must be positive",
            entry.audio_path.display()
        )));
    }
    if entry.speaker_id.is_empty() {
        return Err(Error::Manifest(format!("{}: empty speaker id", entry.audio_path.display())));
    }
    if kind == ManifestKind::Synth && entry.text.as_deref().is_none_or(str::is_empty) {
        return Err(Error::Manifest(format!(
            "{}: synthesizer entries need a transcript",
            entry.audio_path.display()
        )));
    }
    Ok(())
}

fn sorted_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for item in std::fs::read_dir(dir).map_err(|e| Error::io_at(dir, e))? {
        out.push(item.map_err(|e| Error::io_at(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

/// Walk `root/<speaker_id>/<clip>.wav`, pairing each clip with
/// `<clip>.txt` when present. Problems are collected per clip instead of
/// aborting the scan.
pub fn scan_corpus(root: &Path, kind: ManifestKind) -> Result<ScanResult> {
    let meta: HashMap<String, SpeakerMeta> = match std::fs::read(root.join(SPEAKERS_FILE)) {
        Ok(bytes) => serde_json::from_slice(&bytes)?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => HashMap::new(),
        Err(e) => return Err(Error::io_at(root.join(SPEAKERS_FILE), e)),
    };
    let mut entries = Vec::new();
    let mut problems = Vec::new();
    for speaker_dir in sorted_dir(root)? {
        if !speaker_dir.is_dir() {
            continue;
        }
        let speaker_id = speaker_dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let files = sorted_dir(&speaker_dir)?;
        let stems_with = |ext: &str| -> BTreeSet<PathBuf> {
            files
                .iter()
                .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case(ext)))
                .map(|p| p.with_extension(""))
                .collect()
        };
        let wavs = stems_with("wav");
        let txts = stems_with("txt");
        for stem in txts.difference(&wavs) {
            problems.push(format!("{}: transcript without audio", stem.with_extension("txt").display()));
        }
        for stem in &wavs {
            let wav = stem.with_extension("wav");
            let clip = match std::fs::read(&wav)
                .map_err(|e| Error::io_at(&wav, e))
                .and_then(|b| decode_wav(&b, MAX_WAV_VALUE, &wav.display().to_string()))
            {
                Ok(c) => c,
                Err(e) => {
                    problems.push(format!("{}: {e}", wav.display()));
                    continue;
                }
            };
            let text = if txts.contains(stem) {
                let txt = stem.with_extension("txt");
                let raw = match std::fs::read_to_string(&txt) {
                    Ok(t) => t,
                    Err(e) => {
                        problems.push(format!("{}: {e}", txt.display()));
                        continue;
                    }
                };
                match normalize(raw.trim()) {
                    Ok(n) => Some(n.joined()),
                    Err(e) => {
                        problems.push(format!("{}: {e}", txt.display()));
                        continue;
                    }
                }
            } else {
                None
            };
            if kind == ManifestKind::Synth && text.is_none() {
                problems.push(format!("{}: missing transcript", wav.display()));
                continue;
            }
            let m = meta.get(&speaker_id).cloned().unwrap_or_default();
            let entry = ManifestEntry {
                audio_path: wav.clone(),
                speaker_id: speaker_id.clone(),
                gender: m.gender,
                age_group: m.age_group,
                text,
                duration_s: clip.duration_s(),
            };
            match validate_entry(&entry, kind) {
                Ok(()) => entries.push(entry),
                Err(e) => problems.push(e.to_string()),
            }
        }
    }
    Ok(ScanResult { entries, problems })
}

/// Like [`scan_corpus`] but any problem fails the whole build with an
/// itemized list.
pub fn build_manifest(root: &Path, kind: ManifestKind) -> Result<Vec<ManifestEntry>> {
    let scan = scan_corpus(root, kind)?;
    if !scan.problems.is_empty() {
        return Err(Error::Itemized(scan.problems));
    }
    Ok(scan.entries)
}

pub fn to_jsonl(entries: &[ManifestEntry]) -> Result<String> {
    let mut out = String::new();
    for e in entries {
        out.push_str(&serde_json::to_string(e)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn from_jsonl(text: &str) -> Result<Vec<ManifestEntry>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Manifest(format!("line {}: {e}", i + 1))))
        .collect()
}

pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_jsonl(entries)?).map_err(|e| Error::io_at(path, e))
}

/// Read a manifest file. Relative audio paths are resolved against the
/// manifest's directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io_at(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut entries = from_jsonl(&text)?;
    for e in &mut entries {
        if e.audio_path.is_relative() {
            e.audio_path = base.join(&e.audio_path);
        }
    }
    Ok(entries)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerDuration {
    pub speaker_id: String,
    pub utterances: usize,
    pub total_duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedStats {
    pub clips: usize,
    pub words: usize,
    /// Non-whitespace characters.
    pub characters: usize,
    pub mean_clip_duration_s: f64,
    pub min_clip_duration_s: f64,
    pub max_clip_duration_s: f64,
    pub mean_words_per_clip: f64,
    pub distinct_words: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub total_speakers: usize,
    pub male: usize,
    pub female: usize,
    pub utterances: usize,
    pub total_duration_s: f64,
    pub mean_clip_duration_s: f64,
    pub min_clip_duration_s: f64,
    pub max_clip_duration_s: f64,
    pub longest_speaker: SpeakerDuration,
    pub shortest_speaker: SpeakerDuration,
    pub speakers: Vec<SpeakerDuration>,
    /// Present when at least one entry carries a transcript; computed over
    /// those entries only.
    pub paired: Option<PairedStats>,
}

pub fn compute_stats(entries: &[ManifestEntry]) -> Result<CorpusStats> {
    if entries.is_empty() {
        return Err(Error::DegenerateInput("statistics need a non-empty manifest".into()));
    }
    let mut per_speaker: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    let mut genders: BTreeMap<&str, Option<Gender>> = BTreeMap::new();
    for e in entries {
        let s = per_speaker.entry(&e.speaker_id).or_default();
        s.0 += 1;
        s.1 += e.duration_s;
        let g = genders.entry(&e.speaker_id).or_insert(None);
        if g.is_none() {
            *g = e.gender;
        }
    }
    let speakers: Vec<SpeakerDuration> = per_speaker
        .iter()
        .map(|(id, &(n, d))| SpeakerDuration {
            speaker_id: id.to_string(),
            utterances: n,
            total_duration_s: d,
        })
        .collect();
    let by_total = |a: &&SpeakerDuration, b: &&SpeakerDuration| {
        a.total_duration_s
            .total_cmp(&b.total_duration_s)
            .then_with(|| b.speaker_id.cmp(&a.speaker_id))
    };
    let longest_speaker = speakers.iter().max_by(by_total).cloned().expect("non-empty");
    let shortest_speaker = speakers
        .iter()
        .min_by(|a, b| {
            a.total_duration_s
                .total_cmp(&b.total_duration_s)
                .then_with(|| a.speaker_id.cmp(&b.speaker_id))
        })
        .cloned()
        .expect("non-empty");
    let durations: Vec<f64> = entries.iter().map(|e| e.duration_s).collect();
    let (mean, min, max) = summary(&durations);

    let texts: Vec<(&str, f64)> = entries
        .iter()
        .filter_map(|e| e.text.as_deref().map(|t| (t, e.duration_s)))
        .collect();
    let paired = if texts.is_empty() {
        None
    } else {
        let mut words = 0;
        let mut characters = 0;
        let mut distinct = BTreeSet::new();
        for (t, _) in &texts {
            for w in t.split_whitespace() {
                words += 1;
                distinct.insert(w);
            }
            characters += t.chars().filter(|c| !c.is_whitespace()).count();
        }
        let d: Vec<f64> = texts.iter().map(|t| t.1).collect();
        let (pm, pmin, pmax) = summary(&d);
        Some(PairedStats {
            clips: texts.len(),
            words,
            characters,
            mean_clip_duration_s: pm,
            min_clip_duration_s: pmin,
            max_clip_duration_s: pmax,
            mean_words_per_clip: words as f64 / texts.len() as f64,
            distinct_words: distinct.len(),
        })
    };
    Ok(CorpusStats {
        total_speakers: speakers.len(),
        male: genders.values().filter(|g| **g == Some(Gender::Male)).count(),
        female: genders.values().filter(|g| **g == Some(Gender::Female)).count(),
        utterances: entries.len(),
        total_duration_s: durations.iter().sum(),
        mean_clip_duration_s: mean,
        min_clip_duration_s: min,
        max_clip_duration_s: max,
        longest_speaker,
        shortest_speaker,
        speakers,
        paired,
    })
}

fn summary(v: &[f64]) -> (f64, f64, f64) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (mean, min, max)
}

pub fn speaker_ids(entries: &[ManifestEntry]) -> Vec<String> {
    let set: BTreeSet<&str> = entries.iter().map(|e| e.speaker_id.as_str()).collect();
    set.into_iter().map(str::to_string).collect()
}

/// Split by speaker, holding out `round(fraction * speakers)` of them.
pub fn split_holdout(
    entries: &[ManifestEntry],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<ManifestEntry>, Vec<ManifestEntry>)> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Manifest(format!("holdout fraction {fraction} outside [0, 1]")));
    }
    let n = speaker_ids(entries).len();
    split_holdout_count(entries, (fraction * n as f64).round() as usize, seed)
}

/// Split by speaker, holding out exactly `count` speakers chosen by a
/// seeded shuffle.
pub fn split_holdout_count(
    entries: &[ManifestEntry],
    count: usize,
    seed: u64,
) -> Result<(Vec<ManifestEntry>, Vec<ManifestEntry>)> {
    let mut ids = speaker_ids(entries);
    if ids.len() < 2 {
        return Err(Error::Manifest("a holdout split needs at least two speakers".into()));
    }
    if count == 0 || count >= ids.len() {
        return Err(Error::Manifest(format!(
            "holding out {count} of {} speakers leaves one side empty",
            ids.len()
        )));
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let held: BTreeSet<&str> = ids[..count].iter().map(String::as_str).collect();
    let (holdout, train): (Vec<_>, Vec<_>) = entries
        .iter()
        .cloned()
        .partition(|e| held.contains(e.speaker_id.as_str()));
    Ok((train, holdout))
}
