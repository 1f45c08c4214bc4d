//! Study definition: one JSON object per line describing a clip pair.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use swar_core::corpus::Gender;

use crate::{MosError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipPair {
    pub pair_id: String,
    pub speaker_id: String,
    pub gender: Gender,
    pub original: PathBuf,
    pub cloned: PathBuf,
}

#[derive(Debug, Clone)]
pub struct Study {
    pairs: Vec<ClipPair>,
    index: HashMap<String, usize>,
}

impl Study {
    /// Build a study, checking ids are unique and every audio file exists.
    pub fn new(pairs: Vec<ClipPair>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(MosError::Study("no clip pairs".into()));
        }
        let mut index = HashMap::new();
        for (i, p) in pairs.iter().enumerate() {
            if p.pair_id.is_empty() || p.pair_id.contains('/') {
                return Err(MosError::Study(format!("invalid pair id {:?}", p.pair_id)));
            }
            if index.insert(p.pair_id.clone(), i).is_some() {
                return Err(MosError::Study(format!("duplicate pair id {}", p.pair_id)));
            }
            for f in [&p.original, &p.cloned] {
                if !f.is_file() {
                    return Err(MosError::Study(format!("{}: audio {} not found", p.pair_id, f.display())));
                }
            }
        }
        Ok(Self { pairs, index })
    }

    /// Parse line-delimited JSON; relative audio paths resolve against `base`.
    pub fn from_jsonl(text: &str, base: &Path) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut p: ClipPair =
                serde_json::from_str(line).map_err(|e| MosError::Study(format!("line {}: {e}", i + 1)))?;
            for f in [&mut p.original, &mut p.cloned] {
                if f.is_relative() {
                    *f = base.join(&*f);
                }
            }
            pairs.push(p);
        }
        Self::new(pairs)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| MosError::io(path, e))?;
        Self::from_jsonl(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn pairs(&self) -> &[ClipPair] {
        &self.pairs
    }

    pub fn get(&self, pair_id: &str) -> Option<&ClipPair> {
        self.index.get(pair_id).map(|&i| &self.pairs[i])
    }

    /// Pair order for one rater: a shuffle seeded by the token and the
    /// study seed, so a rater sees the same order on every visit.
    pub fn session_order(&self, token: &str, seed: u64) -> Vec<&ClipPair> {
        let mut order: Vec<&ClipPair> = self.pairs.iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(token.as_bytes()) ^ seed);
        order.shuffle(&mut rng);
        order
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn study_with(n: usize) -> (tempfile::TempDir, Study) {
        let dir = tempfile::tempdir().unwrap();
        let mut lines = String::new();
        for i in 0..n {
            for kind in ["o", "c"] {
                std::fs::write(dir.path().join(format!("{kind}{i}.wav")), b"RIFF").unwrap();
            }
            lines.push_str(&format!(
                "{{\"pair_id\":\"p{i}\",\"speaker_id\":\"s{}\",\"gender\":\"female\",\"original\":\"o{i}.wav\",\"cloned\":\"c{i}.wav\"}}\n",
                i / 3
            ));
        }
        let path = dir.path().join("study.jsonl");
        std::fs::write(&path, lines).unwrap();
        let s = Study::load(&path).unwrap();
        (dir, s)
    }

    #[test]
    fn loads_and_resolves_relative_paths() {
        let (dir, s) = study_with(4);
        assert_eq!(s.pairs().len(), 4);
        assert_eq!(s.get("p2").unwrap().original, dir.path().join("o2.wav"));
        assert!(s.get("p9").is_none());
    }

    #[test]
    fn session_order_is_a_stable_permutation() {
        let (_dir, s) = study_with(12);
        let a: Vec<&str> = s.session_order("rater-a", 0).iter().map(|p| p.pair_id.as_str()).collect();
        let again: Vec<&str> = s.session_order("rater-a", 0).iter().map(|p| p.pair_id.as_str()).collect();
        let b: Vec<&str> = s.session_order("rater-b", 0).iter().map(|p| p.pair_id.as_str()).collect();
        assert_eq!(a, again);
        assert_ne!(a, b);
        let mut sorted = a.clone();
        sorted.sort();
        let mut all: Vec<&str> = s.pairs().iter().map(|p| p.pair_id.as_str()).collect();
        all.sort();
        assert_eq!(sorted, all);
    }

    #[test]
    fn rejects_duplicates_missing_audio_and_junk() {
        let (dir, s) = study_with(2);
        let mut pairs = s.pairs().to_vec();
        pairs.push(pairs[0].clone());
        assert!(matches!(Study::new(pairs), Err(MosError::Study(m)) if m.contains("duplicate")));
        let mut pairs = s.pairs().to_vec();
        pairs[1].cloned = dir.path().join("gone.wav");
        assert!(matches!(Study::new(pairs), Err(MosError::Study(m)) if m.contains("not found")));
        assert!(Study::from_jsonl("{\"pair_id\":1}\n", dir.path()).is_err());
        assert!(Study::new(Vec::new()).is_err());
    }
}
