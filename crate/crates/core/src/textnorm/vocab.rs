use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use super::{is_devanagari, NormalizedText, COMMA, DANDA};
use crate::{Error, Result};

pub const PAD: &str = "<pad>";
pub const EOS: &str = "<eos>";

/// Ordered symbol table for the synthesizer input. Index 0 is padding,
/// index 1 end-of-sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct CharVocabulary {
    symbols: Vec<String>,
    index: HashMap<char, usize>,
}

impl CharVocabulary {
    /// Build from an explicit symbol list (`<pad>` first, `<eos>` somewhere).
    pub fn from_symbols(symbols: Vec<String>) -> Result<Self> {
        if symbols.first().map(String::as_str) != Some(PAD) {
            return Err(Error::Format("vocabulary must start with <pad>".into()));
        }
        if !symbols.iter().any(|s| s == EOS) {
            return Err(Error::Format("vocabulary has no <eos>".into()));
        }
        let mut index = HashMap::new();
        for (i, s) in symbols.iter().enumerate() {
            if s == PAD || s == EOS {
                continue;
            }
            let mut chars = s.chars();
            let (Some(c), None) = (chars.next(), chars.next()) else {
                return Err(Error::Format(format!("vocabulary symbol {s:?} on line {} is not one character", i + 1)));
            };
            if index.insert(c, i).is_some() {
                return Err(Error::Format(format!("duplicate vocabulary symbol {c:?}")));
            }
        }
        Ok(Self { symbols, index })
    }

    /// Base symbols plus every Devanagari character appearing in `texts`.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut seen = BTreeSet::new();
        for text in texts {
            seen.extend(text.chars().filter(|&c| is_devanagari(c) && c != DANDA));
        }
        let mut symbols: Vec<String> = vec![PAD.into(), EOS.into(), " ".into(), DANDA.to_string(), COMMA.to_string()];
        symbols.extend(seen.into_iter().map(String::from));
        Self::from_symbols(symbols).expect("constructed vocabulary is well formed")
    }

    /// Every character the normalizer can emit.
    pub fn full_devanagari() -> Self {
        let block: String = ('\u{0900}'..='\u{097F}').filter(|&c| is_devanagari(c)).collect();
        Self::from_texts([block.as_str()])
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn eos(&self) -> usize {
        self.symbols.iter().position(|s| s == EOS).expect("validated")
    }

    pub fn index_of(&self, c: char) -> Option<usize> {
        self.index.get(&c).copied()
    }

    /// One index per character, then `<eos>`.
    pub fn encode_str(&self, text: &str) -> Result<Vec<usize>> {
        let mut ids = Vec::with_capacity(text.chars().count() + 1);
        for (offset, c) in text.chars().enumerate() {
            ids.push(self.index_of(c).ok_or(Error::OutOfVocabulary { ch: c, offset })?);
        }
        ids.push(self.eos());
        Ok(ids)
    }

    /// Inverse of [`encode_str`](Self::encode_str); stops at `<eos>`, skips padding.
    pub fn decode(&self, ids: &[usize]) -> String {
        let eos = self.eos();
        ids.iter()
            .take_while(|&&i| i != eos)
            .filter(|&&i| i != 0 && i < self.symbols.len())
            .map(|&i| self.symbols[i].as_str())
            .collect()
    }

    /// One symbol per line; line number is the index.
    pub fn to_file_string(&self) -> String {
        let mut s = self.symbols.join("\n");
        s.push('\n');
        s
    }

    pub fn from_file_string(s: &str) -> Result<Self> {
        let body = s.strip_suffix('\n').unwrap_or(s);
        Self::from_symbols(body.split('\n').map(String::from).collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_file_string()).map_err(|e| Error::io_at(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_file_string(&std::fs::read_to_string(path).map_err(|e| Error::io_at(path, e))?)
    }
}

/// Encode normalized sentences (joined by single spaces) for the synthesizer.
pub fn encode_chars(text: &NormalizedText, vocab: &CharVocabulary) -> Result<Vec<usize>> {
    vocab.encode_str(&text.joined())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn symbols(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn single_danda_encodes_to_its_index_then_eos() {
        let vocab = CharVocabulary::from_symbols(symbols(&[PAD, EOS, " ", ",", "क", "।"])).unwrap();
        assert_eq!(vocab.encode_str("।").unwrap(), vec![5, 1]);
    }

    #[test]
    fn out_of_vocabulary_names_char_and_offset() {
        let vocab = CharVocabulary::from_texts(["क ख"]);
        match vocab.encode_str("क ग") {
            Err(Error::OutOfVocabulary { ch, offset }) => assert_eq!((ch, offset), ('ग', 2)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn file_round_trip_keeps_space_symbol() {
        let vocab = CharVocabulary::from_texts(["नमस्ते संसार"]);
        let back = CharVocabulary::from_file_string(&vocab.to_file_string()).unwrap();
        assert_eq!(back, vocab);
        assert_eq!(back.symbols()[2], " ");
    }

    #[test]
    fn rejects_malformed_symbol_lists() {
        assert!(CharVocabulary::from_symbols(symbols(&[EOS, PAD])).is_err());
        assert!(CharVocabulary::from_symbols(symbols(&[PAD, "क"])).is_err());
        assert!(CharVocabulary::from_symbols(symbols(&[PAD, EOS, "क", "क"])).is_err());
        assert!(CharVocabulary::from_symbols(symbols(&[PAD, EOS, "कख"])).is_err());
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(text in "[\u{0915}-\u{0939}\u{093E}-\u{094D} ।,]{0,40}") {
            let vocab = CharVocabulary::full_devanagari();
            let ids = vocab.encode_str(&text).unwrap();
            prop_assert_eq!(vocab.decode(&ids), text);
        }
    }
}
