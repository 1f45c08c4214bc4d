//! Devanagari text normalization for the synthesizer.
//!
//! [`normalize`] runs numeral expansion, sentence segmentation, symbol
//! cleanup and stop-token insertion. Its output contains only Devanagari
//! letters and signs, spaces, commas and the danda, and every sentence ends
//! in a danda.

mod numerals;
mod vocab;

pub use numerals::{below_hundred, cardinal, digit_value, expand_numerals, MAX_SUPPORTED};
pub use vocab::{encode_chars, CharVocabulary, EOS, PAD};

use crate::{Error, Result};

pub const DANDA: char = '।';
pub const DOUBLE_DANDA: char = '॥';
pub const COMMA: char = ',';

/// Devanagari block characters the synthesizer may see (digits excluded).
pub fn is_devanagari(c: char) -> bool {
    ('\u{0900}'..='\u{097F}').contains(&c) && digit_value(c).is_none() && c != DOUBLE_DANDA
}

/// Normalized sentences, each ending in a danda.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormalizedText {
    pub sentences: Vec<String>,
}

impl NormalizedText {
    pub fn joined(&self) -> String {
        self.sentences.join(" ")
    }
}

/// Split at sentence delimiters. The danda is kept; `;`, `?`, `!` and `॥`
/// become a danda. Segments are trimmed and empty ones dropped.
pub fn segment_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut flush = |current: &mut String| {
        let trimmed = current.trim();
        if trimmed.chars().any(|c| c != DANDA && !c.is_whitespace()) {
            out.push(trimmed.to_string());
        }
        current.clear();
    };
    for c in text.chars() {
        match c {
            DANDA | ';' | '?' | '!' | DOUBLE_DANDA => {
                current.push(DANDA);
                flush(&mut current);
            }
            _ => current.push(c),
        }
    }
    flush(&mut current);
    out
}

/// Append `" ।"` unless the sentence already ends in a danda.
pub fn ensure_stop_token(sentence: &str) -> Result<String> {
    let trimmed = sentence.trim();
    if trimmed.is_empty() {
        return Err(Error::DegenerateInput("cannot add a stop token to an empty sentence".into()));
    }
    if trimmed.ends_with(DANDA) {
        Ok(trimmed.to_string())
    } else {
        Ok(format!("{trimmed} {DANDA}"))
    }
}

/// Drop characters outside the synthesizer alphabet and collapse whitespace.
/// Joiners vanish; any other foreign symbol acts as a space.
fn clean_symbols(sentence: &str) -> String {
    let mapped: String = sentence
        .chars()
        .filter(|&c| c != '\u{200C}' && c != '\u{200D}')
        .map(|c| if is_devanagari(c) || c == COMMA { c } else { ' ' })
        .collect();
    let mut out = String::with_capacity(mapped.len());
    for word in mapped.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Full normalization: expand numerals, segment, clean, add stop tokens.
pub fn normalize(text: &str) -> Result<NormalizedText> {
    let expanded = expand_numerals(text)?;
    let mut sentences = Vec::new();
    for segment in segment_sentences(&expanded) {
        let cleaned = clean_symbols(&segment);
        if !cleaned.chars().any(|c| c != DANDA && c != COMMA && c != ' ') {
            continue;
        }
        sentences.push(ensure_stop_token(&cleaned)?);
    }
    Ok(NormalizedText { sentences })
}
