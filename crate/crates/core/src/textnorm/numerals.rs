//! Nepali cardinal numbers.
//!
//! Below one hundred every value has its own word; above that numbers are
//! composed from सय (10^2), हजार (10^3), लाख (10^5) and करोड (10^7) in the
//! Indian grouping. Values from 10^9 (अरब) upwards are not supported.

use crate::{Error, Result};

pub const MAX_SUPPORTED: u64 = 999_999_999;

#[rustfmt::skip]
const BELOW_HUNDRED: [&str; 100] = [
    "शून्य", "एक", "दुई", "तीन", "चार", "पाँच", "छ", "सात", "आठ", "नौ",
    "दस", "एघार", "बाह्र", "तेह्र", "चौध", "पन्ध्र", "सोह्र", "सत्र", "अठार", "उन्नाइस",
    "बीस", "एक्काइस", "बाइस", "तेइस", "चौबीस", "पच्चीस", "छब्बीस", "सत्ताइस", "अठ्ठाइस", "उनन्तीस",
    "तीस", "एकतीस", "बत्तीस", "तेत्तीस", "चौँतीस", "पैँतीस", "छत्तीस", "सैँतीस", "अठतीस", "उनन्चालीस",
    "चालीस", "एकचालीस", "बयालीस", "त्रिचालीस", "चवालीस", "पैँतालीस", "छयालीस", "सतचालीस", "अठचालीस", "उनन्चास",
    "पचास", "एकाउन्न", "बाउन्न", "त्रिपन्न", "चउन्न", "पचपन्न", "छपन्न", "सन्ताउन्न", "अन्ठाउन्न", "उनन्साठी",
    "साठी", "एकसट्ठी", "बयसट्ठी", "त्रिसट्ठी", "चौसट्ठी", "पैँसट्ठी", "छयसट्ठी", "सतसट्ठी", "अठसट्ठी", "उनन्सत्तरी",
    "सत्तरी", "एकहत्तर", "बहत्तर", "त्रिहत्तर", "चौहत्तर", "पचहत्तर", "छयहत्तर", "सतहत्तर", "अठहत्तर", "उनासी",
    "असी", "एकासी", "बयासी", "त्रियासी", "चौरासी", "पचासी", "छयासी", "सतासी", "अठासी", "उनान्नब्बे",
    "नब्बे", "एकान्नब्बे", "बयान्नब्बे", "त्रियान्नब्बे", "चौरान्नब्बे", "पन्चान्नब्बे", "छयान्नब्बे", "सन्तान्नब्बे", "अन्ठान्नब्बे", "उनान्सय",
];

pub const HUNDRED: &str = "सय";
pub const THOUSAND: &str = "हजार";
pub const LAKH: &str = "लाख";
pub const CRORE: &str = "करोड";

/// Word for `0..100`.
pub fn below_hundred(n: u64) -> &'static str {
    BELOW_HUNDRED[n as usize]
}

/// Nepali cardinal for `n`, words separated by single spaces.
pub fn cardinal(n: u64) -> Option<String> {
    if n > MAX_SUPPORTED {
        return None;
    }
    if n == 0 {
        return Some(BELOW_HUNDRED[0].to_string());
    }
    let groups = [
        (n / 10_000_000, Some(CRORE)),
        ((n / 100_000) % 100, Some(LAKH)),
        ((n / 1000) % 100, Some(THOUSAND)),
        ((n / 100) % 10, Some(HUNDRED)),
        (n % 100, None),
    ];
    let mut words: Vec<&str> = Vec::new();
    for (count, unit) in groups {
        if count == 0 {
            continue;
        }
        words.push(below_hundred(count));
        if let Some(unit) = unit {
            words.push(unit);
        }
    }
    Some(words.join(" "))
}

/// ASCII or Devanagari decimal digit value.
pub fn digit_value(c: char) -> Option<u32> {
    match c {
        '0'..='9' => Some(c as u32 - '0' as u32),
        '०'..='९' => Some(c as u32 - '०' as u32),
        _ => None,
    }
}

fn parse_run(token: &str) -> Result<u64> {
    let mut value: u64 = 0;
    for c in token.chars() {
        let d = digit_value(c).expect("digit run") as u64;
        value = value
            .checked_mul(10)
            .and_then(|v| v.checked_add(d))
            .filter(|&v| v <= MAX_SUPPORTED)
            .ok_or_else(|| Error::UnsupportedNumeral { token: token.to_string() })?;
    }
    Ok(value)
}

/// Replace every digit run with its cardinal. Runs joined by `/` or `-`
/// (dates such as २०८०/०५/१२) are read group by group.
pub fn expand_numerals(text: &str) -> Result<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len() * 2);
    let mut i = 0;
    while i < chars.len() {
        if digit_value(chars[i]).is_none() {
            out.push(chars[i]);
            i += 1;
            continue;
        }
        let mut groups: Vec<String> = Vec::new();
        loop {
            let start = i;
            while i < chars.len() && digit_value(chars[i]).is_some() {
                i += 1;
            }
            groups.push(chars[start..i].iter().collect());
            let joined = i + 1 < chars.len()
                && (chars[i] == '/' || chars[i] == '-')
                && digit_value(chars[i + 1]).is_some();
            if !joined {
                break;
            }
            i += 1;
        }
        let words = groups
            .iter()
            .map(|g| parse_run(g).map(|v| cardinal(v).expect("range checked")))
            .collect::<Result<Vec<_>>>()?;
        out.push_str(&words.join(" "));
    }
    Ok(out)
}
