//! Mean opinion scores per speaker and per gender.
//!
//! Spreads are population standard deviations. Each speaker row carries two
//! spreads: over all of that speaker's individual ratings, and over the
//! per-pair means. Gender rows average the speaker means.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use swar_core::corpus::Gender;

use crate::{ClipPair, MosError, RatingRecord, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
            n: values.len(),
        })
    }

    /// `mean ± std` to two decimals.
    pub fn display(&self) -> String {
        format!("{:.2} ± {:.2}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerRow {
    pub speaker_id: String,
    pub gender: String,
    pub pairs_rated: usize,
    pub ratings: usize,
    /// Over individual ratings.
    pub quality: Stat,
    pub similarity: Stat,
    /// Over per-pair means.
    pub quality_over_pairs: Stat,
    pub similarity_over_pairs: Stat,
    #[serde(rename = "MOS Quality")]
    pub quality_display: String,
    #[serde(rename = "MOS Similarity")]
    pub similarity_display: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenderRow {
    pub gender: String,
    pub speakers: usize,
    /// Over speaker means.
    pub quality: Stat,
    pub similarity: Stat,
    #[serde(rename = "MOS Quality")]
    pub quality_display: String,
    #[serde(rename = "MOS Similarity")]
    pub similarity_display: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MosAggregate {
    /// True when there are no ratings; all rows are then empty.
    pub empty: bool,
    pub records: usize,
    pub raters: usize,
    /// Over all ratings pooled.
    pub overall_quality: Option<Stat>,
    pub overall_similarity: Option<Stat>,
    pub genders: Vec<GenderRow>,
    pub speakers: Vec<SpeakerRow>,
}

fn gender_label(g: Gender) -> &'static str {
    match g {
        Gender::Male => "Male",
        Gender::Female => "Female",
        Gender::Other => "Other",
    }
}

fn gender_rank(g: Gender) -> u8 {
    match g {
        Gender::Male => 0,
        Gender::Female => 1,
        Gender::Other => 2,
    }
}

fn row(speaker_id: &str, gender: Gender, by_pair: &BTreeMap<&str, Vec<(f64, f64)>>) -> SpeakerRow {
    let all: Vec<(f64, f64)> = by_pair.values().flatten().copied().collect();
    let q: Vec<f64> = all.iter().map(|r| r.0).collect();
    let s: Vec<f64> = all.iter().map(|r| r.1).collect();
    let pq: Vec<f64> = by_pair.values().map(|v| v.iter().map(|r| r.0).sum::<f64>() / v.len() as f64).collect();
    let ps: Vec<f64> = by_pair.values().map(|v| v.iter().map(|r| r.1).sum::<f64>() / v.len() as f64).collect();
    let quality = Stat::of(&q).expect("rated speaker");
    let similarity = Stat::of(&s).expect("rated speaker");
    SpeakerRow {
        speaker_id: speaker_id.to_string(),
        gender: gender_label(gender).to_string(),
        pairs_rated: by_pair.len(),
        ratings: all.len(),
        quality_display: quality.display(),
        similarity_display: similarity.display(),
        quality,
        similarity,
        quality_over_pairs: Stat::of(&pq).expect("rated speaker"),
        similarity_over_pairs: Stat::of(&ps).expect("rated speaker"),
    }
}

/// Aggregate the final ratings. Every record must name a known pair.
pub fn aggregate(records: &[RatingRecord], pairs: &[ClipPair]) -> Result<MosAggregate> {
    let by_id: HashMap<&str, &ClipPair> = pairs.iter().map(|p| (p.pair_id.as_str(), p)).collect();
    // speaker -> (gender, pair -> ratings)
    let mut speakers: BTreeMap<&str, (Gender, BTreeMap<&str, Vec<(f64, f64)>>)> = BTreeMap::new();
    let mut raters = std::collections::BTreeSet::new();
    for r in records {
        let p = by_id.get(r.pair_id.as_str()).ok_or_else(|| MosError::UnknownPair(r.pair_id.clone()))?;
        raters.insert(r.rater_id.as_str());
        speakers
            .entry(p.speaker_id.as_str())
            .or_insert_with(|| (p.gender, BTreeMap::new()))
            .1
            .entry(p.pair_id.as_str())
            .or_default()
            .push((r.quality as f64, r.similarity as f64));
    }
    let mut rows: Vec<(Gender, SpeakerRow)> = speakers.iter().map(|(id, (g, m))| (*g, row(id, *g, m))).collect();
    rows.sort_by(|a, b| (gender_rank(a.0), &a.1.speaker_id).cmp(&(gender_rank(b.0), &b.1.speaker_id)));

    let mut genders = Vec::new();
    for g in [Gender::Male, Gender::Female, Gender::Other] {
        let members: Vec<&SpeakerRow> = rows.iter().filter(|(rg, _)| *rg == g).map(|(_, r)| r).collect();
        if members.is_empty() {
            continue;
        }
        let q: Vec<f64> = members.iter().map(|r| r.quality.mean).collect();
        let s: Vec<f64> = members.iter().map(|r| r.similarity.mean).collect();
        let quality = Stat::of(&q).expect("non-empty");
        let similarity = Stat::of(&s).expect("non-empty");
        genders.push(GenderRow {
            gender: gender_label(g).to_string(),
            speakers: members.len(),
            quality_display: quality.display(),
            similarity_display: similarity.display(),
            quality,
            similarity,
        });
    }
    let q: Vec<f64> = records.iter().map(|r| r.quality as f64).collect();
    let s: Vec<f64> = records.iter().map(|r| r.similarity as f64).collect();
    Ok(MosAggregate {
        empty: records.is_empty(),
        records: records.len(),
        raters: raters.len(),
        overall_quality: Stat::of(&q),
        overall_similarity: Stat::of(&s),
        genders,
        speakers: rows.into_iter().map(|(_, r)| r).collect(),
    })
}
