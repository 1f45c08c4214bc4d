//! Evaluation metrics: cosine scoring with quality bands, equal error rate,
//! 2-D projections of embedding clouds, cluster separation, comparison
//! bundles and corpus SNR summaries.

mod bundle;
mod eer;
mod projection;
mod snr_report;
pub mod svg;

use serde::{Deserialize, Serialize};

pub use bundle::{comparison_bundle, frame_correlation, BundleFiles, ComparisonInput};
pub use eer::{auc, compute_eer, EerResult, ScoreSet};
pub use projection::{project_embeddings, silhouette, ProjectionMethod, Projection2D};
pub use snr_report::{snr_report, ClipSnr, SnrReport, SpeakerSnr};

/// Dot product over the common length, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "embedding sizes differ");
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>().clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Band {
    Poor,
    Fair,
    Good,
    Excellent,
}

pub const EXCELLENT_AT: f64 = 0.95;
pub const GOOD_AT: f64 = 0.90;
pub const FAIR_AT: f64 = 0.85;

impl Band {
    /// Excellent at or above 0.95, Good at or above 0.90, Fair at or above
    /// 0.85, Poor below.
    pub fn of(score: f64) -> Band {
        if score >= EXCELLENT_AT {
            Band::Excellent
        } else if score >= GOOD_AT {
            Band::Good
        } else if score >= FAIR_AT {
            Band::Fair
        } else {
            Band::Poor
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Band::Excellent => "Excellent",
            Band::Good => "Good",
            Band::Fair => "Fair",
            Band::Poor => "Poor",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerScore {
    pub speaker_id: String,
    pub score: f64,
    pub band: Band,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub speakers: Vec<SpeakerScore>,
    pub mean: f64,
}

/// Band every `(speaker, score)` pair and average the scores.
pub fn similarity_report(scores: &[(String, f64)]) -> SimilarityReport {
    let speakers: Vec<SpeakerScore> = scores
        .iter()
        .map(|(id, s)| SpeakerScore {
            speaker_id: id.clone(),
            score: *s,
            band: Band::of(*s),
        })
        .collect();
    let mean = if scores.is_empty() {
        0.0
    } else {
        scores.iter().map(|(_, s)| s).sum::<f64>() / scores.len() as f64
    };
    SimilarityReport { speakers, mean }
}

/// Scored verification trial, one line of a score file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub pair_id: String,
    pub label: TrialLabel,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialLabel {
    Genuine,
    Impostor,
}

impl ScoreSet {
    pub fn from_records(records: &[ScoreRecord]) -> Self {
        let mut set = ScoreSet::default();
        for r in records {
            match r.label {
                TrialLabel::Genuine => set.genuine.push(r.score),
                TrialLabel::Impostor => set.impostor.push(r.score),
            }
        }
        set
    }

    /// All same-label pairs as genuine trials and all cross-label pairs as
    /// impostor trials.
    pub fn from_embeddings(embeddings: &[Vec<f64>], labels: &[String]) -> Self {
        let mut set = ScoreSet::default();
        for i in 0..embeddings.len() {
            for j in i + 1..embeddings.len() {
                let s = cosine_similarity(&embeddings[i], &embeddings[j]);
                if labels[i] == labels[j] {
                    set.genuine.push(s);
                } else {
                    set.impostor.push(s);
                }
            }
        }
        set
    }
}
