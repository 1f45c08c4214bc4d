use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EerResult {
    pub eer: f64,
    pub threshold: f64,
}

/// Equal error rate over the thresholds formed by every observed score.
///
/// At threshold `t`, FAR is the fraction of impostor scores `>= t` and FRR
/// the fraction of genuine scores `< t`. The first threshold where
/// `FAR - FRR` reaches zero gives the EER directly; otherwise both rates are
/// interpolated linearly between the two thresholds where the sign flips.
/// A sentinel threshold above the largest score (FAR 0, FRR 1) closes the
/// sweep.
pub fn compute_eer(scores: &ScoreSet) -> Result<EerResult> {
    if scores.genuine.is_empty() || scores.impostor.is_empty() {
        return Err(Error::DegenerateInput("EER needs both genuine and impostor scores".into()));
    }
    if scores.genuine.iter().chain(&scores.impostor).any(|s| !s.is_finite()) {
        return Err(Error::DegenerateInput("EER scores must be finite".into()));
    }
    let mut genuine = scores.genuine.clone();
    let mut impostor = scores.impostor.clone();
    genuine.sort_by(f64::total_cmp);
    impostor.sort_by(f64::total_cmp);
    let mut thresholds: Vec<f64> = genuine.iter().chain(&impostor).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    let (ng, ni) = (genuine.len() as f64, impostor.len() as f64);
    let rates = |t: f64| {
        let below_g = genuine.partition_point(|&s| s < t) as f64;
        let below_i = impostor.partition_point(|&s| s < t) as f64;
        ((ni - below_i) / ni, below_g / ng)
    };

    let mut prev: Option<(f64, f64, f64)> = None;
    for &t in &thresholds {
        let (far, frr) = rates(t);
        let d = far - frr;
        if d == 0.0 {
            return Ok(EerResult { eer: far, threshold: t });
        }
        if d < 0.0 {
            return Ok(interpolate(prev.expect("FAR - FRR is 1 at the lowest score"), (t, far, frr)));
        }
        prev = Some((t, far, frr));
    }
    let last = *thresholds.last().expect("non-empty");
    let sentinel = last + last.abs().max(1.0) * f64::EPSILON * 4.0;
    Ok(interpolate(prev.expect("non-empty"), (sentinel, 0.0, 1.0)))
}

fn interpolate((t0, far0, frr0): (f64, f64, f64), (t1, far1, frr1): (f64, f64, f64)) -> EerResult {
    let d0 = far0 - frr0;
    let d1 = far1 - frr1;
    let alpha = d0 / (d0 - d1);
    EerResult {
        eer: far0 + alpha * (far1 - far0),
        threshold: t0 + alpha * (t1 - t0),
    }
}

/// Probability that a random genuine score exceeds a random impostor score,
/// ties counting one half.
pub fn auc(scores: &ScoreSet) -> Result<f64> {
    if scores.genuine.is_empty() || scores.impostor.is_empty() {
        return Err(Error::DegenerateInput("AUC needs both genuine and impostor scores".into()));
    }
    let mut impostor = scores.impostor.clone();
    impostor.sort_by(f64::total_cmp);
    let mut wins = 0.0;
    for &g in &scores.genuine {
        let below = impostor.partition_point(|&s| s < g);
        let not_above = impostor.partition_point(|&s| s <= g);
        wins += below as f64 + 0.5 * (not_above - below) as f64;
    }
    Ok(wins / (scores.genuine.len() as f64 * impostor.len() as f64))
}
