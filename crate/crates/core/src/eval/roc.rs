//! ROC curves, Mann-Whitney AUC, and FPR-budget thresholds.

use crate::error::{Error, Result};

/// Samples are flagged abnormal when `score >= threshold`.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`, one point per distinct score.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
    pub positives: usize,
    pub negatives: usize,
}

fn check_scores(name: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::Data(format!("no {name} scores")));
    }
    if v.iter().any(|s| s.is_nan()) {
        return Err(Error::Data(format!("NaN among {name} scores")));
    }
    Ok(())
}

/// Sweeps every distinct score as a threshold. The AUC is the pair
/// statistic `(wins + ties / 2) / (n_pos * n_neg)`, computed from integer
/// counts so it is exact up to one final rounding.
pub fn roc_auc(normal: &[f64], abnormal: &[f64]) -> Result<RocCurve> {
    check_scores("normal", normal)?;
    check_scores("abnormal", abnormal)?;
    let mut all: Vec<(f64, bool)> = normal
        .iter()
        .map(|&s| (s, false))
        .chain(abnormal.iter().map(|&s| (s, true)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (np, nn) = (abnormal.len() as u64, normal.len() as u64);
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    // Twice the Mann-Whitney statistic.
    let mut twice_u: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let value = all[i].0;
        let (mut tp_here, mut fp_here) = (0u64, 0u64);
        while i < all.len() && all[i].0.total_cmp(&value).is_eq() {
            if all[i].1 {
                tp_here += 1;
            } else {
                fp_here += 1;
            }
            i += 1;
        }
        // Positives at this value beat every normal below it and tie with
        // the normals at it.
        let normals_below = nn - fp - fp_here;
        twice_u += u128::from(tp_here) * u128::from(2 * normals_below + fp_here);
        tp += tp_here;
        fp += fp_here;
        points.push((fp as f64 / nn as f64, tp as f64 / np as f64));
    }
    let auc = twice_u as f64 / (2 * u128::from(np) * u128::from(nn)) as f64;
    Ok(RocCurve {
        points,
        auc,
        positives: np as usize,
        negatives: nn as usize,
    })
}

/// Smallest observed normal score `s` whose empirical false-positive rate
/// `#(score >= s) / n` stays within `budget`.
///
/// Needs at least 10 scores and `n * budget >= 1`. When ties at the maximum
/// already exceed the budget, returns the next float above the maximum so
/// nothing is flagged.
pub fn pick_threshold(normal: &[f64], budget: f64) -> Result<f64> {
    if !(budget > 0.0 && budget <= 1.0) {
        return Err(Error::Config(format!("FPR budget {budget} must lie in (0, 1]")));
    }
    check_scores("normal", normal)?;
    let n = normal.len();
    if n < 10 || (n as f64) * budget < 1.0 {
        return Err(Error::Data(format!(
            "{n} normal scores cannot resolve an FPR budget of {budget}"
        )));
    }
    let mut sorted = normal.to_vec();
    sorted.sort_by(f64::total_cmp);
    let allowed = (budget * n as f64 + 1e-9).floor() as usize;
    // Walk the distinct values from the top while the flagged count fits.
    let mut best = None;
    let mut i = n;
    while i > 0 {
        let value = sorted[i - 1];
        let mut j = i;
        while j > 0 && sorted[j - 1] == value {
            j -= 1;
        }
        if n - j > allowed {
            break;
        }
        best = Some(value);
        i = j;
    }
    Ok(best.unwrap_or_else(|| sorted[n - 1].next_up()))
}

/// Fraction of `scores` flagged at `threshold`.
pub fn flagged_fraction(scores: &[f64], threshold: f64) -> f64 {
    scores.iter().filter(|&&s| s >= threshold).count() as f64 / scores.len() as f64
}
