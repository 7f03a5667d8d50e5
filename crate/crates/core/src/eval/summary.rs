//! Box statistics and log-binned score densities per group.

use std::collections::BTreeMap;

use crate::data::Label;
use crate::error::{Error, Result};
use crate::eval::score::ScoreSet;

pub const DENSITY_LOG_MIN: f64 = -7.0;
pub const DENSITY_LOG_MAX: f64 = 1.0;
pub const DENSITY_BIN_WIDTH: f64 = 0.25;

/// Number of log10 bins between the density limits.
pub fn density_bins() -> usize {
    ((DENSITY_LOG_MAX - DENSITY_LOG_MIN) / DENSITY_BIN_WIDTH).round() as usize
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxStats {
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

/// Linear-interpolation quantile of sorted data at position `p * (n - 1)`.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}

pub fn box_stats(values: &[f64]) -> Result<BoxStats> {
    if values.is_empty() {
        return Err(Error::Data("box statistics of an empty group".into()));
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(BoxStats {
        count: s.len(),
        min: s[0],
        q1: quantile(&s, 0.25),
        median: quantile(&s, 0.5),
        q3: quantile(&s, 0.75),
        max: s[s.len() - 1],
        mean: s.iter().sum::<f64>() / s.len() as f64,
    })
}

/// Bin index for a score; values outside the range (including zero) land
/// in the edge bins.
pub fn density_bin(value: f64) -> usize {
    let bins = density_bins();
    if !(value > 0.0) {
        return 0;
    }
    let k = ((value.log10() - DENSITY_LOG_MIN) / DENSITY_BIN_WIDTH).floor();
    if k < 0.0 {
        0
    } else {
        (k as usize).min(bins - 1)
    }
}

/// Counts per log10 bin.
pub fn density(values: &[f64]) -> Vec<usize> {
    let mut counts = vec![0; density_bins()];
    for &v in values {
        counts[density_bin(v)] += 1;
    }
    counts
}

/// Group key: module, channel (`None` is the per-sample aggregate), label.
pub type GroupKey = (usize, Option<usize>, Label);

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub boxes: BTreeMap<GroupKey, BoxStats>,
    pub densities: BTreeMap<GroupKey, Vec<usize>>,
}

/// Statistics per (module, channel, label), plus the aggregate score as a
/// pseudo-channel.
pub fn summarize(scores: &ScoreSet) -> Result<Summary> {
    let mut groups: BTreeMap<GroupKey, Vec<f64>> = BTreeMap::new();
    for s in &scores.scores {
        groups.entry((s.module, None, s.label)).or_default().push(s.aggregate);
        for (c, &v) in s.channels.iter().enumerate() {
            groups.entry((s.module, Some(c), s.label)).or_default().push(v);
        }
    }
    let mut boxes = BTreeMap::new();
    let mut densities = BTreeMap::new();
    for (k, v) in groups {
        boxes.insert(k, box_stats(&v)?);
        densities.insert(k, density(&v));
    }
    Ok(Summary { boxes, densities })
}
