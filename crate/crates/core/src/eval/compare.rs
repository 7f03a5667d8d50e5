//! AUC tables per fault class and module, and method comparisons.

use crate::data::{FaultClass, Label};
use crate::error::{Error, Result};
use crate::eval::roc::roc_auc;
use crate::eval::score::ScoreSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AucStat {
    /// Mean over replicas in sampled mode, otherwise the AUC of the scores.
    pub auc: f64,
    /// Sample standard deviation over replicas (sampled mode, >= 2 draws).
    pub sd: Option<f64>,
    pub replicas: usize,
    pub positives: usize,
    pub negatives: usize,
}

/// One (fault class, module) cell; `module == None` pools every module.
#[derive(Debug, Clone, PartialEq)]
pub struct AucCell {
    pub fault: FaultClass,
    pub module: Option<usize>,
    pub multi: Option<AucStat>,
    pub single: Option<AucStat>,
}

impl AucCell {
    pub fn delta(&self) -> Option<f64> {
        Some(self.multi?.auc - self.single?.auc)
    }
}

fn cell_indices(scores: &ScoreSet, fault: FaultClass, module: Option<usize>) -> (Vec<usize>, Vec<usize>) {
    let in_module = |m: usize| module.is_none_or(|x| x == m);
    let normal = scores.indices(|s| s.label == Label::Normal && in_module(s.module));
    let abnormal = scores.indices(|s| s.label == Label::Fault(fault) && in_module(s.module));
    (normal, abnormal)
}

/// AUC of one cell, or `None` when either class is missing.
pub fn cell_auc(scores: &ScoreSet, fault: FaultClass, module: Option<usize>) -> Result<Option<AucStat>> {
    let (normal, abnormal) = cell_indices(scores, fault, module);
    if normal.is_empty() || abnormal.is_empty() {
        return Ok(None);
    }
    let pick = |v: &[f64], idx: &[usize]| idx.iter().map(|&i| v[i]).collect::<Vec<f64>>();
    let stat = match &scores.replicas {
        Some(reps) if !reps.is_empty() => {
            let aucs = reps
                .iter()
                .map(|r| roc_auc(&pick(r, &normal), &pick(r, &abnormal)).map(|c| c.auc))
                .collect::<Result<Vec<_>>>()?;
            let n = aucs.len() as f64;
            let mean = aucs.iter().sum::<f64>() / n;
            let sd = (aucs.len() >= 2)
                .then(|| (aucs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
            AucStat {
                auc: mean,
                sd,
                replicas: aucs.len(),
                positives: abnormal.len(),
                negatives: normal.len(),
            }
        }
        _ => {
            let agg = scores.aggregates();
            AucStat {
                auc: roc_auc(&pick(&agg, &normal), &pick(&agg, &abnormal))?.auc,
                sd: None,
                replicas: 0,
                positives: abnormal.len(),
                negatives: normal.len(),
            }
        }
    };
    Ok(Some(stat))
}

fn modules_of(scores: &ScoreSet) -> Vec<usize> {
    let mut m: Vec<usize> = scores.scores.iter().map(|s| s.module).collect();
    m.sort_unstable();
    m.dedup();
    m
}

/// Cells for every fault class, per module and pooled, for one method
/// (stored in the `multi` slot).
pub fn auc_table(scores: &ScoreSet) -> Result<Vec<AucCell>> {
    let mut cells = Vec::new();
    for fault in FaultClass::ALL {
        for module in std::iter::once(None).chain(modules_of(scores).into_iter().map(Some)) {
            cells.push(AucCell {
                fault,
                module,
                multi: cell_auc(scores, fault, module)?,
                single: None,
            });
        }
    }
    Ok(cells)
}

/// Side-by-side AUCs of a conditional model and per-module models scored
/// on the same samples. Cells without data in a method are `None`.
pub fn compare_methods(
    multi: &ScoreSet,
    single: &ScoreSet,
    faults: &[FaultClass],
    modules: &[usize],
) -> Result<Vec<AucCell>> {
    if multi.sample_ids() != single.sample_ids() {
        return Err(Error::Data("methods were scored on different samples".into()));
    }
    let mut cells = Vec::new();
    for &fault in faults {
        for module in std::iter::once(None).chain(modules.iter().copied().map(Some)) {
            cells.push(AucCell {
                fault,
                module,
                multi: cell_auc(multi, fault, module)?,
                single: cell_auc(single, fault, module)?,
            });
        }
    }
    Ok(cells)
}

/// Pooled AUC of each channel's score per fault class, ranked best first.
pub fn channel_auc(scores: &ScoreSet) -> Result<Vec<(FaultClass, Vec<(usize, f64)>)>> {
    let mut out = Vec::new();
    for fault in FaultClass::ALL {
        let (normal, abnormal) = cell_indices(scores, fault, None);
        if normal.is_empty() || abnormal.is_empty() {
            continue;
        }
        let mut ranked = Vec::new();
        for c in 0..scores.channel_names.len() {
            let get = |idx: &[usize]| idx.iter().map(|&i| scores.scores[i].channels[c]).collect::<Vec<_>>();
            ranked.push((c, roc_auc(&get(&normal), &get(&abnormal))?.auc));
        }
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        out.push((fault, ranked));
    }
    Ok(out)
}
