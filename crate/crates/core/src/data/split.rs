//! Stratified train/validation/test split.
//!
//! Normal samples are stratified by module: each stratum is shuffled, every
//! sample gets the fractional rank `(j + 0.5) / n` within its stratum, and
//! the globally rank-sorted list is cut at the target split sizes. This
//! keeps per-module proportions within one sample of the targets while
//! hitting the global counts exactly. Abnormal samples never enter
//! training: each (module, class) stratum sends `floor(n * q)` samples to
//! validation, with `q` the validation share of the non-training fractions,
//! and the rest to test.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::waveform::{Label, WaveformTensor};
use crate::error::{Error, Result};
use crate::seeds::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.8,
            validation: 0.1,
            test: 0.1,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
            return Err(Error::Config("split fractions must be nonnegative".into()));
        }
        let total: f64 = parts.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions sum to {total}, not 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: WaveformTensor,
    pub validation: Option<WaveformTensor>,
    pub test: Option<WaveformTensor>,
}

/// Row indices per split, in ascending order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split_indices(data: &WaveformTensor, fractions: SplitFractions, seed: u64) -> Result<SplitIndices> {
    fractions.validate()?;
    let mut strata: BTreeMap<(usize, Label), Vec<usize>> = BTreeMap::new();
    for i in 0..data.len() {
        strata.entry((data.module_ids()[i], data.labels()[i])).or_default().push(i);
    }
    let mut out = SplitIndices {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    let mut ranked: Vec<(f64, usize, usize)> = Vec::new();
    let rest = fractions.validation + fractions.test;
    for (s, (&(module, label), members)) in strata.iter().enumerate() {
        let mut members = members.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[module as u64, u64::from(label.code())]));
        members.shuffle(&mut rng);
        if label.is_normal() {
            let n = members.len();
            for (j, &i) in members.iter().enumerate() {
                ranked.push(((j as f64 + 0.5) / n as f64, s, i));
            }
        } else {
            if rest <= 0.0 {
                return Err(Error::Config(
                    "abnormal samples present but no validation or test fraction".into(),
                ));
            }
            let n_val = (members.len() as f64 * fractions.validation / rest).floor() as usize;
            out.validation.extend_from_slice(&members[..n_val]);
            out.test.extend_from_slice(&members[n_val..]);
        }
    }
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let n = ranked.len();
    let n_val = (n as f64 * fractions.validation).round() as usize;
    let n_test = ((n as f64 * fractions.test).round() as usize).min(n - n_val);
    let n_train = n - n_val - n_test;
    for (pos, &(_, _, i)) in ranked.iter().enumerate() {
        if pos < n_train {
            out.train.push(i);
        } else if pos < n_train + n_val {
            out.validation.push(i);
        } else {
            out.test.push(i);
        }
    }
    out.train.sort_unstable();
    out.validation.sort_unstable();
    out.test.sort_unstable();
    if fractions.train > 0.0 {
        for (&(module, label), members) in strata.iter().filter(|(k, _)| k.1.is_normal()) {
            if !members.iter().any(|i| out.train.binary_search(i).is_ok()) {
                return Err(Error::Data(format!(
                    "stratum (module {module}, {label}) with {} samples is too small to split",
                    members.len()
                )));
            }
        }
    }
    Ok(out)
}

/// Stratified split; training receives normal samples only.
pub fn split(data: &WaveformTensor, fractions: SplitFractions, seed: u64) -> Result<Splits> {
    let idx = split_indices(data, fractions, seed)?;
    if idx.train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    let pick = |v: &[usize]| -> Result<Option<WaveformTensor>> {
        if v.is_empty() {
            Ok(None)
        } else {
            data.select(v).map(Some)
        }
    };
    Ok(Splits {
        train: data.select(&idx.train)?,
        validation: pick(&idx.validation)?,
        test: pick(&idx.test)?,
    })
}
