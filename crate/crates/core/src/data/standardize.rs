//! Per-channel z-scoring with statistics taken from the training split.

use std::collections::BTreeMap;

use crate::data::waveform::WaveformTensor;
use crate::error::{Error, Result};

/// Population mean and standard deviation per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    /// Channels with (numerically) zero spread; they standardise to zero.
    pub constant: Vec<bool>,
}

impl ChannelStats {
    pub fn fit(data: &WaveformTensor) -> Self {
        let c = data.channels();
        let mut sum = vec![0.0f64; c];
        let mut count = 0usize;
        for row in data.data().data().chunks_exact(c) {
            for (s, &v) in sum.iter_mut().zip(row) {
                *s += f64::from(v);
            }
            count += 1;
        }
        let n = count.max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let mut sq = vec![0.0f64; c];
        for row in data.data().data().chunks_exact(c) {
            for ((s, &v), m) in sq.iter_mut().zip(row).zip(&mean) {
                let d = f64::from(v) - m;
                *s += d * d;
            }
        }
        let sd: Vec<f64> = sq.iter().map(|s| (s / n).sqrt()).collect();
        let constant = sd
            .iter()
            .zip(&mean)
            .map(|(s, m)| *s <= 1e-12 * m.abs().max(1.0))
            .collect();
        Self { mean, sd, constant }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// Standardises `data` in place.
    pub fn apply(&self, data: &mut WaveformTensor) -> Result<()> {
        let c = data.channels();
        if c != self.channels() {
            return Err(Error::Shape(format!("stats for {} channels, data has {c}", self.channels())));
        }
        for row in data.data_mut().data_mut().chunks_exact_mut(c) {
            for (ch, v) in row.iter_mut().enumerate() {
                *v = if self.constant[ch] {
                    0.0
                } else {
                    ((f64::from(*v) - self.mean[ch]) / self.sd[ch]) as f32
                };
            }
        }
        Ok(())
    }

    /// Entries for a checkpoint or manifest key-value block.
    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(",");
        let mut kv = BTreeMap::new();
        kv.insert("standardize.mean".into(), join(&self.mean));
        kv.insert("standardize.sd".into(), join(&self.sd));
        kv.insert(
            "standardize.constant".into(),
            self.constant
                .iter()
                .map(|&b| if b { "1" } else { "0" })
                .collect::<Vec<_>>()
                .join(","),
        );
        kv
    }

    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| {
            kv.get(k)
                .ok_or_else(|| Error::Format(format!("missing key {k}")))
        };
        let floats = |k: &str| -> Result<Vec<f64>> {
            get(k)?
                .split(',')
                .map(|s| s.parse().map_err(|_| Error::Format(format!("bad number '{s}' in {k}"))))
                .collect()
        };
        let mean = floats("standardize.mean")?;
        let sd = floats("standardize.sd")?;
        let constant: Vec<bool> = get("standardize.constant")?.split(',').map(|s| s == "1").collect();
        if sd.len() != mean.len() || constant.len() != mean.len() {
            return Err(Error::Format("standardisation vectors differ in length".into()));
        }
        Ok(Self { mean, sd, constant })
    }
}

/// Z-scores `data` with the given statistics, or with its own when `stats`
/// is `None`. Returns the statistics used.
pub fn standardize(data: &WaveformTensor, stats: Option<&ChannelStats>) -> Result<(WaveformTensor, ChannelStats)> {
    let stats = match stats {
        Some(s) => s.clone(),
        None => ChannelStats::fit(data),
    };
    let mut out = data.clone();
    stats.apply(&mut out)?;
    Ok((out, stats))
}
