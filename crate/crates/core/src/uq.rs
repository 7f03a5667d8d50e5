//! Latent-sampling uncertainty: reconstruction replicas, per-point bands and
//! the miscalibration area of the implied Gaussian intervals.

use std::io::Write;
use std::ops::Range;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::io::csv_err;
use crate::data::WaveformTensor;
use crate::error::{Error, Result};
use crate::eval::score::draw_noise;
use crate::eval::Reconstructor;
use crate::tensor::Tensor;

/// Draws reconstructed together before their statistics are folded in.
const DRAW_CHUNK: usize = 16;

/// Floor applied to replica SDs when building intervals.
pub const SD_FLOOR: f64 = 1e-12;

/// Per-point running statistics over a set of latent draws.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaSet {
    pub sample_ids: Vec<u64>,
    pub modules: Vec<usize>,
    pub time_steps: usize,
    pub channels: usize,
    pub seed: u64,
    pub draws: usize,
    sum: Vec<f64>,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl ReplicaSet {
    /// Mean of the replicas at every `(sample, time, channel)` point.
    pub fn mean(&self) -> Vec<f64> {
        let n = self.draws as f64;
        self.sum.iter().map(|s| s / n).collect()
    }

    /// Sample standard deviation at every point.
    pub fn sd(&self) -> Vec<f64> {
        let d = (self.draws - 1) as f64;
        self.m2.iter().map(|m| (m.max(0.0) / d).sqrt()).collect()
    }

    fn point_len(&self) -> usize {
        self.time_steps * self.channels
    }

    fn empty(data: &WaveformTensor, seed: u64) -> Self {
        let n = data.len() * data.time_steps() * data.channels();
        Self {
            sample_ids: data.sample_ids().to_vec(),
            modules: data.module_ids().to_vec(),
            time_steps: data.time_steps(),
            channels: data.channels(),
            seed,
            draws: 0,
            sum: vec![0.0; n],
            mean: vec![0.0; n],
            m2: vec![0.0; n],
        }
    }

    fn push(&mut self, y: &[f32]) {
        self.draws += 1;
        let n = self.draws as f64;
        for (k, &v) in y.iter().enumerate() {
            let v = f64::from(v);
            self.sum[k] += v;
            let delta = v - self.mean[k];
            self.mean[k] += delta / n;
            self.m2[k] += delta * (v - self.mean[k]);
        }
    }

    /// Pools two sets drawn for the same samples and seed (Chan et al.
    /// parallel update).
    pub fn merge(&self, other: &ReplicaSet) -> Result<ReplicaSet> {
        if self.sample_ids != other.sample_ids || self.seed != other.seed || self.point_len() != other.point_len() {
            return Err(Error::Data("replica sets cover different samples or seeds".into()));
        }
        let (na, nb) = (self.draws as f64, other.draws as f64);
        let n = na + nb;
        let mut out = self.clone();
        out.draws = self.draws + other.draws;
        for k in 0..self.sum.len() {
            let delta = other.mean[k] - self.mean[k];
            out.sum[k] = self.sum[k] + other.sum[k];
            out.mean[k] = self.mean[k] + delta * nb / n;
            out.m2[k] = self.m2[k] + other.m2[k] + delta * delta * na * nb / n;
        }
        Ok(out)
    }

    /// `time_step,channel,mean,sd` for one sample.
    pub fn write_bands(&self, w: impl Write, sample: usize, channel_names: &[String]) -> Result<()> {
        let (mean, sd) = (self.mean(), self.sd());
        let base = sample * self.point_len();
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["time_step", "channel", "mean", "sd"]).map_err(csv_err)?;
        for t in 0..self.time_steps {
            for c in 0..self.channels {
                let k = base + t * self.channels + c;
                out.write_record([t.to_string(), channel_names[c].clone(), format!("{:e}", mean[k]), format!("{:e}", sd[k])])
                    .map_err(csv_err)?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// One calibration curve per channel, pooling time steps and samples.
    pub fn channel_calibration(&self, observed: &WaveformTensor) -> Result<Vec<CalibrationCurve>> {
        if observed.sample_ids() != self.sample_ids.as_slice()
            || observed.time_steps() != self.time_steps
            || observed.channels() != self.channels
        {
            return Err(Error::Data("observations do not match the replica set".into()));
        }
        let (mean, sd) = (self.mean(), self.sd());
        let obs = observed.data().data();
        (0..self.channels)
            .map(|c| {
                let pick = |v: &dyn Fn(usize) -> f64| (c..obs.len()).step_by(self.channels).map(v).collect::<Vec<f64>>();
                calibration(&pick(&|k| mean[k]), &pick(&|k| sd[k]), &pick(&|k| f64::from(obs[k])))
            })
            .collect()
    }
}

/// Reconstructs every sample once per draw in `draws`, with noise keyed by
/// draw index and sample id so disjoint ranges can be merged later.
pub fn replicate_range(model: &dyn Reconstructor, data: &WaveformTensor, draws: Range<usize>, seed: u64) -> Result<ReplicaSet> {
    if data.is_empty() {
        return Err(Error::Data("nothing to replicate".into()));
    }
    let mut set = ReplicaSet::empty(data, seed);
    let x = data.data();
    let draw_ids: Vec<usize> = draws.collect();
    for chunk in draw_ids.chunks(DRAW_CHUNK) {
        let ys = chunk
            .par_iter()
            .map(|&d| {
                let eps = draw_noise(data.sample_ids(), model.latent_dim(), seed, d)?;
                model.reconstruct(x, data.module_ids(), Some(&eps))
            })
            .collect::<Result<Vec<Tensor>>>()?;
        for y in &ys {
            if !y.is_finite() {
                return Err(Error::NonFinite("replica reconstruction".into()));
            }
            set.push(y.data());
        }
    }
    Ok(set)
}

pub fn replicate(model: &dyn Reconstructor, data: &WaveformTensor, n_draws: usize, seed: u64) -> Result<ReplicaSet> {
    if n_draws < 2 {
        return Err(Error::Config(format!("need at least 2 draws, got {n_draws}")));
    }
    replicate_range(model, data, 0..n_draws, seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationCurve {
    /// Expected proportions 0.01, 0.02, ..., 0.99.
    pub expected: Vec<f64>,
    pub observed: Vec<f64>,
    /// Mean absolute gap to the diagonal (trapezoid rule).
    pub area: f64,
    /// Some SDs were below [`SD_FLOOR`] and were floored.
    pub degenerate: bool,
}

pub fn expected_proportions() -> Vec<f64> {
    (1..=99).map(|k| k as f64 / 100.0).collect()
}

/// Coverage of the central Gaussian intervals `mean +- z(p) * sd`.
pub fn calibration(mean: &[f64], sd: &[f64], observed: &[f64]) -> Result<CalibrationCurve> {
    if mean.len() != sd.len() || mean.len() != observed.len() || mean.is_empty() {
        return Err(Error::Data("calibration inputs must be aligned and nonempty".into()));
    }
    let unit = Normal::standard();
    let degenerate = sd.iter().any(|&s| s < SD_FLOOR);
    // Standardised distance of each observation; coverage is then a count.
    let mut dist: Vec<f64> = mean
        .iter()
        .zip(sd)
        .zip(observed)
        .map(|((m, s), o)| (o - m).abs() / s.max(SD_FLOOR))
        .collect();
    dist.sort_by(f64::total_cmp);
    let expected = expected_proportions();
    let n = dist.len() as f64;
    let observed: Vec<f64> = expected
        .iter()
        .map(|&p| {
            let z = unit.inverse_cdf(0.5 * (1.0 + p));
            dist.partition_point(|&d| d <= z) as f64 / n
        })
        .collect();
    let gap: Vec<f64> = observed.iter().zip(&expected).map(|(o, e)| (o - e).abs()).collect();
    // Trapezoid rule on the uniform grid, normalised by its span. The exact
    // value never exceeds 0.5 since coverage is monotone in p; clamp the
    // last-ulp rounding so the bound holds in floating point too.
    let last = gap.len() - 1;
    let inner: f64 = gap[1..last].iter().sum();
    let area = ((0.5 * (gap[0] + gap[last]) + inner) / last as f64).clamp(0.0, 0.5);
    Ok(CalibrationCurve {
        expected,
        observed,
        area,
        degenerate,
    })
}

/// Seeded subset of `count` sample positions, in ascending order.
pub fn select_examples(len: usize, count: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, len, count.min(len)).into_vec();
    idx.sort_unstable();
    idx
}

/// `channel,ma,n_draws,seed`.
pub fn write_channel_areas(w: impl Write, channel_names: &[String], curves: &[CalibrationCurve], draws: usize, seed: u64) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["channel", "ma", "n_draws", "seed"]).map_err(csv_err)?;
    for (name, c) in channel_names.iter().zip(curves) {
        out.write_record([name.clone(), format!("{:e}", c.area), draws.to_string(), seed.to_string()])
            .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}
