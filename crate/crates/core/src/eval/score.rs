//! Per-channel reconstruction-error scores.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::data::{Label, WaveformTensor};
use crate::error::{Error, Result};
use crate::model::latent::standard_normal;
use crate::model::{LatentNoise, Model, ModelMode};
use crate::params::ModelParameters;
use crate::seeds::derive_seed;
use crate::tensor::Tensor;
use crate::training::EVAL_CHUNK;

/// Anything that maps a batch of waveforms to reconstructions.
pub trait Reconstructor: Sync {
    fn latent_dim(&self) -> usize;

    /// `epsilon` rows align with the rows of `x`; `None` means `z = mu`.
    fn reconstruct(&self, x: &Tensor, modules: &[usize], epsilon: Option<&Tensor>) -> Result<Tensor>;
}

/// A model with frozen parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: Model,
    pub params: ModelParameters,
}

impl TrainedModel {
    pub fn new(model: Model, params: ModelParameters) -> Result<Self> {
        model.check_params(&params)?;
        Ok(Self { model, params })
    }
}

impl Reconstructor for TrainedModel {
    fn latent_dim(&self) -> usize {
        self.model.spec().latent_dim
    }

    fn reconstruct(&self, x: &Tensor, modules: &[usize], epsilon: Option<&Tensor>) -> Result<Tensor> {
        let m = match self.model.mode() {
            ModelMode::Vae => None,
            ModelMode::Cvae => {
                let count = self.model.spec().module_count;
                if let Some(&bad) = modules.iter().find(|&&m| m >= count) {
                    return Err(Error::Data(format!("model was not trained on module {bad}")));
                }
                Some(modules)
            }
        };
        let noise = match epsilon {
            Some(e) => LatentNoise::Fixed(e.clone()),
            None => LatentNoise::Zero,
        };
        self.model.reconstruct(&self.params, x, m, &noise)
    }
}

/// One unconditioned model per module.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModuleEnsemble {
    pub models: BTreeMap<usize, TrainedModel>,
}

impl Reconstructor for ModuleEnsemble {
    fn latent_dim(&self) -> usize {
        self.models.values().map(|m| m.latent_dim()).max().unwrap_or(1)
    }

    fn reconstruct(&self, x: &Tensor, modules: &[usize], epsilon: Option<&Tensor>) -> Result<Tensor> {
        let mut out = Tensor::zeros(x.dims());
        let row = x.len() / x.dims()[0];
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &m) in modules.iter().enumerate() {
            groups.entry(m).or_default().push(i);
        }
        for (m, rows) in groups {
            let model = self
                .models
                .get(&m)
                .ok_or_else(|| Error::Data(format!("no single-module model for module {m}")))?;
            let xs = x.select_rows(&rows)?;
            let eps = match epsilon {
                Some(e) => {
                    let e = e.select_rows(&rows)?;
                    let d = model.latent_dim();
                    let trimmed: Vec<f32> = (0..rows.len()).flat_map(|r| e.row(r)[..d].to_vec()).collect();
                    Some(Tensor::new(vec![rows.len(), d], trimmed)?)
                }
                None => None,
            };
            let y = model.reconstruct(&xs, &vec![m; rows.len()], eps.as_ref())?;
            for (k, &r) in rows.iter().enumerate() {
                out.data_mut()[r * row..(r + 1) * row].copy_from_slice(y.row(k));
            }
        }
        Ok(out)
    }
}

/// Returns its input: a perfect reconstructor.
#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl Reconstructor for Identity {
    fn latent_dim(&self) -> usize {
        1
    }

    fn reconstruct(&self, x: &Tensor, _modules: &[usize], _epsilon: Option<&Tensor>) -> Result<Tensor> {
        Ok(x.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreMode {
    /// `z = mu`.
    Deterministic,
    /// `draws` independent latent samples per input; the score is the mean
    /// of the per-draw errors.
    Sampled { draws: usize, seed: u64 },
}

pub const DEFAULT_DRAWS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyScore {
    pub sample_id: u64,
    pub module: usize,
    pub label: Label,
    /// Mean squared error per channel.
    pub channels: Vec<f64>,
    /// Mean of `channels`.
    pub aggregate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    pub channel_names: Vec<String>,
    pub scores: Vec<AnomalyScore>,
    /// Sampled mode only: `replicas[draw][sample]` aggregate score of each draw.
    pub replicas: Option<Vec<Vec<f64>>>,
}

impl ScoreSet {
    pub fn aggregates(&self) -> Vec<f64> {
        self.scores.iter().map(|s| s.aggregate).collect()
    }

    /// Indices of samples matching the predicate.
    pub fn indices(&self, pred: impl Fn(&AnomalyScore) -> bool) -> Vec<usize> {
        (0..self.scores.len()).filter(|&i| pred(&self.scores[i])).collect()
    }

    pub fn sample_ids(&self) -> Vec<u64> {
        self.scores.iter().map(|s| s.sample_id).collect()
    }
}

fn channel_mse(x: &[f32], y: &[f32], c: usize) -> Vec<f64> {
    let mut acc = vec![0.0f64; c];
    for (a, b) in x.chunks_exact(c).zip(y.chunks_exact(c)) {
        for ((s, &u), &v) in acc.iter_mut().zip(a).zip(b) {
            let d = f64::from(u) - f64::from(v);
            *s += d * d;
        }
    }
    let t = (x.len() / c) as f64;
    acc.iter().map(|s| s / t).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Latent noise for `draw` of each row, keyed by sample id so that batching
/// does not change the draw.
pub(crate) fn draw_noise(ids: &[u64], latent: usize, seed: u64, draw: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(ids.len() * latent);
    for &id in ids {
        data.extend(standard_normal(&[1, latent], derive_seed(seed, &[draw as u64, id])).into_data());
    }
    Tensor::new(vec![ids.len(), latent], data)
}

/// Scores every sample of `data`. Chunks run in parallel; results are
/// assembled in sample order.
pub fn score(model: &dyn Reconstructor, data: &WaveformTensor, mode: ScoreMode) -> Result<ScoreSet> {
    if data.is_empty() {
        return Err(Error::Data("nothing to score".into()));
    }
    let draws = match mode {
        ScoreMode::Deterministic => 0,
        ScoreMode::Sampled { draws, .. } if draws == 0 => {
            return Err(Error::Config("sampled scoring needs at least one draw".into()))
        }
        ScoreMode::Sampled { draws, .. } => draws,
    };
    let c = data.channels();
    let idx: Vec<usize> = (0..data.len()).collect();
    let chunks: Vec<&[usize]> = idx.chunks(EVAL_CHUNK).collect();
    // Per chunk: per-sample channel errors and per-draw aggregates.
    let results = chunks
        .par_iter()
        .map(|rows| -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
            let (x, modules) = data.batch(rows)?;
            let ids: Vec<u64> = rows.iter().map(|&i| data.sample_ids()[i]).collect();
            match mode {
                ScoreMode::Deterministic => {
                    let y = model.reconstruct(&x, &modules, None)?;
                    let ch = (0..rows.len()).map(|k| channel_mse(x.row(k), y.row(k), c)).collect();
                    Ok((ch, Vec::new()))
                }
                ScoreMode::Sampled { seed, .. } => {
                    let mut sums = vec![vec![0.0f64; c]; rows.len()];
                    let mut per_draw = Vec::with_capacity(draws);
                    for d in 0..draws {
                        let eps = draw_noise(&ids, model.latent_dim(), seed, d)?;
                        let y = model.reconstruct(&x, &modules, Some(&eps))?;
                        let mut aggs = Vec::with_capacity(rows.len());
                        for (k, s) in sums.iter_mut().enumerate() {
                            let e = channel_mse(x.row(k), y.row(k), c);
                            aggs.push(mean(&e));
                            for (a, b) in s.iter_mut().zip(e) {
                                *a += b;
                            }
                        }
                        per_draw.push(aggs);
                    }
                    let ch = sums
                        .into_iter()
                        .map(|s| s.into_iter().map(|v| v / draws as f64).collect())
                        .collect();
                    Ok((ch, per_draw))
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut scores = Vec::with_capacity(data.len());
    let mut replicas = vec![Vec::with_capacity(data.len()); draws];
    let mut i = 0;
    for (channels, per_draw) in results {
        for ch in channels {
            scores.push(AnomalyScore {
                sample_id: data.sample_ids()[i],
                module: data.module_ids()[i],
                label: data.labels()[i],
                aggregate: mean(&ch),
                channels: ch,
            });
            i += 1;
        }
        for (d, aggs) in per_draw.into_iter().enumerate() {
            replicas[d].extend(aggs);
        }
    }
    Ok(ScoreSet {
        channel_names: data.channel_names().to_vec(),
        scores,
        replicas: (draws > 0).then_some(replicas),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, GeneratorConfig};
    use crate::model::ModelSpec;

    fn data() -> WaveformTensor {
        generate(&GeneratorConfig {
            module_count: 2,
            samples_per_module: 3,
            fault_count: 4,
            time_steps: 32,
            ..GeneratorConfig::default()
        })
        .unwrap()
    }

    fn cvae() -> TrainedModel {
        let spec = ModelSpec {
            kernels_per_block: 4,
            dense_units: 8,
            latent_dim: 3,
            module_count: 2,
            time_steps: 32,
            ..ModelSpec::desk(ModelMode::Cvae)
        };
        let model = Model::new(spec).unwrap();
        let params = model.init_params(1);
        TrainedModel::new(model, params).unwrap()
    }

    #[test]
    fn identity_scores_zero() {
        let s = score(&Identity, &data(), ScoreMode::Deterministic).unwrap();
        assert!(s.scores.iter().all(|a| a.aggregate == 0.0 && a.channels.iter().all(|&c| c == 0.0)));
    }

    #[test]
    fn deterministic_matches_external_recompute() {
        let w = data();
        let m = cvae();
        let s = score(&m, &w, ScoreMode::Deterministic).unwrap();
        assert_eq!(s, score(&m, &w, ScoreMode::Deterministic).unwrap());
        for i in 0..w.len() {
            let (x, ids) = w.batch(&[i]).unwrap();
            let dist = m.model.encode(&m.params, &x, Some(&ids)).unwrap();
            let y = m.model.decode(&m.params, &dist.mu, Some(&ids)).unwrap();
            let direct = crate::model::mse(&x, &y).unwrap();
            assert!((s.scores[i].aggregate - direct).abs() < 1e-7);
        }
    }

    #[test]
    fn sampled_scores_do_not_depend_on_batching() {
        let w = data();
        let m = cvae();
        let mode = ScoreMode::Sampled { draws: 3, seed: 4 };
        let all = score(&m, &w, mode).unwrap();
        let tail = score(&m, &w.select(&[5, 6, 7]).unwrap(), mode).unwrap();
        assert_eq!(tail.scores[..], all.scores[5..8]);
        let reps = all.replicas.unwrap();
        assert_eq!(reps.len(), 3);
        let mean0: f64 = reps.iter().map(|r| r[0]).sum::<f64>() / 3.0;
        assert!((mean0 - all.scores[0].aggregate).abs() < 1e-12);
    }

    #[test]
    fn unseen_module_is_a_data_error() {
        let w = data();
        let mut m = cvae();
        let mut spec = m.model.spec().clone();
        spec.module_count = 1;
        m.model = Model::new(spec).unwrap();
        m.params = m.model.init_params(1);
        assert!(matches!(score(&m, &w, ScoreMode::Deterministic), Err(Error::Data(_))));
        assert!(matches!(
            score(&ModuleEnsemble::default(), &w, ScoreMode::Deterministic),
            Err(Error::Data(_))
        ));
    }
}
