//! Seeded mini-batch training with early stopping and run manifests.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::adam::{AdamConfig, AdamState};
use crate::data::io::csv_err;
use crate::data::WaveformTensor;
use crate::error::{Error, Result};
use crate::model::{LatentNoise, LossBreakdown, Model, ModelMode};
use crate::params::ModelParameters;
use crate::seeds::derive_seed;

const STREAM_INIT: u64 = 11;
const STREAM_SHUFFLE: u64 = 12;
const STREAM_NOISE: u64 = 13;

/// Rows per forward pass when evaluating a whole split.
pub const EVAL_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub eta: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// CPU-scale defaults.
    pub fn desk() -> Self {
        Self {
            batch_size: 16,
            learning_rate: 1e-3,
            max_epochs: 100,
            patience: 20,
            eta: 1.0,
            seed: 0,
        }
    }

    /// Full-scale defaults (smaller learning rate).
    pub fn full() -> Self {
        Self {
            learning_rate: 1e-5,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return Err(Error::Config(format!("eta {} must be nonnegative", self.eta)));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> BTreeMap<String, String> {
        [
            ("train.batch_size", self.batch_size.to_string()),
            ("train.learning_rate", format!("{:e}", self.learning_rate)),
            ("train.max_epochs", self.max_epochs.to_string()),
            ("train.patience", self.patience.to_string()),
            ("train.eta", format!("{:e}", self.eta)),
            ("train.seed", self.seed.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: LossBreakdown,
    pub validation: Option<LossBreakdown>,
}

impl EpochRecord {
    /// The loss used for model selection: validation if present, else train.
    pub fn selection_loss(&self) -> f64 {
        self.validation.as_ref().unwrap_or(&self.train).total
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    /// Contiguous from epoch 1.
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
    pub wall_time_secs: f64,
    pub checkpoint_id: Option<String>,
}

impl TrainLog {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.best_epoch.map(|e| &self.epochs[e - 1])
    }

    /// Loss series only (excludes wall time), for determinism checks.
    pub fn series(&self) -> Vec<(LossBreakdown, Option<LossBreakdown>)> {
        self.epochs.iter().map(|e| (e.train, e.validation)).collect()
    }

    /// Columns: epoch, train_reconstruction, train_kld, train_total,
    /// val_reconstruction, val_kld, val_total (validation cells empty when
    /// there is no validation split).
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "epoch",
            "train_reconstruction",
            "train_kld",
            "train_total",
            "val_reconstruction",
            "val_kld",
            "val_total",
        ])
        .map_err(csv_err)?;
        for e in &self.epochs {
            let v = |f: fn(&LossBreakdown) -> f64| e.validation.as_ref().map(|l| format!("{:e}", f(l))).unwrap_or_default();
            out.write_record([
                e.epoch.to_string(),
                format!("{:e}", e.train.reconstruction),
                format!("{:e}", e.train.kld),
                format!("{:e}", e.train.total),
                v(|l| l.reconstruction),
                v(|l| l.kld),
                v(|l| l.total),
            ])
            .map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn modules_for(model: &Model, ids: &[usize]) -> Option<Vec<usize>> {
    (model.mode() == ModelMode::Cvae).then(|| ids.to_vec())
}

/// Errors when any sample id appears in more than one of `splits`.
pub fn check_disjoint(splits: &[&WaveformTensor]) -> Result<()> {
    let mut seen = HashSet::new();
    for (k, s) in splits.iter().enumerate() {
        let mut here = HashSet::new();
        for &id in s.sample_ids() {
            here.insert(id);
        }
        if let Some(id) = here.iter().find(|id| seen.contains(*id)) {
            return Err(Error::Data(format!("sample {id} leaks into split {k}")));
        }
        seen.extend(here);
    }
    Ok(())
}

/// Deterministic (`epsilon = 0`) loss over a whole split, batch-weighted.
pub fn evaluate_loss(model: &Model, params: &ModelParameters, data: &WaveformTensor, eta: f64) -> Result<LossBreakdown> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let parts = idx
        .chunks(EVAL_CHUNK)
        .map(|chunk| {
            let (x, ids) = data.batch(chunk)?;
            let m = modules_for(model, &ids);
            let l = model.loss(params, &x, m.as_deref(), eta, &LatentNoise::Zero)?;
            Ok((l, chunk.len()))
        })
        .collect::<Result<Vec<_>>>()?;
    LossBreakdown::weighted_mean(&parts).ok_or_else(|| Error::Data("cannot evaluate an empty split".into()))
}

/// Trains from a seeded initialisation and returns the parameters of the
/// epoch with the lowest selection loss.
pub fn train(
    model: &Model,
    train: &WaveformTensor,
    validation: Option<&WaveformTensor>,
    config: &TrainConfig,
) -> Result<(ModelParameters, TrainLog)> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    if let Some(i) = train.labels().iter().position(|l| !l.is_normal()) {
        return Err(Error::Data(format!(
            "training split contains abnormal sample {}",
            train.sample_ids()[i]
        )));
    }
    if let Some(v) = validation {
        check_disjoint(&[train, v])?;
    }
    let started = Instant::now();
    let mut params = model.init_params(derive_seed(config.seed, &[STREAM_INIT]));
    let mut log = TrainLog::default();
    if config.max_epochs == 0 {
        return Ok((params, log));
    }
    let mut adam = AdamState::new(&params, AdamConfig::with_learning_rate(config.learning_rate));
    let mut best: Option<(f64, ModelParameters)> = None;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[STREAM_SHUFFLE, epoch as u64]));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut parts = Vec::new();
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let diverged = |p: &ModelParameters| Error::Diverged {
                epoch,
                batch: b,
                param_norm: p.norm(),
            };
            let (x, ids) = train.batch(chunk)?;
            let m = modules_for(model, &ids);
            let noise = LatentNoise::Seeded(derive_seed(config.seed, &[STREAM_NOISE, epoch as u64, b as u64]));
            let (loss, grads) = match model.loss_and_gradients(&params, &x, m.as_deref(), config.eta, &noise) {
                Ok(v) => v,
                Err(Error::NonFinite(_)) => return Err(diverged(&params)),
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                return Err(diverged(&params));
            }
            adam.step(&mut params, &grads)?;
            if !params.is_finite() {
                return Err(diverged(&params));
            }
            parts.push((loss, chunk.len()));
        }
        let train_loss = LossBreakdown::weighted_mean(&parts).expect("at least one batch");
        let val_loss = match validation {
            Some(v) => match evaluate_loss(model, &params, v, config.eta) {
                Ok(l) => Some(l),
                Err(Error::NonFinite(_)) => {
                    return Err(Error::Diverged {
                        epoch,
                        batch: parts.len(),
                        param_norm: params.norm(),
                    })
                }
                Err(e) => return Err(e),
            },
            None => None,
        };
        let record = EpochRecord {
            epoch,
            train: train_loss,
            validation: val_loss,
        };
        let score = record.selection_loss();
        log.epochs.push(record);
        if best.as_ref().is_none_or(|(b, _)| score < *b) {
            best = Some((score, params.clone()));
            log.best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                log.stopped_early = true;
                break;
            }
        }
    }
    log.wall_time_secs = started.elapsed().as_secs_f64();
    let (_, best_params) = best.expect("at least one epoch ran");
    Ok((best_params, log))
}

/// Per-module data for the single-module suite.
#[derive(Debug, Clone)]
pub struct ModuleData {
    pub module: usize,
    pub train: WaveformTensor,
    pub validation: Option<WaveformTensor>,
}

#[derive(Debug, Clone)]
pub struct ModuleRun {
    pub module: usize,
    pub params: ModelParameters,
    pub log: TrainLog,
}

/// One independent unconditioned model per module, identical architecture,
/// hyperparameters and initialisation. Modules train in parallel; results do
/// not depend on module order.
pub fn train_single_module_suite(model: &Model, modules: &[ModuleData], config: &TrainConfig) -> Result<Vec<ModuleRun>> {
    config.validate()?;
    if model.mode() != ModelMode::Vae {
        return Err(Error::Config("single-module models must be unconditioned".into()));
    }
    for m in modules {
        if m.train.len() <= config.batch_size {
            return Err(Error::Data(format!(
                "module {} has {} training samples, fewer than two batches of {}",
                m.module,
                m.train.len(),
                config.batch_size
            )));
        }
    }
    modules
        .par_iter()
        .map(|m| {
            let (params, log) = train(model, &m.train, m.validation.as_ref(), config)?;
            Ok(ModuleRun {
                module: m.module,
                params,
                log,
            })
        })
        .collect()
}

/// Splits a multi-module tensor into per-module pieces.
pub fn per_module(train: &WaveformTensor, validation: Option<&WaveformTensor>) -> Result<Vec<ModuleData>> {
    let mut modules: Vec<usize> = train.module_ids().to_vec();
    modules.sort_unstable();
    modules.dedup();
    modules
        .into_iter()
        .map(|module| {
            let t = train
                .filter(|m, _| m == module)?
                .expect("module present in training data");
            let v = match validation {
                Some(v) => v.filter(|m, _| m == module)?,
                None => None,
            };
            Ok(ModuleData {
                module,
                train: t,
                validation: v,
            })
        })
        .collect()
}

/// Key-value run record: configuration snapshot, dataset hash, artifact
/// paths and final metrics.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunManifest {
    pub entries: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn insert(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.insert(key.into(), value.to_string());
    }

    pub fn extend(&mut self, kv: BTreeMap<String, String>) {
        self.entries.extend(kv);
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Final metrics of a training log under `prefix`.
    pub fn record_log(&mut self, prefix: &str, log: &TrainLog) {
        self.insert(format!("{prefix}.epochs"), log.epochs.len());
        self.insert(format!("{prefix}.stopped_early"), log.stopped_early);
        if let Some(best) = log.best() {
            self.insert(format!("{prefix}.best_epoch"), best.epoch);
            self.insert(format!("{prefix}.best_train_total"), format!("{:e}", best.train.total));
            if let Some(v) = best.validation {
                self.insert(format!("{prefix}.best_val_total"), format!("{:e}", v.total));
            }
        }
        if let Some(last) = log.epochs.last() {
            self.insert(format!("{prefix}.final_train_total"), format!("{:e}", last.train.total));
        }
    }

    pub fn to_text(&self) -> String {
        crate::binio::encode_kv(&self.entries)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let entries = text
            .lines()
            .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
            .map(|l| {
                l.split_once('=')
                    .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                    .ok_or_else(|| Error::Format(format!("bad manifest line '{l}'")))
            })
            .collect::<Result<_>>()?;
        Ok(Self { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}
