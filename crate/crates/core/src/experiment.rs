//! End-to-end experiment drivers shared by the CLI and the acceptance suite.

use crate::data::{generate, split, standardize, ChannelStats, GeneratorConfig, SplitFractions, WaveformTensor};
use crate::error::{Error, Result};
use crate::eval::{auc_table, pick_threshold, roc_auc, score, AucCell, ScoreMode, ScoreSet, TrainedModel};
use crate::landscape::{convexity_report, evaluate_grid, random_direction, ConvexityReport, GridConfig, LandscapeGrid};
use crate::model::{Model, ModelMode, ModelSpec};
use crate::params::ModelParameters;
use crate::seeds::derive_seed;
use crate::training::{check_disjoint, train, TrainConfig, TrainLog};

/// Standardised splits; statistics come from the training split.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub stats: ChannelStats,
    pub train: WaveformTensor,
    /// Full validation split (normals and faults).
    pub validation: Option<WaveformTensor>,
    pub test: Option<WaveformTensor>,
}

impl PreparedData {
    /// Normal part of the validation split, used for early stopping and
    /// thresholds.
    pub fn validation_normals(&self) -> Result<Option<WaveformTensor>> {
        match &self.validation {
            Some(v) => v.filter(|_, l| l.is_normal()),
            None => Ok(None),
        }
    }

    pub fn test(&self) -> Result<&WaveformTensor> {
        self.test.as_ref().ok_or_else(|| Error::Data("test split is empty".into()))
    }
}

pub fn prepare(data: &WaveformTensor, fractions: SplitFractions, seed: u64) -> Result<PreparedData> {
    let s = split(data, fractions, seed)?;
    let mut parts: Vec<&WaveformTensor> = vec![&s.train];
    parts.extend(s.validation.iter());
    parts.extend(s.test.iter());
    check_disjoint(&parts)?;
    let (train, stats) = standardize(&s.train, None)?;
    let apply = |w: Option<WaveformTensor>| -> Result<Option<WaveformTensor>> {
        w.map(|w| standardize(&w, Some(&stats)).map(|r| r.0)).transpose()
    };
    Ok(PreparedData {
        validation: apply(s.validation)?,
        test: apply(s.test)?,
        stats,
        train,
    })
}

/// Spec matching the data geometry.
pub fn spec_for(base: &ModelSpec, mode: ModelMode, data: &WaveformTensor) -> ModelSpec {
    ModelSpec {
        mode,
        time_steps: data.time_steps(),
        channels: data.channels(),
        module_count: data.module_count(),
        ..base.clone()
    }
}

#[derive(Debug, Clone)]
pub struct DetectionConfig {
    pub generator: GeneratorConfig,
    pub fractions: SplitFractions,
    pub split_seed: u64,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub fpr_budget: f64,
}

impl DetectionConfig {
    pub fn desk() -> Self {
        Self {
            generator: GeneratorConfig::default(),
            fractions: SplitFractions::default(),
            split_seed: 0,
            model: ModelSpec::desk(ModelMode::Cvae),
            train: TrainConfig::desk(),
            fpr_budget: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DetectionResult {
    pub data: PreparedData,
    pub model: TrainedModel,
    pub log: TrainLog,
    pub threshold: f64,
    pub test_scores: ScoreSet,
    pub auc: Vec<AucCell>,
}

/// Generate, split, train a conditional model, score the test split.
pub fn run_detection(cfg: &DetectionConfig) -> Result<DetectionResult> {
    let raw = generate(&cfg.generator)?;
    let data = prepare(&raw, cfg.fractions, cfg.split_seed)?;
    let spec = spec_for(&cfg.model, cfg.model.mode, &data.train);
    let model = Model::new(spec)?;
    let val = data.validation_normals()?;
    let (params, log) = train(&model, &data.train, val.as_ref(), &cfg.train)?;
    let trained = TrainedModel::new(model, params)?;
    let threshold_source = val.as_ref().unwrap_or(&data.train);
    let val_scores = score(&trained, threshold_source, ScoreMode::Deterministic)?;
    let threshold = pick_threshold(&val_scores.aggregates(), cfg.fpr_budget)?;
    let test_scores = score(&trained, data.test()?, ScoreMode::Deterministic)?;
    let auc = auc_table(&test_scores)?;
    Ok(DetectionResult {
        data,
        model: trained,
        log,
        threshold,
        test_scores,
        auc,
    })
}

/// One module starved of training normals, compared between the shared
/// conditional model and a model trained on that module alone.
#[derive(Debug, Clone)]
pub struct ScarceModuleConfig {
    pub generator: GeneratorConfig,
    pub fractions: SplitFractions,
    pub split_seed: u64,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub target_module: usize,
    /// Training normals kept for the target module.
    pub train_normals: usize,
    /// Faults in the fresh evaluation set (spread over all modules).
    pub eval_fault_count: usize,
}

impl ScarceModuleConfig {
    pub fn desk() -> Self {
        Self {
            generator: GeneratorConfig::default(),
            fractions: SplitFractions::default(),
            split_seed: 0,
            model: ModelSpec::desk(ModelMode::Cvae),
            train: TrainConfig::desk(),
            target_module: 0,
            train_normals: 5,
            eval_fault_count: 600,
        }
    }

    /// Same experiment with every seed derived from `seed`.
    pub fn reseeded(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.generator.seed = derive_seed(seed, &[1]);
        c.split_seed = derive_seed(seed, &[2]);
        c.train.seed = derive_seed(seed, &[3]);
        c
    }
}

#[derive(Debug, Clone)]
pub struct ScarceModuleResult {
    pub auc_multi: f64,
    pub auc_single: f64,
    pub multi_log: TrainLog,
    pub single_log: TrainLog,
    pub multi_scores: ScoreSet,
    pub single_scores: ScoreSet,
}

fn keep_first_normals(data: &WaveformTensor, module: usize, keep: usize) -> Result<WaveformTensor> {
    let target = data.indices_where(|m, l| m == module && l.is_normal());
    if target.len() < keep {
        return Err(Error::Data(format!(
            "module {module} has {} training normals, {keep} requested",
            target.len()
        )));
    }
    let dropped = &target[keep..];
    let idx: Vec<usize> = (0..data.len()).filter(|i| dropped.binary_search(i).is_err()).collect();
    data.select(&idx)
}

fn pooled_fault_auc(scores: &ScoreSet) -> Result<f64> {
    let agg = scores.aggregates();
    let (mut normal, mut abnormal) = (Vec::new(), Vec::new());
    for (s, v) in scores.scores.iter().zip(agg) {
        if s.label.is_normal() {
            normal.push(v);
        } else {
            abnormal.push(v);
        }
    }
    Ok(roc_auc(&normal, &abnormal)?.auc)
}

pub fn run_scarce_module(cfg: &ScarceModuleConfig) -> Result<ScarceModuleResult> {
    let raw = generate(&cfg.generator)?;
    let data = prepare(&raw, cfg.fractions, cfg.split_seed)?;
    let train_all = keep_first_normals(&data.train, cfg.target_module, cfg.train_normals)?;
    let val = data.validation_normals()?;

    let multi_model = Model::new(spec_for(&cfg.model, ModelMode::Cvae, &train_all))?;
    let (multi_params, multi_log) = train(&multi_model, &train_all, val.as_ref(), &cfg.train)?;
    let multi = TrainedModel::new(multi_model, multi_params)?;

    let only = |w: &WaveformTensor| w.filter(|m, _| m == cfg.target_module);
    let single_train = only(&train_all)?.ok_or_else(|| Error::Data("target module has no training data".into()))?;
    let single_val = val.as_ref().map(only).transpose()?.flatten();
    let single_model = Model::new(spec_for(&cfg.model, ModelMode::Vae, &single_train))?;
    let (single_params, single_log) = train(&single_model, &single_train, single_val.as_ref(), &cfg.train)?;
    let single = TrainedModel::new(single_model, single_params)?;

    let eval_gen = GeneratorConfig {
        seed: derive_seed(cfg.generator.seed, &[STREAM_EVAL]),
        fault_count: cfg.eval_fault_count,
        ..cfg.generator.clone()
    };
    let fresh = generate(&eval_gen)?;
    let fresh = only(&fresh)?.ok_or_else(|| Error::Data("evaluation set misses the target module".into()))?;
    let (fresh, _) = standardize(&fresh, Some(&data.stats))?;
    let multi_scores = score(&multi, &fresh, ScoreMode::Deterministic)?;
    let single_scores = score(&single, &fresh, ScoreMode::Deterministic)?;
    Ok(ScarceModuleResult {
        auc_multi: pooled_fault_auc(&multi_scores)?,
        auc_single: pooled_fault_auc(&single_scores)?,
        multi_log,
        single_log,
        multi_scores,
        single_scores,
    })
}

const STREAM_EVAL: u64 = 21;

/// Which split a loss surface is computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurfaceData {
    Train,
    Validation,
}

impl SurfaceData {
    pub fn pick(self, data: &PreparedData) -> Result<WaveformTensor> {
        match self {
            SurfaceData::Train => Ok(data.train.clone()),
            SurfaceData::Validation => data
                .validation_normals()?
                .ok_or_else(|| Error::Data("validation split has no normals".into())),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DepthSweepConfig {
    /// Conv blocks per encoder and per decoder.
    pub depths: Vec<usize>,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub grid: GridConfig,
    pub direction_seed: u64,
    pub surface: SurfaceData,
}

#[derive(Debug, Clone)]
pub struct DepthResult {
    pub depth: usize,
    pub spec: ModelSpec,
    pub log: TrainLog,
    pub grid: LandscapeGrid,
    pub report: ConvexityReport,
}

/// Spec with `depth` conv blocks on each side, everything else unchanged.
pub fn spec_at_depth(base: &ModelSpec, depth: usize) -> Result<ModelSpec> {
    if depth == 0 {
        return Err(Error::Shape("depth must be at least 1".into()));
    }
    let spec = ModelSpec {
        encoder_blocks: depth,
        decoder_blocks: depth,
        block_kernels: Vec::new(),
        downsample_blocks: base.downsample_blocks.min(depth),
        ..base.clone()
    };
    spec.validate()?;
    Ok(spec)
}

/// Loss surface of a trained model using the two seeded directions derived
/// from `direction_seed`.
pub fn surface(
    model: &Model,
    params: &ModelParameters,
    data: &WaveformTensor,
    grid: GridConfig,
    direction_seed: u64,
) -> Result<(LandscapeGrid, ConvexityReport)> {
    let gamma = random_direction(params, derive_seed(direction_seed, &[1]));
    let nu = random_direction(params, derive_seed(direction_seed, &[2]));
    let g = evaluate_grid(model, params, &gamma, &nu, data, grid)?;
    let report = convexity_report(&g)?;
    Ok((g, report))
}

/// Trains one model per depth with identical data and seeds and reports the
/// surface around each minimiser.
pub fn depth_sweep(data: &PreparedData, cfg: &DepthSweepConfig) -> Result<Vec<DepthResult>> {
    let specs = cfg
        .depths
        .iter()
        .map(|&d| spec_at_depth(&spec_for(&cfg.model, cfg.model.mode, &data.train), d))
        .collect::<Result<Vec<_>>>()?;
    let val = data.validation_normals()?;
    let surface_data = cfg.surface.pick(data)?;
    let mut out = Vec::new();
    for (&depth, spec) in cfg.depths.iter().zip(specs) {
        let model = Model::new(spec.clone())?;
        let (params, log) = train(&model, &data.train, val.as_ref(), &cfg.train)?;
        let (grid, report) = surface(&model, &params, &surface_data, cfg.grid, cfg.direction_seed)?;
        out.push(DepthResult {
            depth,
            spec,
            log,
            grid,
            report,
        });
    }
    Ok(out)
}
