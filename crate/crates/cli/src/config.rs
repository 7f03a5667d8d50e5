//! `key = value` run configuration with namespaced keys. Unknown keys are
//! rejected; every command writes the resolved set back out as `config.txt`.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use modwatch::data::{GeneratorConfig, SplitFractions};
use modwatch::experiment::SurfaceData;
use modwatch::landscape::GridConfig;
use modwatch::model::{ModelMode, ModelSpec};
use modwatch::training::TrainConfig;
use modwatch::{Error, Result};

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub generator: GeneratorConfig,
    pub fractions: SplitFractions,
    pub split_seed: u64,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub fpr_budget: f64,
    /// 0 scores at the posterior mean; otherwise latent draws per sample.
    pub eval_draws: usize,
    pub eval_seed: u64,
    pub grid: GridConfig,
    pub direction_seed: u64,
    pub surface: SurfaceData,
    pub depths: Vec<usize>,
    pub uq_draws: usize,
    pub uq_examples: usize,
    pub uq_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            generator: GeneratorConfig::default(),
            fractions: SplitFractions::default(),
            split_seed: 0,
            model: ModelSpec::desk(ModelMode::Cvae),
            train: TrainConfig::desk(),
            fpr_budget: 0.1,
            eval_draws: 0,
            eval_seed: 0,
            grid: GridConfig::default(),
            direction_seed: 0,
            surface: SurfaceData::Train,
            depths: vec![3, 5, 10, 20, 30, 40],
            uq_draws: 100,
            uq_examples: 10,
            uq_seed: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value '{value}' for {key}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|p| parse(key, p)).collect()
}

fn parse_six(key: &str, value: &str) -> Result<[f64; 6]> {
    let v: Vec<f64> = parse_list(key, value)?;
    v.try_into()
        .map_err(|_| Error::Config(format!("{key} needs six comma-separated values")))
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Every seed in the run set to `seed`.
    pub fn set_seed(&mut self, seed: u64) {
        self.generator.seed = seed;
        self.split_seed = seed;
        self.train.seed = seed;
        self.eval_seed = seed;
        self.direction_seed = seed;
        self.uq_seed = seed;
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let g = &mut self.generator;
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "generator.module_count" => g.module_count = parse(key, value)?,
            "generator.samples_per_module" => g.samples_per_module = parse(key, value)?,
            "generator.fault_count" => g.fault_count = parse(key, value)?,
            "generator.time_steps" => g.time_steps = parse(key, value)?,
            "generator.noise_sd" => g.noise_sd = parse(key, value)?,
            "generator.amplitude_spread" => g.amplitude_spread = parse(key, value)?,
            "generator.frequency_spread" => g.frequency_spread = parse(key, value)?,
            "generator.flatline_fraction" => g.flatline_fraction = parse(key, value)?,
            "generator.fault_mix" => g.fault_mix = parse_six(key, value)?,
            "generator.severity" => g.severity = parse_six(key, value)?,
            "generator.seed" => g.seed = parse(key, value)?,
            "split.train" => self.fractions.train = parse(key, value)?,
            "split.validation" => self.fractions.validation = parse(key, value)?,
            "split.test" => self.fractions.test = parse(key, value)?,
            "split.seed" => self.split_seed = parse(key, value)?,
            "model.mode" => m.mode = ModelMode::parse(value)?,
            "model.encoder_blocks" => m.encoder_blocks = parse(key, value)?,
            "model.decoder_blocks" => m.decoder_blocks = parse(key, value)?,
            "model.kernels_per_block" => m.kernels_per_block = parse(key, value)?,
            "model.block_kernels" => m.block_kernels = parse_list(key, value)?,
            "model.kernel_width" => m.kernel_width = parse(key, value)?,
            "model.downsample_blocks" => m.downsample_blocks = parse(key, value)?,
            "model.dense_units" => m.dense_units = parse(key, value)?,
            "model.latent_dim" => m.latent_dim = parse(key, value)?,
            "train.batch_size" => t.batch_size = parse(key, value)?,
            "train.learning_rate" => t.learning_rate = parse(key, value)?,
            "train.max_epochs" => t.max_epochs = parse(key, value)?,
            "train.patience" => t.patience = parse(key, value)?,
            "train.eta" => t.eta = parse(key, value)?,
            "train.seed" => t.seed = parse(key, value)?,
            "eval.fpr_budget" => self.fpr_budget = parse(key, value)?,
            "eval.draws" => self.eval_draws = parse(key, value)?,
            "eval.seed" => self.eval_seed = parse(key, value)?,
            "landscape.resolution" => self.grid.resolution = parse(key, value)?,
            "landscape.range" => self.grid.range = parse(key, value)?,
            "landscape.direction_seed" => self.direction_seed = parse(key, value)?,
            "landscape.surface" => self.surface = parse_surface(value)?,
            "landscape.depths" => self.depths = parse_list(key, value)?,
            "uq.draws" => self.uq_draws = parse(key, value)?,
            "uq.examples" => self.uq_examples = parse(key, value)?,
            "uq.seed" => self.uq_seed = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let g = &self.generator;
        let m = &self.model;
        let mut kv: BTreeMap<String, String> = [
            ("generator.module_count", g.module_count.to_string()),
            ("generator.samples_per_module", g.samples_per_module.to_string()),
            ("generator.fault_count", g.fault_count.to_string()),
            ("generator.time_steps", g.time_steps.to_string()),
            ("generator.noise_sd", g.noise_sd.to_string()),
            ("generator.amplitude_spread", g.amplitude_spread.to_string()),
            ("generator.frequency_spread", g.frequency_spread.to_string()),
            ("generator.flatline_fraction", g.flatline_fraction.to_string()),
            ("generator.fault_mix", join(&g.fault_mix)),
            ("generator.severity", join(&g.severity)),
            ("generator.seed", g.seed.to_string()),
            ("split.train", self.fractions.train.to_string()),
            ("split.validation", self.fractions.validation.to_string()),
            ("split.test", self.fractions.test.to_string()),
            ("split.seed", self.split_seed.to_string()),
            ("model.mode", m.mode.as_str().to_string()),
            ("model.encoder_blocks", m.encoder_blocks.to_string()),
            ("model.decoder_blocks", m.decoder_blocks.to_string()),
            ("model.kernels_per_block", m.kernels_per_block.to_string()),
            ("model.block_kernels", join(&m.block_kernels)),
            ("model.kernel_width", m.kernel_width.to_string()),
            ("model.downsample_blocks", m.downsample_blocks.to_string()),
            ("model.dense_units", m.dense_units.to_string()),
            ("model.latent_dim", m.latent_dim.to_string()),
            ("eval.fpr_budget", self.fpr_budget.to_string()),
            ("eval.draws", self.eval_draws.to_string()),
            ("eval.seed", self.eval_seed.to_string()),
            ("landscape.resolution", self.grid.resolution.to_string()),
            ("landscape.range", self.grid.range.to_string()),
            ("landscape.direction_seed", self.direction_seed.to_string()),
            ("landscape.surface", surface_name(self.surface).to_string()),
            ("landscape.depths", join(&self.depths)),
            ("uq.draws", self.uq_draws.to_string()),
            ("uq.examples", self.uq_examples.to_string()),
            ("uq.seed", self.uq_seed.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        kv.extend(self.train.to_kv());
        kv
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        self.to_kv().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.fractions.validate()?;
        self.train.validate()?;
        if !(self.fpr_budget > 0.0 && self.fpr_budget <= 1.0) {
            return Err(Error::Config(format!("fpr budget {} must be in (0, 1]", self.fpr_budget)));
        }
        if self.uq_draws < 2 {
            return Err(Error::Config("uq.draws must be at least 2".into()));
        }
        Ok(())
    }
}

pub fn parse_surface(value: &str) -> Result<SurfaceData> {
    match value.trim() {
        "train" => Ok(SurfaceData::Train),
        "validation" => Ok(SurfaceData::Validation),
        other => Err(Error::Config(format!("unknown surface dataset '{other}'"))),
    }
}

fn surface_name(s: SurfaceData) -> &'static str {
    match s {
        SurfaceData::Train => "train",
        SurfaceData::Validation => "validation",
    }
}
