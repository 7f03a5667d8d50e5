//! Experiment bundles: one directory per figure analog plus a `MANIFEST`.

use std::collections::BTreeMap;

use modwatch::data::{generate, FaultClass, GeneratorConfig, WaveformTensor};
use modwatch::eval::report::{write_auc_table, write_boxstats, write_channel_ranking, write_density, write_scores};
use modwatch::eval::{
    auc_table, channel_auc, compare_methods, pick_threshold, score, summarize, ModuleEnsemble, ScoreMode, TrainedModel,
};
use modwatch::experiment::{depth_sweep, prepare, spec_for, surface, DepthSweepConfig, PreparedData};
use modwatch::landscape::{write_reports, GridConfig};
use modwatch::model::{Model, ModelMode, ModelSpec};
use modwatch::training::{per_module, train, train_single_module_suite, TrainConfig};
use modwatch::{Error, Result};

use crate::commands::{restrict, run_uq, write_pooled_rocs};
use crate::config::RunConfig;
use crate::output::OutDir;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Figs,
    DepthSweep,
    Uncertainty,
}

impl Experiment {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "figs" => Ok(Self::Figs),
            "appendixA" => Ok(Self::DepthSweep),
            "appendixB" => Ok(Self::Uncertainty),
            other => Err(Error::Config(format!("unknown experiment '{other}' (figs, appendixA, appendixB)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Desk,
    Full,
}

impl Scale {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Self::Desk),
            "paper" => Ok(Self::Full),
            other => Err(Error::Config(format!("unknown scale '{other}' (desk, paper)"))),
        }
    }
}

/// Full-size inputs and architecture. Takes hours on a CPU.
fn full_scale(cfg: &RunConfig) -> RunConfig {
    let mut c = cfg.clone();
    c.generator.time_steps = 4500;
    c.model = ModelSpec::full(cfg.model.mode);
    c.train = TrainConfig {
        seed: cfg.train.seed,
        ..TrainConfig::full()
    };
    c
}

pub fn cmd_reproduce(cfg: &RunConfig, experiment: Experiment, scale: Scale, force: bool, out: &mut OutDir) -> Result<()> {
    let cfg = match scale {
        Scale::Desk => cfg.clone(),
        Scale::Full if !force => {
            return Err(Error::Config(
                "full-scale reproduction takes hours on a CPU; pass --force to run it anyway".into(),
            ))
        }
        Scale::Full => {
            eprintln!("warning: full-scale reproduction, expect a runtime of hours");
            full_scale(cfg)
        }
    };
    match experiment {
        Experiment::Figs => figs(&cfg, out)?,
        Experiment::DepthSweep => depth_bundle(&cfg, scale, out)?,
        Experiment::Uncertainty => uq_bundle(&cfg, out)?,
    }
    out.text("config.txt", &cfg.to_text())?;
    out.write_manifest()?;
    println!("wrote {} artifacts under {}", out.written().len(), out.root().display());
    Ok(())
}

fn prepared(cfg: &RunConfig) -> Result<PreparedData> {
    prepare(&generate(&cfg.generator)?, cfg.fractions, cfg.split_seed)
}

fn train_cvae(cfg: &RunConfig, data: &PreparedData) -> Result<(TrainedModel, modwatch::training::TrainLog)> {
    let model = Model::new(spec_for(&cfg.model, ModelMode::Cvae, &data.train))?;
    let (params, log) = train(&model, &data.train, data.validation_normals()?.as_ref(), &cfg.train)?;
    Ok((TrainedModel::new(model, params)?, log))
}

fn threshold_source(data: &PreparedData) -> Result<WaveformTensor> {
    Ok(data.validation_normals()?.unwrap_or_else(|| data.train.clone()))
}

fn figs(cfg: &RunConfig, out: &mut OutDir) -> Result<()> {
    let data = prepared(cfg)?;
    let test = data.test()?;
    let (multi, multi_log) = train_cvae(cfg, &data)?;

    let mut fig5 = out.sub("fig5")?;
    multi_log.write_csv(fig5.file("trainlog_cvae.csv")?)?;

    let scores = score(&multi, test, ScoreMode::Deterministic)?;
    let normals = score(&multi, &threshold_source(&data)?, ScoreMode::Deterministic)?.aggregates();
    let threshold = pick_threshold(&normals, cfg.fpr_budget)?;
    let table = auc_table(&scores)?;

    let mut fig6 = out.sub("fig6")?;
    write_auc_table(fig6.file("auc_table.csv")?, &table)?;
    write_pooled_rocs(&mut fig6, &scores, "")?;
    fig6.text("threshold.txt", &format!("threshold={threshold:e}\nfpr_budget={}\n", cfg.fpr_budget))?;

    let mut fig7 = out.sub("fig7")?;
    let summary = summarize(&scores)?;
    write_scores(fig7.file("scores.csv")?, &scores)?;
    write_boxstats(fig7.file("boxstats.csv")?, &summary, &scores.channel_names)?;
    write_density(fig7.file("density.csv")?, &summary, &scores.channel_names)?;
    write_channel_ranking(fig7.file("channel_ranking.csv")?, &channel_auc(&scores)?, &scores.channel_names)?;

    // Per-module models, compared on identical test samples with latent
    // sampling for the error bars.
    let mut fig8 = out.sub("fig8")?;
    let val = data.validation_normals()?;
    let single_model = Model::new(spec_for(&cfg.model, ModelMode::Vae, &data.train))?;
    let runs = train_single_module_suite(&single_model, &per_module(&data.train, val.as_ref())?, &cfg.train)?;
    let mut models = BTreeMap::new();
    for run in runs {
        run.log.write_csv(fig8.file(&format!("trainlog_m{}.csv", run.module))?)?;
        models.insert(run.module, TrainedModel::new(single_model.clone(), run.params)?);
    }
    let ensemble = ModuleEnsemble { models };
    let sampled = ScoreMode::Sampled {
        draws: if cfg.eval_draws >= 2 { cfg.eval_draws } else { 20 },
        seed: cfg.eval_seed,
    };
    let multi_sampled = score(&multi, test, sampled)?;
    let single_sampled = score(&ensemble, test, sampled)?;
    let modules: Vec<usize> = (0..cfg.generator.module_count).collect();
    write_auc_table(
        fig8.file("auc_compare.csv")?,
        &compare_methods(&multi_sampled, &single_sampled, &FaultClass::ALL, &modules)?,
    )?;

    // Surfaces of both methods on the module the conditional model finds
    // hardest.
    let worst = table
        .iter()
        .filter_map(|c| Some((c.module?, c.multi?.auc)))
        .filter(|(_, auc)| auc.is_finite())
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(m, _)| m)
        .ok_or_else(|| Error::Data("no per-module AUC to pick a module from".into()))?;
    let mut fig9 = out.sub("fig9")?;
    let module_train = restrict(&data, worst)?.train;
    let single = ensemble
        .models
        .get(&worst)
        .ok_or_else(|| Error::Data(format!("no single-module model for module {worst}")))?;
    let mut reports = Vec::new();
    for (tag, m) in [("multi", &multi), ("single", single)] {
        let (g, report) = surface(&m.model, &m.params, &module_train, cfg.grid, cfg.direction_seed)?;
        g.write_csv(fig9.file(&format!("landscape_{tag}_m{worst}.csv"))?)?;
        println!("fig9 {tag} module {worst}: PSD fraction {:.3}", report.psd_fraction);
        reports.push((format!("{tag}_m{worst}"), report));
    }
    write_reports(fig9.file("report.csv")?, &reports)?;

    for (name, auc) in table
        .iter()
        .filter(|c| c.module.is_none())
        .filter_map(|c| Some((c.fault.name(), c.multi?.auc)))
    {
        println!("{name}: AUC {auc:.4}");
    }
    for d in [fig5, fig6, fig7, fig8, fig9] {
        out.absorb(d);
    }
    Ok(())
}

/// CPU-sized depth sweep: few short records so that forty-block models
/// train in seconds.
fn desk_sweep_config(cfg: &RunConfig) -> RunConfig {
    let mut c = cfg.clone();
    c.generator = GeneratorConfig {
        module_count: 3,
        samples_per_module: 40,
        fault_count: 6,
        time_steps: 64,
        ..cfg.generator.clone()
    };
    c.model = ModelSpec {
        kernels_per_block: 4,
        block_kernels: Vec::new(),
        dense_units: 16,
        latent_dim: 4,
        ..cfg.model.clone()
    };
    c.grid = GridConfig {
        resolution: 11,
        ..cfg.grid
    };
    c
}

fn depth_bundle(cfg: &RunConfig, scale: Scale, out: &mut OutDir) -> Result<()> {
    let cfg = match scale {
        Scale::Desk => desk_sweep_config(cfg),
        Scale::Full => cfg.clone(),
    };
    let data = prepared(&cfg)?;
    let sweep = DepthSweepConfig {
        depths: cfg.depths.clone(),
        model: cfg.model.clone(),
        train: cfg.train.clone(),
        grid: cfg.grid,
        direction_seed: cfg.direction_seed,
        surface: cfg.surface,
    };
    let mut dir = out.sub("appendixA")?;
    let mut reports = Vec::new();
    for r in depth_sweep(&data, &sweep)? {
        let tag = format!("depth{}", r.depth);
        r.grid.write_csv(dir.file(&format!("landscape_{tag}.csv"))?)?;
        r.log.write_csv(dir.file(&format!("trainlog_{tag}.csv"))?)?;
        println!("{tag}: PSD fraction {:.3}", r.report.psd_fraction);
        reports.push((tag, r.report));
    }
    write_reports(dir.file("report.csv")?, &reports)?;
    dir.text("sweep_config.txt", &cfg.to_text())?;
    out.absorb(dir);
    Ok(())
}

fn uq_bundle(cfg: &RunConfig, out: &mut OutDir) -> Result<()> {
    let data = prepared(cfg)?;
    let (model, log) = train_cvae(cfg, &data)?;
    let pool = data
        .test()?
        .filter(|_, l| l.is_normal())?
        .ok_or_else(|| Error::Data("test split has no normal samples".into()))?;
    let mut dir = out.sub("appendixB")?;
    log.write_csv(dir.file("trainlog_cvae.csv")?)?;
    run_uq(cfg, &model, &pool, &mut dir)?;
    out.absorb(dir);
    Ok(())
}
