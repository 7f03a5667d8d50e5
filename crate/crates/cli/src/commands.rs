use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use modwatch::data::io::{file_hash, load_tensor, save_tensor, write_metadata_csv};
use modwatch::data::{generate, generate_reference, standardize, FaultClass, Label, SplitFractions, WaveformTensor};
use modwatch::eval::report::{
    write_auc_table, write_boxstats, write_channel_ranking, write_density, write_roc, write_scores,
};
use modwatch::eval::{
    auc_table, channel_auc, compare_methods, flagged_fraction, pick_threshold, roc_auc, score, summarize,
    Identity, ModuleEnsemble, Reconstructor, ScoreMode, ScoreSet, TrainedModel,
};
use modwatch::experiment::{depth_sweep, prepare, spec_for, surface, DepthSweepConfig, PreparedData};
use modwatch::landscape::{evaluate_grid, random_direction, write_reports};
use modwatch::model::{Checkpoint, Model, ModelMode};
use modwatch::seeds::derive_seed;
use modwatch::training::{evaluate_loss, per_module, train, train_single_module_suite, RunManifest, TrainLog};
use modwatch::uq::{replicate, select_examples, write_channel_areas};
use modwatch::{Error, Result};

use crate::config::RunConfig;
use crate::output::OutDir;
use crate::reference::Lookup;

pub const DATASET_FILE: &str = "dataset.mwts";
pub const REFERENCE_FILE: &str = "reference.mwts";

/// Accepts a dataset file or a directory written by `generate`.
pub fn dataset_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(DATASET_FILE)
    } else {
        path.to_path_buf()
    }
}

fn must_exist(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Data(format!("{} does not exist", path.display())))
    }
}

pub fn load_dataset(path: &Path) -> Result<(WaveformTensor, String)> {
    let p = dataset_path(path);
    must_exist(&p)?;
    let data = load_tensor(&p)?;
    Ok((data, file_hash(&p)?))
}

fn counts_text(data: &WaveformTensor) -> String {
    let mut lines = String::from("module,label,count\n");
    for ((m, l), n) in data.counts() {
        lines.push_str(&format!("{m},{l},{n}\n"));
    }
    lines
}

pub fn cmd_generate(cfg: &RunConfig, out: &mut OutDir, with_reference: bool) -> Result<()> {
    let data = generate(&cfg.generator)?;
    save_tensor(out.path(DATASET_FILE), &data)?;
    write_metadata_csv(out.file("metadata.csv")?, &data)?;
    if with_reference {
        save_tensor(out.path(REFERENCE_FILE), &generate_reference(&cfg.generator)?)?;
    }
    out.text("config.txt", &cfg.to_text())?;
    print!("{}", counts_text(&data));
    println!("wrote {} samples to {}", data.len(), out.root().display());
    Ok(())
}

// ------------------------------------------------------------------ train

fn split_kv(fractions: SplitFractions, seed: u64) -> BTreeMap<String, String> {
    [
        ("split.train", fractions.train.to_string()),
        ("split.validation", fractions.validation.to_string()),
        ("split.test", fractions.test.to_string()),
        ("split.seed", seed.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

fn checkpoint(
    model: &Model,
    params: modwatch::params::ModelParameters,
    cfg: &RunConfig,
    data: &PreparedData,
    hash: &str,
    module: Option<usize>,
) -> Checkpoint {
    let mut metadata = split_kv(cfg.fractions, cfg.split_seed);
    metadata.extend(data.stats.to_kv());
    metadata.extend(cfg.train.to_kv());
    metadata.insert("dataset.hash".into(), hash.to_string());
    if let Some(m) = module {
        metadata.insert("train.module".into(), m.to_string());
    }
    Checkpoint {
        spec: model.spec().clone(),
        params,
        metadata,
    }
}

pub enum ModuleSelect {
    All,
    One(usize),
}

pub fn parse_module(s: &str) -> Result<ModuleSelect> {
    if s == "all" {
        return Ok(ModuleSelect::All);
    }
    s.parse()
        .map(ModuleSelect::One)
        .map_err(|_| Error::Config(format!("--module expects an id or 'all', got '{s}'")))
}

fn log_csv(out: &mut OutDir, name: &str, log: &TrainLog) -> Result<()> {
    log.write_csv(out.file(name)?)
}

pub fn cmd_train(cfg: &RunConfig, data_path: &Path, modules: ModuleSelect, out: &mut OutDir) -> Result<()> {
    let (raw, hash) = load_dataset(data_path)?;
    let data = prepare(&raw, cfg.fractions, cfg.split_seed)?;
    let val = data.validation_normals()?;
    let spec = spec_for(&cfg.model, cfg.model.mode, &data.train);
    let model = Model::new(spec)?;
    let mut manifest = RunManifest::default();
    manifest.extend(cfg.to_kv());
    manifest.insert("dataset.path", dataset_path(data_path).display());
    manifest.insert("dataset.hash", &hash);
    match cfg.model.mode {
        ModelMode::Cvae => {
            let (params, log) = train(&model, &data.train, val.as_ref(), &cfg.train)?;
            let ck = checkpoint(&model, params, cfg, &data, &hash, None);
            let path = out.path("cvae.mwck");
            ck.save(&path)?;
            log_csv(out, "trainlog_cvae.csv", &log)?;
            manifest.insert("checkpoint.cvae", file_hash(&path)?);
            manifest.record_log("cvae", &log);
            report_log("cvae", &log);
        }
        ModelMode::Vae => {
            let mut suite = per_module(&data.train, val.as_ref())?;
            if let ModuleSelect::One(m) = modules {
                suite.retain(|d| d.module == m);
                if suite.is_empty() {
                    return Err(Error::Data(format!("module {m} has no training data")));
                }
            }
            for run in train_single_module_suite(&model, &suite, &cfg.train)? {
                let tag = format!("vae_m{}", run.module);
                let ck = checkpoint(&model, run.params, cfg, &data, &hash, Some(run.module));
                let path = out.path(&format!("{tag}.mwck"));
                ck.save(&path)?;
                log_csv(out, &format!("trainlog_m{}.csv", run.module), &run.log)?;
                manifest.insert(format!("checkpoint.{tag}"), file_hash(&path)?);
                manifest.record_log(&tag, &run.log);
                report_log(&tag, &run.log);
            }
        }
    }
    manifest.save(out.path("manifest.txt"))?;
    out.text("config.txt", &cfg.to_text())?;
    Ok(())
}

fn report_log(tag: &str, log: &TrainLog) {
    if let (Some(last), Some(best)) = (log.epochs.last(), log.best()) {
        println!(
            "{tag}: {} epochs, final train loss {:e}, best epoch {} (selection loss {:e})",
            log.epochs.len(),
            last.train.total,
            best.epoch,
            best.selection_loss()
        );
    }
}

// ------------------------------------------------------------- checkpoints

pub struct LoadedModel {
    pub checkpoint: Checkpoint,
    pub trained: TrainedModel,
}

impl LoadedModel {
    pub fn load(path: &Path) -> Result<Self> {
        must_exist(path)?;
        let checkpoint = Checkpoint::load(path)?;
        let trained = TrainedModel::new(Model::new(checkpoint.spec.clone())?, checkpoint.params.clone())?;
        Ok(Self { checkpoint, trained })
    }

    pub fn module(&self) -> Option<usize> {
        self.checkpoint.metadata.get("train.module").and_then(|m| m.parse().ok())
    }

    pub fn tag(&self) -> String {
        match self.module() {
            Some(m) => format!("vae_m{m}"),
            None => self.checkpoint.spec.mode.as_str().to_string(),
        }
    }

    fn meta<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.checkpoint
            .metadata
            .get(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Format(format!("checkpoint lacks {key}")))
    }

    /// Recreates the split the checkpoint was trained on and checks that the
    /// standardisation matches.
    pub fn prepared(&self, raw: &WaveformTensor) -> Result<PreparedData> {
        let fractions = SplitFractions {
            train: self.meta("split.train")?,
            validation: self.meta("split.validation")?,
            test: self.meta("split.test")?,
        };
        let data = prepare(raw, fractions, self.meta("split.seed")?)?;
        let stored: BTreeMap<String, String> = self
            .checkpoint
            .metadata
            .iter()
            .filter(|(k, _)| k.starts_with("standardize."))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        if stored != data.stats.to_kv() {
            return Err(Error::Data("dataset does not match the one the checkpoint was trained on".into()));
        }
        match self.module() {
            Some(m) => restrict(&data, m),
            None => Ok(data),
        }
    }

    pub fn train_config(&self) -> Result<modwatch::training::TrainConfig> {
        Ok(modwatch::training::TrainConfig {
            batch_size: self.meta("train.batch_size")?,
            learning_rate: self.meta("train.learning_rate")?,
            max_epochs: self.meta("train.max_epochs")?,
            patience: self.meta("train.patience")?,
            eta: self.meta("train.eta")?,
            seed: self.meta("train.seed")?,
        })
    }
}

/// Splits restricted to one module.
pub fn restrict(data: &PreparedData, module: usize) -> Result<PreparedData> {
    let only = |w: &WaveformTensor| w.filter(|m, _| m == module);
    Ok(PreparedData {
        stats: data.stats.clone(),
        train: only(&data.train)?.ok_or_else(|| Error::Data(format!("module {module} has no training data")))?,
        validation: data.validation.as_ref().map(only).transpose()?.flatten(),
        test: data.test.as_ref().map(only).transpose()?.flatten(),
    })
}

// ------------------------------------------------------------------- eval

pub enum ModelArg {
    Identity,
    Reference(PathBuf),
    Checkpoint(PathBuf),
}

pub fn parse_model_arg(s: &str) -> ModelArg {
    if s == "identity" {
        ModelArg::Identity
    } else if let Some(p) = s.strip_prefix("reference=") {
        ModelArg::Reference(PathBuf::from(p))
    } else {
        ModelArg::Checkpoint(PathBuf::from(s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSplit {
    Test,
    All,
}

struct Method {
    name: &'static str,
    model: Box<dyn Reconstructor>,
}

fn score_mode(cfg: &RunConfig) -> ScoreMode {
    match cfg.eval_draws {
        0 => ScoreMode::Deterministic,
        draws => ScoreMode::Sampled {
            draws,
            seed: cfg.eval_seed,
        },
    }
}

pub fn cmd_eval(cfg: &RunConfig, models: &[ModelArg], data_path: &Path, split: EvalSplit, out: &mut OutDir) -> Result<()> {
    let (raw, _) = load_dataset(data_path)?;
    let mut multi: Option<LoadedModel> = None;
    let mut singles: Vec<LoadedModel> = Vec::new();
    let mut stub: Option<&ModelArg> = None;
    for m in models {
        match m {
            ModelArg::Checkpoint(p) => {
                let lm = LoadedModel::load(p)?;
                match lm.checkpoint.spec.mode {
                    ModelMode::Cvae if multi.is_some() => {
                        return Err(Error::Config("at most one conditional checkpoint per evaluation".into()))
                    }
                    ModelMode::Cvae => multi = Some(lm),
                    ModelMode::Vae => singles.push(lm),
                }
            }
            other => stub = Some(other),
        }
    }
    let anchor = multi.as_ref().or(singles.first());
    let data = match anchor {
        // Per-module checkpoints share the split; re-derive it without the
        // module restriction.
        Some(lm) => {
            let full = LoadedModel {
                checkpoint: Checkpoint {
                    metadata: lm
                        .checkpoint
                        .metadata
                        .iter()
                        .filter(|(k, _)| *k != "train.module")
                        .map(|(k, v)| (k.clone(), v.clone()))
                        .collect(),
                    ..lm.checkpoint.clone()
                },
                trained: lm.trained.clone(),
            };
            full.prepared(&raw)?
        }
        None => prepare(&raw, cfg.fractions, cfg.split_seed)?,
    };
    let eval_set = match split {
        EvalSplit::Test => data.test()?.clone(),
        EvalSplit::All => standardize(&raw, Some(&data.stats))?.0,
    };
    let threshold_set = match (split, data.validation_normals()?) {
        (EvalSplit::Test, Some(v)) => v,
        _ => eval_set
            .filter(|_, l| l.is_normal())?
            .ok_or_else(|| Error::Data("no normal samples to set a threshold".into()))?,
    };

    let mut methods: Vec<Method> = Vec::new();
    if let Some(lm) = multi {
        methods.push(Method {
            name: "multi",
            model: Box::new(lm.trained),
        });
    }
    if !singles.is_empty() {
        let mut ens = BTreeMap::new();
        for lm in singles {
            let m = lm
                .module()
                .ok_or_else(|| Error::Format("single-module checkpoint lacks train.module".into()))?;
            ens.insert(m, lm.trained);
        }
        methods.push(Method {
            name: "single",
            model: Box::new(ModuleEnsemble { models: ens }),
        });
    }
    match stub {
        Some(ModelArg::Identity) => methods.push(Method {
            name: "identity",
            model: Box::new(Identity),
        }),
        Some(ModelArg::Reference(p)) => {
            let p = dataset_path_of_reference(p);
            must_exist(&p)?;
            let reference = standardize(&load_tensor(&p)?, Some(&data.stats))?.0;
            let full = standardize(&raw, Some(&data.stats))?.0;
            methods.push(Method {
                name: "reference",
                model: Box::new(Lookup::new(&full, &reference)?),
            });
        }
        _ => {}
    }
    if methods.is_empty() {
        return Err(Error::Config("no model given".into()));
    }

    let mode = score_mode(cfg);
    let mut sets: Vec<(&str, ScoreSet)> = Vec::new();
    let mut thresholds = String::new();
    for (k, method) in methods.iter().enumerate() {
        let scores = score(method.model.as_ref(), &eval_set, mode)?;
        let normals = score(method.model.as_ref(), &threshold_set, mode)?.aggregates();
        let threshold = pick_threshold(&normals, cfg.fpr_budget)?;
        let eval_normals: Vec<f64> = scores.scores.iter().filter(|s| s.label.is_normal()).map(|s| s.aggregate).collect();
        let realized = if eval_normals.is_empty() { f64::NAN } else { flagged_fraction(&eval_normals, threshold) };
        thresholds.push_str(&format!(
            "{}.threshold={threshold:e}\n{}.threshold_fpr={:e}\n{}.eval_fpr={realized:e}\n",
            method.name,
            method.name,
            flagged_fraction(&normals, threshold),
            method.name
        ));
        let suffix = if k == 0 { String::new() } else { format!("_{}", method.name) };
        write_score_reports(out, &scores, &suffix)?;
        print_pooled(method.name, &scores)?;
        sets.push((method.name, scores));
    }
    thresholds.push_str(&format!("fpr_budget={}\n", cfg.fpr_budget));
    out.text("threshold.txt", &thresholds)?;
    if let [(_, a), (_, b)] = sets.as_slice() {
        let mut modules: Vec<usize> = a.scores.iter().map(|s| s.module).collect();
        modules.sort_unstable();
        modules.dedup();
        write_auc_table(out.file("auc_compare.csv")?, &compare_methods(a, b, &FaultClass::ALL, &modules)?)?;
    }
    out.text("config.txt", &cfg.to_text())?;
    Ok(())
}

fn dataset_path_of_reference(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(REFERENCE_FILE)
    } else {
        p.to_path_buf()
    }
}

/// Scores, AUC table, box statistics, densities, channel ranking and ROC
/// curves, each file name carrying `suffix`.
pub fn write_score_reports(out: &mut OutDir, scores: &ScoreSet, suffix: &str) -> Result<()> {
    write_scores(out.file(&format!("scores{suffix}.csv"))?, scores)?;
    write_auc_table(out.file(&format!("auc_table{suffix}.csv"))?, &auc_table(scores)?)?;
    let summary = summarize(scores)?;
    write_boxstats(out.file(&format!("boxstats{suffix}.csv"))?, &summary, &scores.channel_names)?;
    write_density(out.file(&format!("density{suffix}.csv"))?, &summary, &scores.channel_names)?;
    write_channel_ranking(out.file(&format!("channel_ranking{suffix}.csv"))?, &channel_auc(scores)?, &scores.channel_names)?;
    write_pooled_rocs(out, scores, suffix)
}

/// `roc_<fault>.csv` pooled over modules, one per fault class present.
pub fn write_pooled_rocs(out: &mut OutDir, scores: &ScoreSet, suffix: &str) -> Result<()> {
    let agg = scores.aggregates();
    let normal: Vec<f64> = scores.indices(|s| s.label.is_normal()).iter().map(|&i| agg[i]).collect();
    for fault in FaultClass::ALL {
        let abnormal: Vec<f64> = scores.indices(|s| s.label == Label::Fault(fault)).iter().map(|&i| agg[i]).collect();
        if normal.is_empty() || abnormal.is_empty() {
            continue;
        }
        write_roc(out.file(&format!("roc_{}{suffix}.csv", fault.slug()))?, &roc_auc(&normal, &abnormal)?)?;
    }
    Ok(())
}

fn print_pooled(name: &str, scores: &ScoreSet) -> Result<()> {
    for cell in auc_table(scores)?.iter().filter(|c| c.module.is_none()) {
        if let Some(s) = cell.multi {
            println!("{name}: {} AUC {:.4} ({} faults, {} normals)", cell.fault.name(), s.auc, s.positives, s.negatives);
        }
    }
    Ok(())
}

// -------------------------------------------------------------- landscape

pub fn cmd_landscape(cfg: &RunConfig, model_path: &Path, data_path: &Path, sweep: bool, out: &mut OutDir) -> Result<()> {
    let (raw, _) = load_dataset(data_path)?;
    let lm = LoadedModel::load(model_path)?;
    let data = lm.prepared(&raw)?;
    let grid = cfg.grid;
    if sweep {
        let sweep_cfg = DepthSweepConfig {
            depths: cfg.depths.clone(),
            model: lm.checkpoint.spec.clone(),
            train: lm.train_config()?,
            grid,
            direction_seed: cfg.direction_seed,
            surface: cfg.surface,
        };
        let results = depth_sweep(&data, &sweep_cfg)?;
        let mut reports = Vec::new();
        for r in results {
            let tag = format!("depth{}", r.depth);
            r.grid.write_csv(out.file(&format!("landscape_{tag}.csv"))?)?;
            println!("{tag}: PSD fraction {:.3}, centre loss {:e}", r.report.psd_fraction, r.report.center_loss);
            reports.push((tag, r.report));
        }
        write_reports(out.file("report.csv")?, &reports)?;
    } else {
        let surface_data = cfg.surface.pick(&data)?;
        let (model, params) = (&lm.trained.model, &lm.trained.params);
        let loss = evaluate_loss(model, params, &surface_data, grid.eta)?.total;
        let tag = lm.tag();
        if grid.resolution >= 5 {
            let (g, report) = surface(model, params, &surface_data, grid, cfg.direction_seed)?;
            g.write_csv(out.file(&format!("landscape_{tag}.csv"))?)?;
            write_reports(out.file("report.csv")?, &[(tag.clone(), report.clone())])?;
            println!("{tag}: PSD fraction {:.3}, centre minimal {}", report.psd_fraction, report.center_minimal);
        } else {
            let gamma = random_direction(params, derive_seed(cfg.direction_seed, &[1]));
            let nu = random_direction(params, derive_seed(cfg.direction_seed, &[2]));
            let g = evaluate_grid(model, params, &gamma, &nu, &surface_data, grid)?;
            g.write_csv(out.file(&format!("landscape_{tag}.csv"))?)?;
        }
        println!("{tag}: surface dataset loss {loss:e}");
        out.text("loss.txt", &format!("surface_loss={loss:e}\n"))?;
    }
    out.text("config.txt", &cfg.to_text())?;
    Ok(())
}

// --------------------------------------------------------------------- uq

pub fn run_uq(cfg: &RunConfig, model: &TrainedModel, pool: &WaveformTensor, out: &mut OutDir) -> Result<()> {
    let idx = select_examples(pool.len(), cfg.uq_examples, cfg.uq_seed);
    let examples = pool.select(&idx)?;
    let mut modules: Vec<usize> = examples.module_ids().to_vec();
    modules.sort_unstable();
    modules.dedup();
    for m in modules {
        let sub = examples
            .filter(|mm, _| mm == m)?
            .expect("module taken from the examples");
        let set = replicate(model, &sub, cfg.uq_draws, cfg.uq_seed)?;
        let curves = set.channel_calibration(&sub)?;
        write_channel_areas(out.file(&format!("uq_{m}.csv"))?, sub.channel_names(), &curves, cfg.uq_draws, cfg.uq_seed)?;
        for (k, id) in sub.sample_ids().iter().enumerate() {
            set.write_bands(out.file(&format!("bands_{id}.csv"))?, k, sub.channel_names())?;
        }
        let areas: Vec<String> = sub
            .channel_names()
            .iter()
            .zip(&curves)
            .map(|(n, c)| format!("{n}={:.3}", c.area))
            .collect();
        println!("module {m}: MA {}", areas.join(" "));
    }
    Ok(())
}

pub fn cmd_uq(cfg: &RunConfig, model_path: &Path, data_path: &Path, out: &mut OutDir) -> Result<()> {
    let (raw, _) = load_dataset(data_path)?;
    let lm = LoadedModel::load(model_path)?;
    let data = lm.prepared(&raw)?;
    let pool = data
        .test()?
        .filter(|_, l| l.is_normal())?
        .ok_or_else(|| Error::Data("test split has no normal samples".into()))?;
    run_uq(cfg, &lm.trained, &pool, out)?;
    out.text("config.txt", &cfg.to_text())?;
    Ok(())
}
