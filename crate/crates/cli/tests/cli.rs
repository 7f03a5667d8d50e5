use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = "\
generator.module_count = 3
generator.samples_per_module = 40
generator.fault_count = 12
generator.time_steps = 32
model.kernels_per_block = 4
model.dense_units = 16
model.latent_dim = 4
train.batch_size = 4
train.max_epochs = 3
landscape.resolution = 5
uq.draws = 10
uq.examples = 3
";

struct Work {
    dir: tempfile::TempDir,
}

impl Work {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("tiny.cfg"), TINY).unwrap();
        Self { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    /// Runs the binary with the tiny config; relative `--out`/`--data`
    /// paths resolve inside the work directory.
    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_modwatch"))
            .current_dir(self.dir.path())
            .env_remove("MODWATCH_SEED")
            .arg("--config")
            .arg("tiny.cfg")
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    fn read(&self, rel: &str) -> String {
        std::fs::read_to_string(self.path(rel)).unwrap()
    }

    fn dataset(&self) {
        self.ok(&["generate", "--out", "d", "--with-reference"]);
    }
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

fn files(dir: &Path, prefix: &str, suffix: &str) -> usize {
    std::fs::read_dir(dir)
        .unwrap()
        .filter(|e| {
            let n = e.as_ref().unwrap().file_name().into_string().unwrap();
            n.starts_with(prefix) && n.ends_with(suffix)
        })
        .count()
}

#[test]
fn generate_counts_and_checksums() {
    let w = Work::new();
    w.ok(&["--seed", "7", "generate", "--modules", "2", "--samples-per-module", "5", "--out", "a"]);
    w.ok(&["--seed", "7", "generate", "--modules", "2", "--samples-per-module", "5", "--out", "b"]);
    let rows = csv_rows(&w.read("a/metadata.csv"));
    let normals = rows.iter().filter(|r| r[2] == "normal").count();
    assert_eq!(normals, 10);
    assert_eq!(rows.len(), 10 + 12);
    assert!(rows.iter().all(|r| r[1] == "0" || r[1] == "1"));
    let bytes = |p: &str| std::fs::read(w.path(p)).unwrap();
    assert_eq!(bytes("a/dataset.mwts"), bytes("b/dataset.mwts"));
    assert!(w.read("a/config.txt").contains("generator.seed = 7"));

    // The environment seed is a fallback for --seed.
    let out = Command::new(env!("CARGO_BIN_EXE_modwatch"))
        .current_dir(w.dir.path())
        .env("MODWATCH_SEED", "7")
        .args(["--config", "tiny.cfg", "generate", "--modules", "2", "--samples-per-module", "5", "--out", "c"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(bytes("a/dataset.mwts"), bytes("c/dataset.mwts"));
}

#[test]
fn default_generation_has_fifteen_modules() {
    let w = Work::new();
    let out = Command::new(env!("CARGO_BIN_EXE_modwatch"))
        .current_dir(w.dir.path())
        .args(["generate", "--out", "full"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let rows = csv_rows(&w.read("full/metadata.csv"));
    let mut modules: Vec<&str> = rows.iter().map(|r| r[1].as_str()).collect();
    modules.sort_unstable();
    modules.dedup();
    assert_eq!(modules.len(), 15);
    let config = w.read("full/config.txt");
    assert!(config.contains("generator.module_count = 15"));
}

#[test]
fn config_errors_exit_2() {
    let w = Work::new();
    std::fs::write(w.path("bad.cfg"), "generator.modules = 3\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_modwatch"))
        .current_dir(w.dir.path())
        .args(["--config", "bad.cfg", "generate", "--out", "x"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    assert_eq!(code(&w.run(&["--set", "train.eta=oops", "generate", "--out", "x"])), 2);
    assert_eq!(code(&w.run(&["generate", "--modules", "0", "--out", "x"])), 2);
}

#[test]
fn train_modes_and_determinism() {
    let w = Work::new();
    w.dataset();
    w.ok(&["train", "--data", "d", "--out", "c1"]);
    w.ok(&["train", "--data", "d", "--out", "c2"]);
    assert_eq!(files(&w.path("c1"), "", ".mwck"), 1);
    let last = |p: &str| {
        w.read(p)
            .lines()
            .filter(|l| l.starts_with("cvae.final") || l.starts_with("cvae.best"))
            .map(str::to_string)
            .collect::<Vec<_>>()
    };
    assert!(!last("c1/manifest.txt").is_empty());
    assert_eq!(last("c1/manifest.txt"), last("c2/manifest.txt"));
    assert_eq!(w.read("c1/trainlog_cvae.csv"), w.read("c2/trainlog_cvae.csv"));

    w.ok(&["train", "--data", "d", "--mode", "vae", "--module", "all", "--out", "v"]);
    assert_eq!(files(&w.path("v"), "vae_m", ".mwck"), 3);
    w.ok(&["train", "--data", "d", "--mode", "vae", "--module", "1", "--out", "v1"]);
    assert_eq!(files(&w.path("v1"), "vae_m", ".mwck"), 1);
    assert!(w.path("v1/vae_m1.mwck").exists());
    assert_eq!(code(&w.run(&["train", "--data", "d", "--mode", "vae", "--module", "9", "--out", "v9"])), 4);
    assert_eq!(code(&w.run(&["train", "--data", "missing", "--out", "x"])), 4);
}

#[test]
fn eval_stubs_thresholds_and_comparison() {
    let w = Work::new();
    w.dataset();

    // A model that reproduces its input scores zero everywhere.
    w.ok(&["eval", "--model", "identity", "--data", "d", "--fpr-budget", "1.0", "--out", "id"]);
    for r in csv_rows(&w.read("id/scores.csv")) {
        assert!(r[3..].iter().all(|v| v.parse::<f64>().unwrap() == 0.0));
    }
    // With the full budget the threshold is the smallest normal score.
    assert!(w.read("id/threshold.txt").contains("identity.threshold=0e0"));

    // Reconstructing the fault-free counterpart separates every fault.
    w.ok(&["eval", "--model", "reference=d", "--data", "d", "--split", "all", "--out", "perfect"]);
    let table = csv_rows(&w.read("perfect/auc_table.csv"));
    assert!(!table.is_empty());
    let header = w.read("perfect/auc_table.csv");
    let cols: Vec<&str> = header.lines().next().unwrap().split(',').collect();
    let auc_col = cols.iter().position(|c| *c == "auc_multi").unwrap();
    for r in &table {
        if !r[auc_col].is_empty() {
            assert_eq!(r[auc_col].parse::<f64>().unwrap(), 1.0, "{r:?}");
        }
    }
    for r in csv_rows(&w.read("perfect/scores.csv")).iter().filter(|r| r[2] == "normal") {
        assert_eq!(r.last().unwrap().parse::<f64>().unwrap(), 0.0);
    }

    w.ok(&["train", "--data", "d", "--out", "c"]);
    w.ok(&["train", "--data", "d", "--mode", "vae", "--out", "v"]);
    w.ok(&["eval", "--model", "c/cvae.mwck", "--data", "d", "--fpr-budget", "1.0", "--split", "all", "--out", "e1"]);
    let threshold: f64 = w
        .read("e1/threshold.txt")
        .lines()
        .find_map(|l| l.strip_prefix("multi.threshold="))
        .unwrap()
        .parse()
        .unwrap();
    let min_normal = csv_rows(&w.read("e1/scores.csv"))
        .iter()
        .filter(|r| r[2] == "normal")
        .map(|r| r.last().unwrap().parse::<f64>().unwrap())
        .fold(f64::INFINITY, f64::min);
    assert!(threshold > 0.0);
    assert_eq!(threshold, min_normal);
    assert!(w.read("e1/threshold.txt").contains("multi.threshold_fpr=1e0"));

    let mut args = vec!["eval", "--model", "c/cvae.mwck"];
    for m in ["v/vae_m0.mwck", "v/vae_m1.mwck", "v/vae_m2.mwck"] {
        args.extend(["--model", m]);
    }
    args.extend(["--data", "d", "--out", "both"]);
    w.ok(&args);
    // One pooled row plus one per module for each of the six classes.
    assert_eq!(w.read("both/auc_table.csv").lines().count(), 1 + 6 * (1 + 3));
    let compare = w.read("both/auc_compare.csv");
    assert!(compare.lines().count() > 6);
    for f in ["scores.csv", "scores_single.csv", "boxstats.csv", "density.csv", "channel_ranking.csv", "roc_dvdt.csv"] {
        assert!(w.path("both").join(f).exists(), "{f}");
    }

    // Per-module models cannot score a module none of them was trained on.
    let out = w.run(&["eval", "--model", "v/vae_m0.mwck", "--data", "d", "--out", "unseen"]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn landscape_grids() {
    let w = Work::new();
    w.dataset();
    w.ok(&["train", "--data", "d", "--out", "c"]);

    let stdout = w.ok(&["landscape", "--model", "c/cvae.mwck", "--data", "d", "--res", "1", "--out", "one"]);
    let loss = w.read("one/loss.txt");
    let loss = loss.trim().strip_prefix("surface_loss=").unwrap();
    let grid = w.read("one/landscape_cvae.csv");
    let cell = grid.lines().nth(1).unwrap().split(',').nth(1).unwrap();
    assert_eq!(cell.parse::<f64>().unwrap(), loss.parse::<f64>().unwrap());
    assert!(stdout.contains(loss));

    w.ok(&["landscape", "--model", "c/cvae.mwck", "--data", "d", "--out", "g1"]);
    w.ok(&["--jobs", "3", "landscape", "--model", "c/cvae.mwck", "--data", "d", "--out", "g2"]);
    assert_eq!(w.read("g1/landscape_cvae.csv"), w.read("g2/landscape_cvae.csv"));
    assert_eq!(w.read("g1/report.csv").lines().count(), 2);

    let out = w.run(&["landscape", "--model", "c/cvae.mwck", "--data", "d", "--depth-sweep", "--depths", "2,0", "--out", "bad"]);
    assert_eq!(code(&out), 5);
    w.ok(&["landscape", "--model", "c/cvae.mwck", "--data", "d", "--depth-sweep", "--out", "sweep"]);
    assert_eq!(files(&w.path("sweep"), "landscape_depth", ".csv"), 6);
    assert_eq!(w.read("sweep/report.csv").lines().count(), 7);
}

#[test]
fn uq_reports() {
    let w = Work::new();
    w.dataset();
    w.ok(&["train", "--data", "d", "--out", "c"]);
    w.ok(&["uq", "--model", "c/cvae.mwck", "--data", "d", "--out", "u"]);
    assert_eq!(files(&w.path("u"), "bands_", ".csv"), 3);
    assert!(files(&w.path("u"), "uq_", ".csv") >= 1);
    let rerun_a = std::fs::read_dir(w.path("u")).unwrap().count();
    w.ok(&["uq", "--model", "c/cvae.mwck", "--data", "d", "--out", "u2"]);
    assert_eq!(rerun_a, std::fs::read_dir(w.path("u2")).unwrap().count());
    assert_eq!(code(&w.run(&["uq", "--model", "c/cvae.mwck", "--data", "d", "--draws", "1", "--out", "x"])), 2);
}

#[test]
fn reproduce_bundles() {
    let w = Work::new();
    assert_eq!(code(&w.run(&["reproduce", "--experiment", "figs", "--scale", "paper", "--out", "p"])), 2);
    assert_eq!(code(&w.run(&["reproduce", "--experiment", "figX", "--out", "p"])), 2);

    w.ok(&["reproduce", "--experiment", "figs", "--out", "r"]);
    for fig in ["fig5", "fig6", "fig7", "fig8", "fig9"] {
        assert!(std::fs::read_dir(w.path("r").join(fig)).unwrap().count() > 0, "{fig}");
    }
    let manifest = w.read("r/MANIFEST");
    assert!(manifest.lines().any(|l| l.ends_with("fig8/auc_compare.csv")));
    assert!(manifest.lines().all(|l| l.split("  ").next().unwrap().len() == 64));

    w.ok(&["--set", "train.max_epochs=1", "reproduce", "--paper-experiment", "appendixA", "--out", "a"]);
    assert_eq!(files(&w.path("a/appendixA"), "landscape_depth", ".csv"), 6);

    w.ok(&["reproduce", "--experiment", "appendixB", "--out", "b"]);
    assert!(files(&w.path("b/appendixB"), "uq_", ".csv") >= 1);
}
