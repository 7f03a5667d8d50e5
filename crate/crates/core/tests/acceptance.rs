//! Acceptance suite. Runs every criterion in order and prints one
//! `criterion N ... PASS|FAIL` line each; exits non-zero if any fails.
//!
//! `cargo test -p modwatch-core --test acceptance -- 3 7` runs a subset.

mod common;
mod oracle;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use modwatch::autodiff::{Tape, Var};
use modwatch::data::io::{file_hash, load_tensor, save_tensor};
use modwatch::data::{generate, FaultClass, GeneratorConfig, SplitFractions};
use modwatch::eval::{flagged_fraction, pick_threshold, roc_auc};
use modwatch::experiment::*;
use modwatch::landscape::*;
use modwatch::model::{
    kld_gaussian, mse, standard_normal, Checkpoint, LatentDistribution, LatentNoise, Model, ModelMode, ModelSpec,
};
use modwatch::training::{evaluate_loss, train, TrainConfig};
use modwatch::uq::{calibration, replicate_range};
use modwatch::Tensor;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

#[derive(Default)]
struct Context {
    detection: Option<DetectionResult>,
}

impl Context {
    fn detection(&mut self) -> &DetectionResult {
        self.detection
            .get_or_insert_with(|| run_detection(&DetectionConfig::desk()).expect("desk detection run"))
    }
}

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(usize, &str, fn(&mut Context) -> Outcome); 10] = [
        (1, "gradient correctness", gradients),
        (2, "loss identities", loss_identities),
        (3, "AUC oracle equivalence", auc_oracle),
        (4, "threshold budget", threshold_budget),
        (5, "synthetic-analog detection", detection),
        (6, "multi-vs-single trend", multi_vs_single),
        (7, "landscape exactness", landscape_exactness),
        (8, "depth sweep trend", depth_trend),
        (9, "UQ calibration", uq_calibration),
        (10, "determinism and formats", determinism),
    ];
    let mut ctx = Context::default();
    let mut failed = Vec::new();
    for (n, name, run) in criteria {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| run(&mut ctx)))
            .unwrap_or_else(|e| {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                outcome(false, format!("panicked: {msg}"))
            });
        let verdict = if result.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {n:>2} {name:<28} {verdict}  {} [{:.1}s]",
            result.detail,
            start.elapsed().as_secs_f64()
        );
        if !result.pass {
            failed.push(n);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- 1

type Build = dyn Fn(&mut Tape, &[Var]) -> modwatch::Result<Var>;
type Reference = dyn Fn(&[Vec<f64>]) -> Vec<f64>;

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn away_from_zero(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n)
        .map(|_| {
            let m = rng.random_range(0.05f32..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect()
}

/// Relative error between the tape gradient of `sum(op(x) * w)` and
/// central differences of the f64 reference.
fn op_trial(rng: &mut ChaCha8Rng, inputs: Vec<(Vec<usize>, Vec<f32>)>, build: &Build, reference: &Reference) -> f64 {
    let mut tape = Tape::new();
    let leaves: Vec<Var> = inputs
        .iter()
        .map(|(d, v)| tape.leaf(Tensor::new(d.clone(), v.clone()).unwrap()).unwrap())
        .collect();
    let out = build(&mut tape, &leaves).unwrap();
    let out_dims = tape.value(out).dims().to_vec();
    let w = uniform(rng, tape.value(out).len(), -1.0, 1.0);
    let wv = tape.constant(Tensor::new(out_dims, w.clone()).unwrap()).unwrap();
    let prod = tape.mul(out, wv).unwrap();
    let loss = tape.sum(prod).unwrap();
    let grads = tape.backward(loss).unwrap();

    let x64: Vec<Vec<f64>> = inputs.iter().map(|(_, v)| v.iter().map(|&a| f64::from(a)).collect()).collect();
    let w64: Vec<f64> = w.iter().map(|&a| f64::from(a)).collect();
    let (mut num, mut den) = (0.0, 0.0);
    for (k, leaf) in leaves.iter().enumerate() {
        let f = |xk: &[f64]| {
            let mut xs = x64.clone();
            xs[k] = xk.to_vec();
            reference(&xs).iter().zip(&w64).map(|(a, b)| a * b).sum::<f64>()
        };
        let coords: Vec<usize> = (0..x64[k].len()).collect();
        let fd = oracle::fd_grad(&f, &x64[k], &coords, 1e-5);
        let analytic = grads.wrt(*leaf).expect("leaf gradient");
        for (a, b) in analytic.data().iter().zip(&fd) {
            num += (f64::from(*a) - b).powi(2);
            den += b * b;
        }
    }
    num.sqrt() / den.sqrt().max(1e-12)
}

fn op_cases() -> Vec<(&'static str, Box<dyn Fn(&mut ChaCha8Rng) -> f64>)> {
    let mut cases: Vec<(&'static str, Box<dyn Fn(&mut ChaCha8Rng) -> f64>)> = Vec::new();
    cases.push((
        "conv1d",
        Box::new(|rng| {
            let (b, c, o) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4));
            let k = [1, 3, 5][rng.random_range(0..3)];
            let stride = rng.random_range(1..3);
            let same = rng.random_bool(0.5);
            let t = rng.random_range(k..k + 8);
            let x = uniform(rng, b * t * c, -1.0, 1.0);
            let w = uniform(rng, o * c * k, -1.0, 1.0);
            let bias = uniform(rng, o, -1.0, 1.0);
            let pad = if same { modwatch::kernels::Padding::Same } else { modwatch::kernels::Padding::Valid };
            op_trial(
                rng,
                vec![(vec![b, t, c], x), (vec![o, c, k], w), (vec![o], bias)],
                &move |tape, v| tape.conv1d(v[0], v[1], v[2], stride, pad),
                &move |xs| oracle::conv1d(&xs[0], [b, t, c], &xs[1], [o, c, k], &xs[2], stride, same).0,
            )
        }),
    ));
    cases.push((
        "dense",
        Box::new(|rng| {
            let (b, n, o) = (rng.random_range(1..4), rng.random_range(1..7), rng.random_range(1..6));
            let inputs = vec![
                (vec![b, n], uniform(rng, b * n, -1.0, 1.0)),
                (vec![o, n], uniform(rng, o * n, -1.0, 1.0)),
                (vec![o], uniform(rng, o, -1.0, 1.0)),
            ];
            op_trial(
                rng,
                inputs,
                &|tape, v| tape.dense(v[0], v[1], v[2]),
                &move |xs| oracle::dense(&xs[0], b, &xs[1], o, &xs[2]),
            )
        }),
    ));
    cases.push((
        "relu",
        Box::new(|rng| {
            let n = rng.random_range(1..20);
            let inputs = vec![(vec![n], away_from_zero(rng, n))];
            op_trial(rng, inputs, &|tape, v| tape.relu(v[0]), &|xs| oracle::relu(&xs[0]))
        }),
    ));
    cases.push((
        "reshape",
        Box::new(|rng| {
            let (a, b) = (rng.random_range(1..5), rng.random_range(1..5));
            let inputs = vec![(vec![a * b], uniform(rng, a * b, -1.0, 1.0))];
            op_trial(rng, inputs, &move |tape, v| tape.reshape(v[0], &[a, b]), &|xs| xs[0].clone())
        }),
    ));
    cases.push((
        "concat",
        Box::new(|rng| {
            let (b, na, nb) = (rng.random_range(1..4), rng.random_range(1..5), rng.random_range(1..5));
            let inputs = vec![
                (vec![b, na], uniform(rng, b * na, -1.0, 1.0)),
                (vec![b, nb], uniform(rng, b * nb, -1.0, 1.0)),
            ];
            op_trial(rng, inputs, &|tape, v| tape.concat(v[0], v[1]), &move |xs| oracle::concat(&xs[0], &xs[1], b))
        }),
    ));
    cases.push((
        "add",
        Box::new(|rng| {
            let n = rng.random_range(1..12);
            let inputs = vec![(vec![n], uniform(rng, n, -1.0, 1.0)), (vec![n], uniform(rng, n, -1.0, 1.0))];
            op_trial(rng, inputs, &|tape, v| tape.add(v[0], v[1]), &|xs| {
                xs[0].iter().zip(&xs[1]).map(|(a, b)| a + b).collect()
            })
        }),
    ));
    cases.push((
        "mul",
        Box::new(|rng| {
            let n = rng.random_range(1..12);
            let inputs = vec![(vec![n], uniform(rng, n, -1.0, 1.0)), (vec![n], uniform(rng, n, -1.0, 1.0))];
            op_trial(rng, inputs, &|tape, v| tape.mul(v[0], v[1]), &|xs| {
                xs[0].iter().zip(&xs[1]).map(|(a, b)| a * b).collect()
            })
        }),
    ));
    cases.push((
        "scale",
        Box::new(|rng| {
            let n = rng.random_range(1..12);
            let c = rng.random_range(-2.0f32..2.0);
            let inputs = vec![(vec![n], uniform(rng, n, -1.0, 1.0))];
            op_trial(rng, inputs, &move |tape, v| tape.scale(v[0], c), &move |xs| {
                xs[0].iter().map(|a| a * f64::from(c)).collect()
            })
        }),
    ));
    cases.push((
        "exp",
        Box::new(|rng| {
            let n = rng.random_range(1..12);
            let inputs = vec![(vec![n], uniform(rng, n, -2.0, 2.0))];
            op_trial(rng, inputs, &|tape, v| tape.exp(v[0]), &|xs| xs[0].iter().map(|a| a.exp()).collect())
        }),
    ));
    cases.push((
        "resize_time",
        Box::new(|rng| {
            let (b, t, c) = (rng.random_range(1..3), rng.random_range(1..8), rng.random_range(1..3));
            let out = rng.random_range(1..16);
            let inputs = vec![(vec![b, t, c], uniform(rng, b * t * c, -1.0, 1.0))];
            op_trial(rng, inputs, &move |tape, v| tape.resize_time(v[0], out), &move |xs| {
                oracle::resize(&xs[0], [b, t, c], out)
            })
        }),
    ));
    cases.push((
        "sum",
        Box::new(|rng| {
            let n = rng.random_range(1..12);
            let inputs = vec![(vec![n], uniform(rng, n, -1.0, 1.0))];
            op_trial(rng, inputs, &|tape, v| tape.sum(v[0]), &|xs| vec![xs[0].iter().sum()])
        }),
    ));
    cases.push((
        "mse",
        Box::new(|rng| {
            let n = rng.random_range(1..12);
            let inputs = vec![(vec![n], uniform(rng, n, -1.0, 1.0)), (vec![n], uniform(rng, n, -1.0, 1.0))];
            op_trial(rng, inputs, &|tape, v| tape.mse(v[0], v[1]), &|xs| vec![oracle::mse(&xs[0], &xs[1])])
        }),
    ));
    cases.push((
        "gaussian_kld",
        Box::new(|rng| {
            let (b, d) = (rng.random_range(1..4), rng.random_range(1..6));
            let inputs = vec![
                (vec![b, d], uniform(rng, b * d, -1.5, 1.5)),
                (vec![b, d], uniform(rng, b * d, -2.0, 2.0)),
            ];
            op_trial(rng, inputs, &|tape, v| tape.gaussian_kld(v[0], v[1]), &move |xs| {
                vec![oracle::kld(&xs[0], &xs[1], b)]
            })
        }),
    ));
    cases
}

/// Full desk conditional model, 2-sample batch, sampled coordinates of every
/// parameter tensor against the f64 reference network.
fn desk_model_gradient() -> (f64, String) {
    let spec = ModelSpec::desk(ModelMode::Cvae);
    let model = Model::new(spec.clone()).unwrap();
    let params = model.init_params(7);
    let x = standard_normal(&[2, spec.time_steps, spec.channels], 1);
    let eps = standard_normal(&[2, spec.latent_dim], 2);
    let modules = [3usize, 11];
    let (_, grads) = model
        .loss_and_gradients(&params, &x, Some(&modules), 1.0, &LatentNoise::Fixed(eps.clone()))
        .unwrap();
    let p64 = oracle::params_f64(&params);
    let g64 = oracle::params_f64(&grads);
    let x64: Vec<f64> = x.data().iter().map(|&v| f64::from(v)).collect();
    let e64: Vec<f64> = eps.data().iter().map(|&v| f64::from(v)).collect();
    let mut cond = vec![0.0; 2 * spec.module_count];
    cond[modules[0]] = 1.0;
    cond[spec.module_count + modules[1]] = 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: (f64, String) = (0.0, String::new());
    for ti in 0..p64.len() {
        let len = p64[ti].len();
        let coords: Vec<usize> = if len <= 16 {
            (0..len).collect()
        } else {
            (0..16).map(|_| rng.random_range(0..len)).collect()
        };
        let f = |v: &[f64]| {
            let mut p = p64.clone();
            p[ti] = v.to_vec();
            oracle::cvae_loss(&spec, &p, &x64, &cond, &e64, 1.0)
        };
        let fd = oracle::fd_grad(&f, &p64[ti], &coords, 1e-5);
        let (mut num, mut den) = (0.0, 0.0);
        for (&c, b) in coords.iter().zip(&fd) {
            num += (g64[ti][c] - b).powi(2);
            den += b * b;
        }
        let rel = num.sqrt() / den.sqrt().max(1e-12);
        if rel >= worst.0 {
            let layer = &params.layers()[ti / 2];
            worst = (rel, format!("{}.{}", layer.name, if ti % 2 == 0 { "kernel" } else { "bias" }));
        }
    }
    worst
}

fn gradients(_: &mut Context) -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = (0.0f64, "");
    for (name, case) in op_cases() {
        for _ in 0..100 {
            let e = case(&mut rng);
            if !(e <= worst.0) {
                worst = (e, name);
            }
        }
    }
    let (model_err, model_at) = desk_model_gradient();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst.0 <= 1e-3 && model_err <= 1e-3 && secs < 120.0,
        format!(
            "ops: worst rel err {:.2e} ({}); desk model: worst {:.2e} ({model_at}); {secs:.1}s",
            worst.0, worst.1, model_err
        ),
    )
}

// ---------------------------------------------------------------- 2

fn loss_identities(_: &mut Context) -> Outcome {
    let zero = LatentDistribution::at_mean(Tensor::zeros(&[3, 4]), Tensor::zeros(&[3, 4])).unwrap();
    let at_prior = kld_gaussian(&zero).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut min_kld = f64::INFINITY;
    for _ in 0..1000 {
        let (b, d) = (rng.random_range(1..5), rng.random_range(1..9));
        let mu = Tensor::new(vec![b, d], uniform(&mut rng, b * d, -3.0, 3.0)).unwrap();
        let lv = Tensor::new(vec![b, d], uniform(&mut rng, b * d, -4.0, 4.0)).unwrap();
        min_kld = min_kld.min(kld_gaussian(&LatentDistribution::at_mean(mu, lv).unwrap()).unwrap());
    }
    let data = common::small_data(2);
    let model = Model::new(spec_for(&common::small_spec(), ModelMode::Cvae, &data.train)).unwrap();
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let params = model.init_params(seed);
        let (x, ids) = data.train.batch(&[0, 1, 2, 3, 4]).unwrap();
        let mods: Vec<usize> = ids;
        let eta = 0.25 + seed as f64 * 0.1;
        let noise = LatentNoise::Seeded(seed + 100);
        let total = model.loss(&params, &x, Some(&mods), eta, &noise).unwrap().total;
        let dist = model.encode(&params, &x, Some(&mods)).unwrap();
        let recon = model.reconstruct(&params, &x, Some(&mods), &noise).unwrap();
        let external = mse(&x, &recon).unwrap() + eta * kld_gaussian(&dist).unwrap();
        worst = worst.max((total - external).abs() / external.abs().max(1.0));
    }
    outcome(
        at_prior == 0.0 && min_kld >= 0.0 && worst <= 1e-6,
        format!("kld(0,1)={at_prior}; min kld over 1000 draws {min_kld:.3e}; recomposition err {worst:.2e}"),
    )
}

// ---------------------------------------------------------------- 3

fn auc_oracle(_: &mut Context) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    for _ in 0..200 {
        let draw = |rng: &mut ChaCha8Rng| (0..20).map(|_| f64::from(rng.random_range(0..8u8))).collect::<Vec<_>>();
        let (normal, abnormal) = (draw(&mut rng), draw(&mut rng));
        let mut twice_u = 0u64;
        for a in &abnormal {
            for n in &normal {
                twice_u += if a > n { 2 } else { u64::from(a == n) };
            }
        }
        let brute = twice_u as f64 / (2.0 * 400.0);
        if roc_auc(&normal, &abnormal).unwrap().auc != brute {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("{mismatches} mismatches in 200 tied 20+20 sets"))
}

// ---------------------------------------------------------------- 4

fn threshold_budget(_: &mut Context) -> Outcome {
    let budget = 0.1;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let sample = |rng: &mut ChaCha8Rng, n: usize| {
        (0..n)
            .map(|_| {
                let e: f64 = StandardNormal.sample(rng);
                e.exp()
            })
            .collect::<Vec<f64>>()
    };
    let (mut own_max, mut fresh_lo, mut fresh_hi) = (0.0f64, 1.0f64, 0.0f64);
    for _ in 0..100 {
        let normal = sample(&mut rng, 1000);
        let t = pick_threshold(&normal, budget).unwrap();
        own_max = own_max.max(flagged_fraction(&normal, t));
        let fresh = flagged_fraction(&sample(&mut rng, 1000), t);
        fresh_lo = fresh_lo.min(fresh);
        fresh_hi = fresh_hi.max(fresh);
    }
    outcome(
        own_max <= budget && fresh_lo >= budget - 0.05 && fresh_hi <= budget + 0.05,
        format!("own FPR max {own_max:.3}; fresh FPR range [{fresh_lo:.3}, {fresh_hi:.3}]"),
    )
}

// ---------------------------------------------------------------- 5

fn detection(ctx: &mut Context) -> Outcome {
    let r = ctx.detection();
    let pooled: Vec<(FaultClass, f64)> = r
        .auc
        .iter()
        .filter(|c| c.module.is_none())
        .map(|c| (c.fault, c.multi.map(|s| s.auc).unwrap_or(f64::NAN)))
        .collect();
    let dvdt = pooled.iter().find(|(f, _)| *f == FaultClass::DvDt).map(|p| p.1).unwrap_or(f64::NAN);
    let strong = pooled.iter().filter(|(_, a)| *a >= 0.75).count();
    let listing: Vec<String> = pooled.iter().map(|(f, a)| format!("{}={a:.3}", f.name())).collect();
    outcome(
        dvdt >= 0.90 && strong >= 4,
        format!(
            "{}; {strong}/6 >= 0.75; {} epochs in {:.0}s",
            listing.join(" "),
            r.log.epochs.len(),
            r.log.wall_time_secs
        ),
    )
}

// ---------------------------------------------------------------- 6

fn multi_vs_single(_: &mut Context) -> Outcome {
    let mut base = ScarceModuleConfig::desk();
    base.generator.time_steps = 256;
    base.model.time_steps = 256;
    base.train.max_epochs = 50;
    let mut wins = 0;
    let mut pairs = Vec::new();
    for seed in 0..5 {
        let r = run_scarce_module(&base.reseeded(seed)).unwrap();
        wins += usize::from(r.auc_multi >= r.auc_single);
        pairs.push(format!("{:.3}/{:.3}", r.auc_multi, r.auc_single));
    }
    outcome(wins >= 4, format!("multi>=single in {wins}/5 seeds (multi/single: {})", pairs.join(" ")))
}

// ---------------------------------------------------------------- 7

fn landscape_exactness(_: &mut Context) -> Outcome {
    let (data, m) = common::small_trained(7, 5);
    let (g, n) = (random_direction(&m.params, 1), random_direction(&m.params, 2));
    let cfg = |workers| GridConfig {
        resolution: 5,
        range: 1.0,
        workers,
        eta: 1.0,
    };
    let loss = evaluate_loss(&m.model, &m.params, &data.train, 1.0).unwrap().total;
    let serial = evaluate_grid(&m.model, &m.params, &g, &n, &data.train, cfg(1)).unwrap();
    let parallel = evaluate_grid(&m.model, &m.params, &g, &n, &data.train, cfg(8)).unwrap();
    let centre_exact = serial.at(2, 2).to_bits() == loss.to_bits() && serial.center_loss.to_bits() == loss.to_bits();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let workers_exact = bits(&serial.values) == bits(&parallel.values);
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let d = random_direction(&m.params, seed);
        for (dl, wl) in d.values.layers().iter().zip(m.params.layers()) {
            for u in 0..wl.units() {
                let norm = |v: &[f32]| v.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
                let (dn, wn) = (norm(dl.unit(u)), norm(wl.unit(u)));
                worst = worst.max((dn - wn).abs() / wn.max(1e-30));
            }
        }
    }
    outcome(
        centre_exact && workers_exact && worst <= 1e-6,
        format!("centre bitwise {centre_exact}; 1 vs 8 workers bitwise {workers_exact}; worst unit-norm rel err {worst:.2e}"),
    )
}

// ---------------------------------------------------------------- 8

fn depth_trend(_: &mut Context) -> Outcome {
    let mut ok = 0;
    let mut rows = Vec::new();
    for seed in 0..5u64 {
        let gen = GeneratorConfig {
            module_count: 3,
            samples_per_module: 40,
            fault_count: 6,
            time_steps: 64,
            seed,
            ..GeneratorConfig::default()
        };
        let data = prepare(&generate(&gen).unwrap(), SplitFractions::default(), seed).unwrap();
        let cfg = DepthSweepConfig {
            depths: vec![3, 10, 30],
            model: common::small_spec(),
            train: TrainConfig {
                max_epochs: 100,
                seed,
                ..TrainConfig::desk()
            },
            grid: GridConfig {
                resolution: 11,
                ..GridConfig::default()
            },
            direction_seed: seed,
            surface: SurfaceData::Train,
        };
        let psd: Vec<f64> = depth_sweep(&data, &cfg).unwrap().iter().map(|r| r.report.psd_fraction).collect();
        ok += usize::from(psd.windows(2).all(|w| w[1] <= w[0]));
        rows.push(format!("{:.2}>{:.2}>{:.2}", psd[0], psd[1], psd[2]));
    }
    outcome(ok >= 4, format!("non-increasing in {ok}/5 seeds (PSD at depth 3/10/30: {})", rows.join(" ")))
}

// ---------------------------------------------------------------- 9

fn uq_calibration(ctx: &mut Context) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 10_000;
    let mean: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let sd: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let obs: Vec<f64> = mean
        .iter()
        .zip(&sd)
        .map(|(m, s)| {
            let e: f64 = StandardNormal.sample(&mut rng);
            m + s * e
        })
        .collect();
    let calibrated = calibration(&mean, &sd, &obs).unwrap().area;

    let mut bounded = true;
    for _ in 0..500 {
        let k = rng.random_range(1..100);
        let draw = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| (0..k).map(|_| rng.random_range(lo..hi)).collect::<Vec<f64>>();
        let (m, s, o) = (draw(&mut rng, -3.0, 3.0), draw(&mut rng, 0.0, 2.0), draw(&mut rng, -6.0, 6.0));
        let a = calibration(&m, &s, &o).unwrap().area;
        bounded &= (0.0..=0.5).contains(&a);
    }

    let r = ctx.detection();
    let test = r.data.test().unwrap();
    let one = test.select(&[0]).unwrap();
    let first = replicate_range(&r.model, &one, 0..500, 11).unwrap();
    let second = replicate_range(&r.model, &one, 500..1000, 11).unwrap();
    let all = first.merge(&second).unwrap();
    let (sd500, sd1000) = (first.sd(), all.sd());
    let diff = sd500.iter().zip(&sd1000).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let base = sd1000.iter().map(|b| b * b).sum::<f64>().sqrt();
    let convergence = diff / base;
    outcome(
        calibrated < 0.02 && bounded && convergence < 0.1,
        format!(
            "calibrated MA {calibrated:.4}; MA in [0,0.5] over 500 sets: {bounded}; |SD500-SD1000|/|SD1000| = {convergence:.3}"
        ),
    )
}

// ---------------------------------------------------------------- 10

fn determinism(_: &mut Context) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let path = |name: &str| dir.path().join(name);
    let cfg = GeneratorConfig {
        seed: 7,
        ..GeneratorConfig::default()
    };
    let a = generate(&cfg).unwrap();
    save_tensor(path("a.mwts"), &a).unwrap();
    save_tensor(path("b.mwts"), &generate(&cfg).unwrap()).unwrap();
    let dataset_same = file_hash(path("a.mwts")).unwrap() == file_hash(path("b.mwts")).unwrap();
    let reloaded = load_tensor(path("a.mwts")).unwrap();
    let tensor_roundtrip = reloaded == a
        && reloaded
            .data()
            .data()
            .iter()
            .zip(a.data().data())
            .all(|(x, y)| x.to_bits() == y.to_bits());

    let data = common::small_data(10);
    let model = Model::new(spec_for(&common::small_spec(), ModelMode::Cvae, &data.train)).unwrap();
    let tc = TrainConfig {
        max_epochs: 4,
        seed: 5,
        ..TrainConfig::desk()
    };
    let val = data.validation_normals().unwrap();
    let run = || {
        let (p, log) = train(&model, &data.train, val.as_ref(), &tc).unwrap();
        let mut csv = Vec::new();
        log.write_csv(&mut csv).unwrap();
        (p, log.series(), csv)
    };
    let (p1, s1, c1) = run();
    let (p2, s2, c2) = run();
    let log_same = s1 == s2 && c1 == c2 && p1 == p2;

    let surface_csv = || {
        let (g, n) = (random_direction(&p1, 3), random_direction(&p1, 4));
        let grid = evaluate_grid(&model, &p1, &g, &n, &data.train, GridConfig { resolution: 5, ..GridConfig::default() }).unwrap();
        let mut out = Vec::new();
        grid.write_csv(&mut out).unwrap();
        out
    };
    let landscape_same = surface_csv() == surface_csv();

    let ck = Checkpoint {
        spec: model.spec().clone(),
        params: p1.clone(),
        metadata: [("note".to_string(), "x".to_string())].into(),
    };
    ck.save(path("m.mwck")).unwrap();
    let back = Checkpoint::load(path("m.mwck")).unwrap();
    let bits = |p: &modwatch::params::ModelParameters| p.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let checkpoint_roundtrip = back.spec == ck.spec && back.metadata == ck.metadata && bits(&back.params) == bits(&p1);

    outcome(
        dataset_same && tensor_roundtrip && log_same && landscape_same && checkpoint_roundtrip,
        format!(
            "dataset checksums {dataset_same}; train log {log_same}; landscape csv {landscape_same}; tensor file {tensor_roundtrip}; checkpoint {checkpoint_roundtrip}"
        ),
    )
}
