//! Synthetic modulator macro-pulses with injectable faults.
//!
//! Every sample is rendered from a [`SamplePlan`]. Measurement noise and
//! timing/amplitude jitter come from per-sample streams that do not depend
//! on the fault draw, so re-rendering a faulty plan as normal yields its
//! exact healthy counterpart.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;

use crate::data::waveform::*;
use crate::error::{Error, Result};
use crate::seeds::derive_seed;
use crate::tensor::Tensor;

const STREAM_NOISE: u64 = 1;
const STREAM_FAULT: u64 = 2;
const STREAM_JITTER: u64 = 3;

// Nominal pulse geometry as fractions of the window.
const PULSE_START: f64 = 0.12;
const RISE: f64 = 0.04;
const FLAT: f64 = 0.6;
const FALL: f64 = 0.04;
const CARRIER_CYCLES: f64 = 20.0;
const DVDT_REFERENCE_STEPS: f64 = 128.0;

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub module_count: usize,
    pub samples_per_module: usize,
    /// Faulty samples, spread round-robin over modules.
    pub fault_count: usize,
    pub time_steps: usize,
    pub noise_sd: f64,
    /// Module pulse amplitudes span `1 +- amplitude_spread / 2`.
    pub amplitude_spread: f64,
    /// Module carrier frequencies span `1 +- frequency_spread / 2` (relative).
    pub frequency_spread: f64,
    /// Proportion of faults per class, in [`FaultClass::ALL`] order.
    pub fault_mix: [f64; 6],
    /// Severity scale per class, in [`FaultClass::ALL`] order.
    pub severity: [f64; 6],
    /// Fraction of faulty samples rendered as a dead (flat) pulse.
    pub flatline_fraction: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            module_count: 15,
            samples_per_module: 40,
            fault_count: 150,
            time_steps: 512,
            noise_sd: 0.02,
            amplitude_spread: 0.4,
            frequency_spread: 0.2,
            fault_mix: [1.0 / 6.0; 6],
            severity: [1.0; 6],
            flatline_fraction: 0.04,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.module_count == 0 || self.module_count > u16::MAX as usize {
            return bad(format!("module_count {} out of range", self.module_count));
        }
        if self.samples_per_module == 0 {
            return bad("samples_per_module must be positive".into());
        }
        if self.time_steps < 16 {
            return bad(format!("time_steps {} is too short for a pulse", self.time_steps));
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return bad(format!("noise_sd {} must be finite and nonnegative", self.noise_sd));
        }
        for (name, v) in [("amplitude_spread", self.amplitude_spread), ("frequency_spread", self.frequency_spread)] {
            if !(v.is_finite() && (0.0..1.0).contains(&v)) {
                return bad(format!("{name} {v} must lie in [0, 1)"));
            }
        }
        if self.fault_mix.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return bad("fault proportions must be nonnegative".into());
        }
        let total: f64 = self.fault_mix.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("fault proportions sum to {total}, not 1"));
        }
        if self.severity.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return bad("severities must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.flatline_fraction) {
            return bad("flatline_fraction must lie in [0, 1]".into());
        }
        Ok(())
    }

    pub fn sample_count(&self) -> usize {
        self.module_count * self.samples_per_module + self.fault_count
    }

    /// Relative amplitude and carrier frequency of a module.
    pub fn module_profile(&self, module: usize) -> (f64, f64) {
        let m = self.module_count;
        let pos = |r: usize| if m == 1 { 0.5 } else { r as f64 / (m - 1) as f64 };
        let amp = 1.0 + self.amplitude_spread * (pos(module) - 0.5);
        // A coprime stride decorrelates frequency rank from amplitude rank.
        let stride = (1..=m).rev().find(|s| gcd(*s, m) == 1 && *s <= m / 2 + 1).unwrap_or(1);
        let freq = 1.0 + self.frequency_spread * (pos((module * stride) % m) - 0.5);
        (amp, freq)
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Everything needed to render one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePlan {
    pub index: usize,
    pub module: usize,
    pub label: Label,
    /// Effective severity (class scale times a per-sample factor); 0 for normals.
    pub severity: f64,
    /// IGBT phase pair disturbed by an IGBT fault.
    pub igbt_pair: usize,
    pub flatline: bool,
}

impl SamplePlan {
    /// The same sample with the fault removed.
    pub fn as_normal(&self) -> Self {
        Self {
            label: Label::Normal,
            severity: 0.0,
            flatline: false,
            ..self.clone()
        }
    }
}

/// Lays out normals (module-major) followed by faulty samples.
pub fn plan(config: &GeneratorConfig) -> Result<Vec<SamplePlan>> {
    config.validate()?;
    let mut plans = Vec::with_capacity(config.sample_count());
    for module in 0..config.module_count {
        for _ in 0..config.samples_per_module {
            plans.push(SamplePlan {
                index: plans.len(),
                module,
                label: Label::Normal,
                severity: 0.0,
                igbt_pair: 0,
                flatline: false,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[STREAM_FAULT]));
    let mut classes = Vec::with_capacity(config.fault_count);
    for (class, n) in FaultClass::ALL.iter().zip(apportion(config.fault_count, &config.fault_mix)) {
        classes.extend(std::iter::repeat_n(*class, n));
    }
    classes.shuffle(&mut rng);
    for (j, class) in classes.into_iter().enumerate() {
        let factor: f64 = rng.random_range(0.5..1.5);
        let igbt_pair = rng.random_range(0..3usize);
        let flatline = rng.random::<f64>() < config.flatline_fraction;
        plans.push(SamplePlan {
            index: plans.len(),
            module: j % config.module_count,
            label: Label::Fault(class),
            severity: config.severity[class.index()] * factor,
            igbt_pair,
            flatline,
        });
    }
    Ok(plans)
}

/// Largest-remainder split of `total` by `weights` (which sum to 1).
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - counts[a] as f64;
        let rb = quotas[b] - counts[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let missing = total - counts.iter().sum::<usize>();
    for &i in order.iter().take(missing) {
        counts[i] += 1;
    }
    counts
}

fn trapezoid(u: f64, start: f64, rise: f64, flat: f64, fall: f64) -> f64 {
    let d = u - start;
    if d <= 0.0 {
        0.0
    } else if d < rise {
        d / rise
    } else if d <= rise + flat {
        1.0
    } else if d < rise + flat + fall {
        1.0 - (d - rise - flat) / fall
    } else {
        0.0
    }
}

/// Renders one sample as a row-major `time x 14` block.
pub fn render(config: &GeneratorConfig, plan: &SamplePlan) -> Vec<f32> {
    let t_len = config.time_steps;
    let c = CHANNEL_NAMES.len();
    let (amp_m, freq_m) = config.module_profile(plan.module);

    let mut jitter = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[STREAM_JITTER, plan.index as u64]));
    let amp_jit: f64 = Normal::new(0.0, 0.005).expect("valid sd").sample(&mut jitter);
    let time_jit: f64 = Normal::new(0.0, 0.001).expect("valid sd").sample(&mut jitter);
    let mut noise = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[STREAM_NOISE, plan.index as u64]));

    let amp = amp_m * (1.0 + amp_jit);
    let cycles = CARRIER_CYCLES * freq_m;
    let s = plan.severity;
    let fault = plan.label.fault();
    let is = |f: FaultClass| fault == Some(f);

    let start = PULSE_START + time_jit + if is(FaultClass::SnsPps) { 0.01 * s } else { 0.0 };
    let mod_fall = if is(FaultClass::Scr) { FALL * (1.0 + 1.5 * s) } else { FALL };
    let igbt_rise = if is(FaultClass::Driver) { RISE * (1.0 + 1.5 * s) } else { RISE };
    let flux_gain = if is(FaultClass::Flux) { 1.0 + 0.3 * s } else { 1.0 };
    let pair_gain = |k: usize| {
        if is(FaultClass::Igbt) && k == plan.igbt_pair {
            1.0 + 0.4 * s
        } else {
            1.0
        }
    };
    let bump = if is(FaultClass::DvDt) { 0.8 * s } else { 0.0 };
    let bump_centre = start + 0.5 * RISE;
    let pulse_end = start + RISE + FLAT + FALL;

    let mut out = vec![0.0f32; t_len * c];
    let mut draw = |sd: f64| -> f64 {
        let e: f64 = StandardNormal.sample(&mut noise);
        sd * e
    };
    let mut prev_modv = 0.0f64;
    for t in 0..t_len {
        let u = t as f64 / t_len as f64;
        let row = &mut out[t * c..(t + 1) * c];
        let mut v = [0.0f64; 14];
        if !plan.flatline {
            let nominal = trapezoid(u, start, RISE, FLAT, FALL);
            let mod_env = trapezoid(u, start, RISE, FLAT, mod_fall);
            let igbt_env = trapezoid(u, start, igbt_rise, FLAT, FALL);
            let phase = 2.0 * PI * cycles * (u - start);
            for k in 0..3 {
                let wave = (phase + 2.0 * PI * k as f64 / 3.0).sin();
                let g = amp * igbt_env * pair_gain(k);
                v[CH_IGBT[2 * k]] = g * wave.max(0.0);
                v[CH_IGBT[2 * k + 1]] = g * (-wave).max(0.0);
                let decay = (-1.5 * (u - start).max(0.0)).exp();
                v[CH_FLUX[k]] = 0.8 * amp * flux_gain * nominal * decay * wave;
            }
            // Cap bank sags while the pulse draws charge, then recharges.
            let drawn = ((u - start) / (pulse_end - start)).clamp(0.0, 1.0);
            let recharge = if u > pulse_end { (-(u - pulse_end) / 0.1).exp() } else { 1.0 };
            v[CH_CBV] = amp * (1.2 - 0.3 * drawn * recharge);
            v[CH_CBI] = 0.5 * amp * nominal;
            let spike = bump * amp * (-((u - bump_centre) / 0.006).powi(2)).exp();
            v[CH_MODV] = amp * mod_env + spike;
            v[CH_MODI] = 0.7 * amp * mod_env * (1.0 + 0.05 * (2.0 * PI * 3.0 * u).sin());
        }
        for (ch, val) in v.iter_mut().enumerate().take(CH_DVDT) {
            let sd = if ch == CH_MODV { 0.25 * config.noise_sd } else { config.noise_sd };
            *val += draw(sd);
        }
        let modv = v[CH_MODV] as f32 as f64;
        v[CH_DVDT] = if t == 0 {
            0.0
        } else {
            dvdt_scale(t_len) * (modv - prev_modv)
        };
        prev_modv = modv;
        for (dst, src) in row.iter_mut().zip(v) {
            *dst = src as f32;
        }
    }
    out
}

/// Factor applied to the first difference of MOD-V to form DV/DT.
pub fn dvdt_scale(time_steps: usize) -> f64 {
    time_steps as f64 / DVDT_REFERENCE_STEPS
}

/// Deterministic synthetic dataset (normals first, then faults).
pub fn generate(config: &GeneratorConfig) -> Result<WaveformTensor> {
    let plans = plan(config)?;
    generate_from(config, &plans)
}

/// Fault-free counterpart of every sample of [`generate`]: same ids, labels
/// and noise, rendered without fault effects.
pub fn generate_reference(config: &GeneratorConfig) -> Result<WaveformTensor> {
    let plans = plan(config)?;
    let clean: Vec<SamplePlan> = plans.iter().map(SamplePlan::as_normal).collect();
    let rendered = generate_from(config, &clean)?;
    WaveformTensor::with_ids(
        rendered.data().clone(),
        WaveformTensor::canonical_names(),
        config.module_count,
        plans.iter().map(|p| p.module).collect(),
        plans.iter().map(|p| p.label).collect(),
        plans.iter().map(|p| p.index as u64).collect(),
    )
}

/// Renders a list of plans (e.g. a subset or modified copy of [`plan`]).
pub fn generate_from(config: &GeneratorConfig, plans: &[SamplePlan]) -> Result<WaveformTensor> {
    let rows: Vec<Vec<f32>> = plans.par_iter().map(|p| render(config, p)).collect();
    let data = Tensor::new(
        vec![plans.len(), config.time_steps, CHANNEL_NAMES.len()],
        rows.concat(),
    )?;
    WaveformTensor::with_ids(
        data,
        WaveformTensor::canonical_names(),
        config.module_count,
        plans.iter().map(|p| p.module).collect(),
        plans.iter().map(|p| p.label).collect(),
        plans.iter().map(|p| p.index as u64).collect(),
    )
}
