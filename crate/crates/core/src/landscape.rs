//! Filter-normalised two-dimensional loss surfaces.
//!
//! `f(a, b) = L(theta + a * gamma + b * nu)`, where each filter (conv output
//! channel or dense output row) of a random direction is rescaled to the
//! Frobenius norm of the matching weight filter. Biases get no direction.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::data::io::csv_err;
use crate::data::WaveformTensor;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::params::ModelParameters;
use crate::seeds::derive_seed;
use crate::training::evaluate_loss;

#[derive(Debug, Clone, PartialEq)]
pub struct Direction {
    /// Same layer layout as the parameters it perturbs.
    pub values: ModelParameters,
    pub seed: u64,
}

fn unit_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

/// Rescales every filter of `direction` to the norm of the matching filter
/// of `params` and zeroes the bias entries.
pub fn normalize(direction: &mut ModelParameters, params: &ModelParameters) -> Result<()> {
    direction.check_compatible(params)?;
    for (d, w) in direction.layers_mut().iter_mut().zip(params.layers()) {
        let len = w.unit_len();
        for u in 0..w.units() {
            let target = unit_norm(w.unit(u));
            let unit = &mut d.kernel.data_mut()[u * len..(u + 1) * len];
            let current = unit_norm(unit);
            let scale = if current > 0.0 { target / current } else { 0.0 };
            for v in unit.iter_mut() {
                *v = (f64::from(*v) * scale) as f32;
            }
        }
        d.bias.data_mut().fill(0.0);
    }
    Ok(())
}

/// Standard-normal direction, filter-normalised against `params`.
pub fn random_direction(params: &ModelParameters, seed: u64) -> Direction {
    let mut values = params.zeros_like();
    for (i, layer) in values.layers_mut().iter_mut().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[i as u64]));
        for v in layer.kernel.data_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
    }
    normalize(&mut values, params).expect("direction shares the parameter layout");
    Direction { values, seed }
}

/// `theta + (a * gamma + b * nu)`, entrywise in f64.
pub fn perturb(params: &ModelParameters, gamma: &Direction, nu: &Direction, a: f64, b: f64) -> ModelParameters {
    let mut out = params.clone();
    let dirs = gamma.values.tensors().zip(nu.values.tensors());
    for (t, (g, n)) in out.tensors_mut().zip(dirs) {
        for ((v, &gv), &nv) in t.data_mut().iter_mut().zip(g.data()).zip(n.data()) {
            *v = (f64::from(*v) + (a * f64::from(gv) + b * f64::from(nv))) as f32;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridConfig {
    pub resolution: usize,
    /// Axes span `[-range, range]`.
    pub range: f64,
    /// Worker threads for cell evaluation.
    pub workers: usize,
    pub eta: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            resolution: 25,
            range: 1.0,
            workers: 1,
            eta: 1.0,
        }
    }
}

/// Uniform axis with an exact zero at the centre of odd resolutions.
pub fn axis(resolution: usize, range: f64) -> Vec<f64> {
    if resolution == 1 {
        return vec![0.0];
    }
    let n = (resolution - 1) as f64;
    (0..resolution)
        .map(|i| {
            let k = 2 * i as i64 - (resolution as i64 - 1);
            range * (k as f64 / n)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandscapeGrid {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// `values[i * beta.len() + j] = f(alpha[i], beta[j])`; non-finite
    /// losses are stored as `+inf` (overflow).
    pub values: Vec<f64>,
    pub center_loss: f64,
}

impl LandscapeGrid {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.beta.len() + j]
    }

    pub fn overflow_cells(&self) -> usize {
        self.values.iter().filter(|v| !v.is_finite()).count()
    }

    pub fn transposed(&self) -> Self {
        let (na, nb) = (self.alpha.len(), self.beta.len());
        let mut values = vec![0.0; na * nb];
        for i in 0..na {
            for j in 0..nb {
                values[j * na + i] = self.at(i, j);
            }
        }
        Self {
            alpha: self.beta.clone(),
            beta: self.alpha.clone(),
            values,
            center_loss: self.center_loss,
        }
    }

    /// Header `alpha\beta,<beta values>`, then one row per alpha. Overflowed
    /// cells read `overflow`.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["alpha\\beta".to_string()];
        header.extend(self.beta.iter().map(|b| format!("{b:e}")));
        out.write_record(&header).map_err(csv_err)?;
        for (i, a) in self.alpha.iter().enumerate() {
            let mut row = vec![format!("{a:e}")];
            row.extend((0..self.beta.len()).map(|j| {
                let v = self.at(i, j);
                if v.is_finite() {
                    format!("{v:e}")
                } else {
                    "overflow".into()
                }
            }));
            out.write_record(&row).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn surface_loss(model: &Model, params: &ModelParameters, data: &WaveformTensor, eta: f64) -> Result<f64> {
    match evaluate_loss(model, params, data, eta) {
        Ok(l) if l.total.is_finite() => Ok(l.total),
        Ok(_) | Err(Error::NonFinite(_)) => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

/// Evaluates every grid cell with `epsilon = 0`. Cells are independent and
/// assembled by index, so the result does not depend on `workers`.
pub fn evaluate_grid(
    model: &Model,
    params: &ModelParameters,
    gamma: &Direction,
    nu: &Direction,
    data: &WaveformTensor,
    cfg: GridConfig,
) -> Result<LandscapeGrid> {
    if gamma.seed == nu.seed {
        return Err(Error::Config("the two directions must use different seeds".into()));
    }
    evaluate_grid_unchecked(model, params, gamma, nu, data, cfg)
}

/// As [`evaluate_grid`] without the distinct-seed requirement.
pub fn evaluate_grid_unchecked(
    model: &Model,
    params: &ModelParameters,
    gamma: &Direction,
    nu: &Direction,
    data: &WaveformTensor,
    cfg: GridConfig,
) -> Result<LandscapeGrid> {
    if cfg.resolution == 0 || !(cfg.range.is_finite() && cfg.range > 0.0) {
        return Err(Error::Config("grid needs a positive resolution and range".into()));
    }
    if data.is_empty() {
        return Err(Error::Data("landscape dataset is empty".into()));
    }
    model.check_params(params)?;
    gamma.values.check_compatible(params)?;
    nu.values.check_compatible(params)?;
    let alpha = axis(cfg.resolution, cfg.range);
    let beta = alpha.clone();
    let cells: Vec<(f64, f64)> = alpha.iter().flat_map(|&a| beta.iter().map(move |&b| (a, b))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let (center_loss, values) = pool.install(|| -> Result<(f64, Vec<f64>)> {
        let center = surface_loss(model, &perturb(params, gamma, nu, 0.0, 0.0), data, cfg.eta)?;
        let values = cells
            .par_iter()
            .map(|&(a, b)| surface_loss(model, &perturb(params, gamma, nu, a, b), data, cfg.eta))
            .collect::<Result<Vec<_>>>()?;
        Ok((center, values))
    })?;
    Ok(LandscapeGrid {
        alpha,
        beta,
        values,
        center_loss,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvexityReport {
    pub resolution: usize,
    /// Interior points whose 5-point-stencil Hessian is positive semidefinite.
    pub psd_fraction: f64,
    pub loss_min: f64,
    pub loss_max: f64,
    pub center_loss: f64,
    /// Centre loss lies within the lowest 5% of grid values.
    pub center_minimal: bool,
    /// Fraction of outward steps along the 8 rays from the centre that do
    /// not decrease the loss.
    pub ray_monotonicity: f64,
    pub overflow_cells: usize,
}

pub fn convexity_report(grid: &LandscapeGrid) -> Result<ConvexityReport> {
    let (na, nb) = (grid.alpha.len(), grid.beta.len());
    if na < 5 || nb < 5 {
        return Err(Error::Config(format!("convexity needs at least a 5x5 grid, got {na}x{nb}")));
    }
    let ha = grid.alpha[1] - grid.alpha[0];
    let hb = grid.beta[1] - grid.beta[0];
    let mut psd = 0usize;
    let mut interior = 0usize;
    for i in 1..na - 1 {
        for j in 1..nb - 1 {
            interior += 1;
            let f = |di: isize, dj: isize| grid.at((i as isize + di) as usize, (j as isize + dj) as usize);
            let fxx = (f(1, 0) - 2.0 * f(0, 0) + f(-1, 0)) / (ha * ha);
            let fyy = (f(0, 1) - 2.0 * f(0, 0) + f(0, -1)) / (hb * hb);
            let fxy = (f(1, 1) - f(1, -1) - f(-1, 1) + f(-1, -1)) / (4.0 * ha * hb);
            let ok = [fxx, fyy, fxy].iter().all(|v| v.is_finite())
                && fxx >= 0.0
                && fyy >= 0.0
                && fxx * fyy - fxy * fxy >= 0.0;
            psd += usize::from(ok);
        }
    }
    let finite: Vec<f64> = grid.values.iter().copied().filter(|v| v.is_finite()).collect();
    let (loss_min, loss_max) = finite
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let below = grid.values.iter().filter(|&&v| v < grid.center_loss).count();
    let center_minimal = (below as f64) <= 0.05 * grid.values.len() as f64;
    let (ci, cj) = ((na - 1) / 2, (nb - 1) / 2);
    let (mut up, mut steps) = (0usize, 0usize);
    for (di, dj) in [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)] {
        let (mut i, mut j) = (ci as isize, cj as isize);
        loop {
            let (ni, nj) = (i + di, j + dj);
            if ni < 0 || nj < 0 || ni >= na as isize || nj >= nb as isize {
                break;
            }
            let prev = grid.at(i as usize, j as usize);
            let next = grid.at(ni as usize, nj as usize);
            up += usize::from(next >= prev);
            steps += 1;
            i = ni;
            j = nj;
        }
    }
    Ok(ConvexityReport {
        resolution: na,
        psd_fraction: psd as f64 / interior as f64,
        loss_min,
        loss_max,
        center_loss: grid.center_loss,
        center_minimal,
        ray_monotonicity: up as f64 / steps.max(1) as f64,
        overflow_cells: grid.overflow_cells(),
    })
}

/// `tag,resolution,psd_fraction,loss_min,loss_max,center_loss,center_minimal,ray_monotonicity,overflow_cells`.
pub fn write_reports(w: impl Write, reports: &[(String, ConvexityReport)]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "tag",
        "resolution",
        "psd_fraction",
        "loss_min",
        "loss_max",
        "center_loss",
        "center_minimal",
        "ray_monotonicity",
        "overflow_cells",
    ])
    .map_err(csv_err)?;
    for (tag, r) in reports {
        out.write_record([
            tag.clone(),
            r.resolution.to_string(),
            format!("{:e}", r.psd_fraction),
            format!("{:e}", r.loss_min),
            format!("{:e}", r.loss_max),
            format!("{:e}", r.center_loss),
            r.center_minimal.to_string(),
            format!("{:e}", r.ray_monotonicity),
            r.overflow_cells.to_string(),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}
