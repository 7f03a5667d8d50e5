use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One-hot module identifier fed to both halves of the conditional model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConditionLabel {
    module_id: usize,
    module_count: usize,
}

impl ConditionLabel {
    pub fn new(module_id: usize, module_count: usize) -> Result<Self> {
        if module_id >= module_count {
            return Err(Error::Data(format!(
                "module id {module_id} outside the {module_count} configured modules"
            )));
        }
        Ok(Self {
            module_id,
            module_count,
        })
    }

    pub fn module_id(&self) -> usize {
        self.module_id
    }

    pub fn one_hot(&self) -> Vec<f32> {
        let mut v = vec![0.0; self.module_count];
        v[self.module_id] = 1.0;
        v
    }
}

/// `[batch][module_count]` one-hot rows.
pub fn condition_tensor(module_ids: &[usize], module_count: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(module_ids.len() * module_count);
    for &m in module_ids {
        data.extend(ConditionLabel::new(m, module_count)?.one_hot());
    }
    Tensor::new(vec![module_ids.len(), module_count], data)
}

/// Approximate posterior for a batch. `sigma = exp(logvar / 2)` and
/// `z = mu + sigma * epsilon`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDistribution {
    pub mu: Tensor,
    pub logvar: Tensor,
    pub epsilon: Tensor,
    pub z: Tensor,
}

impl LatentDistribution {
    /// A distribution with `epsilon = 0`, so `z == mu`.
    pub fn at_mean(mu: Tensor, logvar: Tensor) -> Result<Self> {
        if !mu.same_dims(&logvar) {
            return Err(Error::Shape(format!(
                "mu {:?} vs logvar {:?}",
                mu.dims(),
                logvar.dims()
            )));
        }
        let epsilon = Tensor::zeros(mu.dims());
        let z = mu.clone();
        Ok(Self {
            mu,
            logvar,
            epsilon,
            z,
        })
    }

    pub fn sigma(&self) -> Tensor {
        self.logvar.map(|l| (0.5 * l).exp())
    }

    pub fn batch(&self) -> usize {
        self.mu.dims()[0]
    }
}

/// Latent noise used when sampling `z`.
#[derive(Debug, Clone, PartialEq)]
pub enum LatentNoise {
    /// `epsilon = 0`, i.e. decode the posterior mean.
    Zero,
    /// Standard-normal draws from a seeded generator.
    Seeded(u64),
    Fixed(Tensor),
}

impl LatentNoise {
    pub fn materialize(&self, dims: &[usize]) -> Result<Tensor> {
        match self {
            LatentNoise::Zero => Ok(Tensor::zeros(dims)),
            LatentNoise::Seeded(seed) => Ok(standard_normal(dims, *seed)),
            LatentNoise::Fixed(t) => {
                if t.dims() != dims {
                    return Err(Error::Shape(format!(
                        "fixed noise {:?} for latent {:?}",
                        t.dims(),
                        dims
                    )));
                }
                Ok(t.clone())
            }
        }
    }
}

pub fn standard_normal(dims: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = dims.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    Tensor::new(dims.to_vec(), data).expect("dims match data")
}

/// Draws `epsilon` and sets `z = mu + sigma * epsilon`, using the same `f32`
/// operations as the differentiable path.
pub fn reparameterize(dist: &LatentDistribution, noise: &LatentNoise) -> Result<LatentDistribution> {
    let epsilon = noise.materialize(dist.mu.dims())?;
    let z: Vec<f32> = dist
        .mu
        .data()
        .iter()
        .zip(dist.logvar.data())
        .zip(epsilon.data())
        .map(|((&m, &l), &e)| m + (l * 0.5).exp() * e)
        .collect();
    Ok(LatentDistribution {
        mu: dist.mu.clone(),
        logvar: dist.logvar.clone(),
        z: Tensor::new(dist.mu.dims().to_vec(), z)?,
        epsilon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(mu: f32, sigma: f32, n: usize) -> LatentDistribution {
        let logvar = 2.0 * sigma.ln();
        LatentDistribution::at_mean(Tensor::filled(&[n, 1], mu), Tensor::filled(&[n, 1], logvar)).unwrap()
    }

    #[test]
    fn zero_noise_returns_mean() {
        let d = dist(0.7, 3.0, 4);
        let r = reparameterize(&d, &LatentNoise::Zero).unwrap();
        assert_eq!(r.z, d.mu);
    }

    #[test]
    fn vanishing_sigma_returns_mean() {
        let mut d = dist(-1.25, 1.0, 8);
        d.logvar = Tensor::filled(&[8, 1], f32::NEG_INFINITY);
        let r = reparameterize(&d, &LatentNoise::Seeded(3)).unwrap();
        assert_eq!(r.z, d.mu);
    }

    #[test]
    fn sample_moments() {
        let d = dist(1.0, 2.0, 10_000);
        let r = reparameterize(&d, &LatentNoise::Seeded(11)).unwrap();
        let n = r.z.len() as f64;
        let mean = r.z.data().iter().map(|&v| f64::from(v)).sum::<f64>() / n;
        let var = r.z.data().iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((mean - 1.0).abs() < 0.07, "mean {mean}");
        assert!((var.sqrt() - 2.0).abs() < 0.05, "sd {}", var.sqrt());
        // z == mu + sigma * epsilon exactly
        let sigma = r.sigma();
        for i in 0..r.z.len() {
            assert_eq!(r.z.data()[i], r.mu.data()[i] + sigma.data()[i] * r.epsilon.data()[i]);
        }
    }

    #[test]
    fn one_hot_has_single_one() {
        let c = ConditionLabel::new(4, 15).unwrap();
        let v = c.one_hot();
        assert_eq!(v.iter().filter(|&&x| x == 1.0).count(), 1);
        assert_eq!(v[4], 1.0);
        assert!(ConditionLabel::new(15, 15).is_err());
    }
}
