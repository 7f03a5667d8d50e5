use crate::autodiff::kld_value;
use crate::error::{Error, Result};
use crate::model::latent::LatentDistribution;
use crate::tensor::Tensor;

/// Reconstruction and KL terms of the objective, `total = reconstruction + eta * kld`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub reconstruction: f64,
    pub kld: f64,
    pub eta: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(reconstruction: f64, kld: f64, eta: f64) -> Self {
        Self {
            reconstruction,
            kld,
            eta,
            total: reconstruction + eta * kld,
        }
    }

    /// Sample-weighted mean of per-batch losses.
    pub fn weighted_mean(parts: &[(LossBreakdown, usize)]) -> Option<Self> {
        let n: usize = parts.iter().map(|(_, w)| w).sum();
        if n == 0 {
            return None;
        }
        let eta = parts[0].0.eta;
        let r = parts.iter().map(|(l, w)| l.reconstruction * *w as f64).sum::<f64>() / n as f64;
        let k = parts.iter().map(|(l, w)| l.kld * *w as f64).sum::<f64>() / n as f64;
        Some(Self::new(r, k, eta))
    }

    pub fn is_finite(&self) -> bool {
        self.reconstruction.is_finite() && self.kld.is_finite() && self.total.is_finite()
    }
}

/// `(1/n) * sum((x - y)^2)` over every element.
pub fn mse(x: &Tensor, y: &Tensor) -> Result<f64> {
    if !x.same_dims(y) {
        return Err(Error::Shape(format!("mse: {:?} vs {:?}", x.dims(), y.dims())));
    }
    let s: f64 = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2))
        .sum();
    Ok(s / x.len() as f64)
}

/// Closed-form KL divergence to the standard-normal prior, averaged over the batch.
pub fn kld_gaussian(dist: &LatentDistribution) -> Result<f64> {
    if dist.logvar.data().iter().any(|&l| (0.5 * l).exp() <= 0.0) {
        return Err(Error::Data("kld needs sigma > 0".into()));
    }
    Ok(kld_value(&dist.mu, &dist.logvar).max(0.0))
}
