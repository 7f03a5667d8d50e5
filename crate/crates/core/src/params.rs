//! Trainable weights organised as named, filter-structured layers.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv1d,
    Dense,
}

impl LayerKind {
    pub fn code(self) -> u8 {
        match self {
            LayerKind::Conv1d => 0,
            LayerKind::Dense => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(LayerKind::Conv1d),
            1 => Some(LayerKind::Dense),
            _ => None,
        }
    }
}

/// One layer: conv kernels are `[out][in][width]`, dense weights `[out][in]`.
///
/// Each output channel (conv) or output row (dense) is one filter unit.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub name: String,
    pub kind: LayerKind,
    pub kernel: Tensor,
    pub bias: Tensor,
}

impl LayerWeights {
    pub fn new(name: impl Into<String>, kind: LayerKind, kernel: Tensor, bias: Tensor) -> Result<Self> {
        let name = name.into();
        let want_rank = match kind {
            LayerKind::Conv1d => 3,
            LayerKind::Dense => 2,
        };
        if kernel.rank() != want_rank {
            return shape_err(format!(
                "layer {name}: kernel rank {} for {kind:?}",
                kernel.rank()
            ));
        }
        if kind == LayerKind::Conv1d && kernel.dims()[2].is_multiple_of(2) {
            return shape_err(format!(
                "layer {name}: conv kernel width {} must be odd",
                kernel.dims()[2]
            ));
        }
        if bias.dims() != [kernel.dims()[0]] {
            return shape_err(format!(
                "layer {name}: bias dims {:?} vs {} outputs",
                bias.dims(),
                kernel.dims()[0]
            ));
        }
        Ok(Self {
            name,
            kind,
            kernel,
            bias,
        })
    }

    /// Uniform initialisation in `[-a, a]` with `a = sqrt(gain / fan_in)`.
    pub fn init(
        name: impl Into<String>,
        kind: LayerKind,
        kernel_dims: &[usize],
        gain: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let fan_in: usize = kernel_dims[1..].iter().product();
        let bound = (gain / fan_in as f64).sqrt() as f32;
        let n: usize = kernel_dims.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        let kernel = Tensor::new(kernel_dims.to_vec(), data)?;
        let bias = Tensor::zeros(&[kernel_dims[0]]);
        Self::new(name, kind, kernel, bias)
    }

    pub fn units(&self) -> usize {
        self.kernel.dims()[0]
    }

    pub fn unit_len(&self) -> usize {
        self.kernel.len() / self.units()
    }

    pub fn unit(&self, u: usize) -> &[f32] {
        let n = self.unit_len();
        &self.kernel.data()[u * n..(u + 1) * n]
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            name: self.name.clone(),
            kind: self.kind,
            kernel: Tensor::zeros(self.kernel.dims()),
            bias: Tensor::zeros(self.bias.dims()),
        }
    }
}

/// All encoder and decoder weights, in a fixed layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    layers: Vec<LayerWeights>,
}

impl ModelParameters {
    pub fn new(layers: Vec<LayerWeights>) -> Self {
        Self { layers }
    }

    pub fn layers(&self) -> &[LayerWeights] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerWeights] {
        &mut self.layers
    }

    pub fn layer(&self, i: usize) -> &LayerWeights {
        &self.layers[i]
    }

    pub fn by_name(&self, name: &str) -> Option<&LayerWeights> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(LayerWeights::zeros_like).collect(),
        }
    }

    pub fn num_values(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.kernel.len() + l.bias.len())
            .sum()
    }

    /// Kernel and bias tensors in layer order.
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.kernel, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.kernel, &mut l.bias])
    }

    pub fn norm(&self) -> f64 {
        self.tensors()
            .flat_map(|t| t.data())
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().all(Tensor::is_finite)
    }

    pub fn check_compatible(&self, other: &ModelParameters) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return shape_err(format!(
                "{} layers vs {}",
                self.layers.len(),
                other.layers.len()
            ));
        }
        for (a, b) in self.layers.iter().zip(&other.layers) {
            if !a.kernel.same_dims(&b.kernel) || !a.bias.same_dims(&b.bias) {
                return Err(Error::Shape(format!(
                    "layer {} dims {:?} vs {:?}",
                    a.name,
                    a.kernel.dims(),
                    b.kernel.dims()
                )));
            }
        }
        Ok(())
    }

    /// Flat copy of every value in layer order (kernel then bias).
    pub fn flatten(&self) -> Vec<f32> {
        self.tensors().flat_map(|t| t.data().iter().copied()).collect()
    }

    /// Inverse of [`ModelParameters::flatten`].
    pub fn assign_flat(&mut self, values: &[f32]) -> Result<()> {
        if values.len() != self.num_values() {
            return shape_err(format!(
                "{} flat values for {} parameters",
                values.len(),
                self.num_values()
            ));
        }
        let mut at = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&values[at..at + n]);
            at += n;
        }
        Ok(())
    }
}
