//! Conv1d encoder/decoder with optional one-hot conditioning.
//!
//! Encoder: conv blocks (stride 2 in the leading `downsample_blocks`) with
//! ReLU, flatten, dense + ReLU, concat condition, then two dense heads for
//! the mean and log-variance. Decoder: concat `z` with the condition, two
//! dense + ReLU layers, reshape to the bottleneck, conv blocks with
//! nearest-neighbour upsampling in the trailing blocks; the final conv has
//! no activation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::kernels::Padding;
use crate::model::latent::{condition_tensor, LatentDistribution, LatentNoise};
use crate::model::loss::LossBreakdown;
use crate::model::spec::{ModelMode, ModelSpec};
use crate::params::{LayerKind, LayerWeights, ModelParameters};
use crate::tensor::Tensor;

const RELU_GAIN: f64 = 6.0;
const LINEAR_GAIN: f64 = 3.0;

/// Fixed layer indices for a given spec.
#[derive(Debug, Clone, PartialEq)]
struct Layout {
    encoder_convs: Vec<usize>,
    encoder_dense: usize,
    mu_head: usize,
    logvar_head: usize,
    decoder_dense: [usize; 2],
    decoder_convs: Vec<usize>,
}

impl Layout {
    fn new(spec: &ModelSpec) -> Self {
        let e = spec.encoder_blocks;
        let encoder_convs = (0..e).collect();
        let encoder_dense = e;
        let mu_head = e + 1;
        let logvar_head = e + 2;
        let decoder_dense = [e + 3, e + 4];
        let decoder_convs = (e + 5..e + 5 + spec.decoder_blocks).collect();
        Self {
            encoder_convs,
            encoder_dense,
            mu_head,
            logvar_head,
            decoder_dense,
            decoder_convs,
        }
    }
}

/// Graph handles produced by [`Model::loss_graph`].
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub reconstruction: Var,
    pub kld: Var,
    pub total: Var,
    pub mu: Var,
    pub logvar: Var,
    pub output: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    layout: Layout,
}

impl Model {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let layout = Layout::new(&spec);
        Ok(Self { spec, layout })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn mode(&self) -> ModelMode {
        self.spec.mode
    }

    /// Seeded fan-in-scaled uniform initialisation; biases start at zero.
    pub fn init_params(&self, seed: u64) -> ModelParameters {
        let s = &self.spec;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = s.kernel_width;
        let mut layers = Vec::new();
        let mut c_in = s.channels;
        for (i, &c_out) in s.encoder_kernels().iter().enumerate() {
            layers.push(conv(&format!("encoder.conv{i}"), c_out, c_in, k, RELU_GAIN, &mut rng));
            c_in = c_out;
        }
        let cond = s.condition_width();
        layers.push(dense("encoder.dense", s.dense_units, s.flat_len(), RELU_GAIN, &mut rng));
        layers.push(dense("encoder.mu", s.latent_dim, s.dense_units + cond, LINEAR_GAIN, &mut rng));
        layers.push(dense("encoder.logvar", s.latent_dim, s.dense_units + cond, LINEAR_GAIN, &mut rng));
        layers.push(dense("decoder.dense0", s.dense_units, s.latent_dim + cond, RELU_GAIN, &mut rng));
        layers.push(dense("decoder.dense1", s.flat_len(), s.dense_units, RELU_GAIN, &mut rng));
        let mut c_in = s.bottleneck_channels();
        let dec = s.decoder_kernels();
        for (i, &c_out) in dec.iter().enumerate() {
            let gain = if i + 1 == dec.len() { LINEAR_GAIN } else { RELU_GAIN };
            layers.push(conv(&format!("decoder.conv{i}"), c_out, c_in, k, gain, &mut rng));
            c_in = c_out;
        }
        ModelParameters::new(layers)
    }

    /// Checks that `params` has exactly the layer shapes this spec needs.
    pub fn check_params(&self, params: &ModelParameters) -> Result<()> {
        self.init_params(0).check_compatible(params)
    }

    fn check_input(&self, x: &Tensor) -> Result<usize> {
        let s = &self.spec;
        if x.rank() != 3 || x.dims()[1] != s.time_steps || x.dims()[2] != s.channels {
            return Err(Error::Shape(format!(
                "input {:?} does not match [batch, {}, {}]",
                x.dims(),
                s.time_steps,
                s.channels
            )));
        }
        Ok(x.dims()[0])
    }

    /// One-hot condition tensor, or `None` for the unconditioned model.
    pub fn condition(&self, modules: Option<&[usize]>, batch: usize) -> Result<Option<Tensor>> {
        match (self.spec.mode, modules) {
            (ModelMode::Vae, _) => Ok(None),
            (ModelMode::Cvae, None) => Err(Error::Data("conditional model needs module ids".into())),
            (ModelMode::Cvae, Some(ids)) => {
                if ids.len() != batch {
                    return Err(Error::Shape(format!("{} module ids for batch {batch}", ids.len())));
                }
                condition_tensor(ids, self.spec.module_count).map(Some)
            }
        }
    }

    pub fn encode_graph(&self, tape: &mut Tape, x: Var, cond: Option<Var>) -> Result<(Var, Var)> {
        let s = &self.spec;
        let batch = tape.value(x).dims()[0];
        let mut h = x;
        for (i, &layer) in self.layout.encoder_convs.iter().enumerate() {
            let (w, b) = tape.layer(layer, LayerKind::Conv1d)?;
            h = tape.conv1d(h, w, b, s.stride(i), Padding::Same)?;
            h = tape.relu(h)?;
        }
        h = tape.reshape(h, &[batch, s.flat_len()])?;
        let (w, b) = tape.layer(self.layout.encoder_dense, LayerKind::Dense)?;
        h = tape.dense(h, w, b)?;
        h = tape.relu(h)?;
        if let Some(c) = cond {
            h = tape.concat(h, c)?;
        }
        let (w, b) = tape.layer(self.layout.mu_head, LayerKind::Dense)?;
        let mu = tape.dense(h, w, b)?;
        let (w, b) = tape.layer(self.layout.logvar_head, LayerKind::Dense)?;
        let logvar = tape.dense(h, w, b)?;
        Ok((mu, logvar))
    }

    pub fn decode_graph(&self, tape: &mut Tape, z: Var, cond: Option<Var>) -> Result<Var> {
        let s = &self.spec;
        let batch = tape.value(z).dims()[0];
        let mut h = z;
        if let Some(c) = cond {
            h = tape.concat(h, c)?;
        }
        for &layer in &self.layout.decoder_dense {
            let (w, b) = tape.layer(layer, LayerKind::Dense)?;
            h = tape.dense(h, w, b)?;
            h = tape.relu(h)?;
        }
        h = tape.reshape(h, &[batch, s.bottleneck_len(), s.bottleneck_channels()])?;
        let last = self.layout.decoder_convs.len() - 1;
        for (i, &layer) in self.layout.decoder_convs.iter().enumerate() {
            if let Some(len) = s.decoder_target_len(i) {
                h = tape.resize_time(h, len)?;
            }
            let (w, b) = tape.layer(layer, LayerKind::Conv1d)?;
            h = tape.conv1d(h, w, b, 1, Padding::Same)?;
            if i != last {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }

    /// `z = mu + exp(logvar / 2) * epsilon` with `epsilon` held constant.
    pub fn reparameterize_graph(&self, tape: &mut Tape, mu: Var, logvar: Var, epsilon: Tensor) -> Result<Var> {
        let eps = tape.constant(epsilon)?;
        let half = tape.scale(logvar, 0.5)?;
        let sigma = tape.exp(half)?;
        let noise = tape.mul(sigma, eps)?;
        tape.add(mu, noise)
    }

    pub fn loss_graph(
        &self,
        tape: &mut Tape,
        x: Var,
        cond: Option<Var>,
        noise: &LatentNoise,
        eta: f64,
    ) -> Result<LossVars> {
        let (mu, logvar) = self.encode_graph(tape, x, cond)?;
        let epsilon = noise.materialize(tape.value(mu).dims())?;
        let z = self.reparameterize_graph(tape, mu, logvar, epsilon)?;
        let output = self.decode_graph(tape, z, cond)?;
        let reconstruction = tape.mse(x, output)?;
        let kld = tape.gaussian_kld(mu, logvar)?;
        let weighted = tape.scale(kld, eta as f32)?;
        let total = tape.add(reconstruction, weighted)?;
        Ok(LossVars {
            reconstruction,
            kld,
            total,
            mu,
            logvar,
            output,
        })
    }

    fn prepare<'p>(
        &self,
        params: &'p ModelParameters,
        x: &Tensor,
        modules: Option<&[usize]>,
    ) -> Result<(Tape<'p>, Var, Option<Var>)> {
        let batch = self.check_input(x)?;
        let cond = self.condition(modules, batch)?;
        let mut tape = Tape::with_params(params);
        let xv = tape.constant(x.clone())?;
        let cv = cond.map(|c| tape.constant(c)).transpose()?;
        Ok((tape, xv, cv))
    }

    /// Posterior mean and log-variance for a batch (`epsilon = 0`, `z = mu`).
    pub fn encode(&self, params: &ModelParameters, x: &Tensor, modules: Option<&[usize]>) -> Result<LatentDistribution> {
        let (mut tape, xv, cv) = self.prepare(params, x, modules)?;
        let (mu, logvar) = self.encode_graph(&mut tape, xv, cv)?;
        LatentDistribution::at_mean(tape.value(mu).clone(), tape.value(logvar).clone())
    }

    pub fn decode(&self, params: &ModelParameters, z: &Tensor, modules: Option<&[usize]>) -> Result<Tensor> {
        if z.rank() != 2 || z.dims()[1] != self.spec.latent_dim {
            return Err(Error::Shape(format!(
                "latent {:?} does not match [batch, {}]",
                z.dims(),
                self.spec.latent_dim
            )));
        }
        let cond = self.condition(modules, z.dims()[0])?;
        let mut tape = Tape::with_params(params);
        let zv = tape.constant(z.clone())?;
        let cv = cond.map(|c| tape.constant(c)).transpose()?;
        let out = self.decode_graph(&mut tape, zv, cv)?;
        Ok(tape.value(out).clone())
    }

    /// Encode, sample `z` with the given noise, decode.
    pub fn reconstruct(
        &self,
        params: &ModelParameters,
        x: &Tensor,
        modules: Option<&[usize]>,
        noise: &LatentNoise,
    ) -> Result<Tensor> {
        let (mut tape, xv, cv) = self.prepare(params, x, modules)?;
        let (mu, logvar) = self.encode_graph(&mut tape, xv, cv)?;
        let epsilon = noise.materialize(tape.value(mu).dims())?;
        let z = self.reparameterize_graph(&mut tape, mu, logvar, epsilon)?;
        let out = self.decode_graph(&mut tape, z, cv)?;
        Ok(tape.value(out).clone())
    }

    pub fn loss(
        &self,
        params: &ModelParameters,
        x: &Tensor,
        modules: Option<&[usize]>,
        eta: f64,
        noise: &LatentNoise,
    ) -> Result<LossBreakdown> {
        let (mut tape, xv, cv) = self.prepare(params, x, modules)?;
        let vars = self.loss_graph(&mut tape, xv, cv, noise, eta)?;
        Ok(breakdown(&tape, &vars, eta))
    }

    pub fn loss_and_gradients(
        &self,
        params: &ModelParameters,
        x: &Tensor,
        modules: Option<&[usize]>,
        eta: f64,
        noise: &LatentNoise,
    ) -> Result<(LossBreakdown, ModelParameters)> {
        let (mut tape, xv, cv) = self.prepare(params, x, modules)?;
        let vars = self.loss_graph(&mut tape, xv, cv, noise, eta)?;
        let loss = breakdown(&tape, &vars, eta);
        let grads = tape.backward(vars.total)?;
        let grads = grads
            .into_params()
            .ok_or_else(|| Error::Shape("no parameter gradients".into()))?;
        Ok((loss, grads))
    }
}

fn breakdown(tape: &Tape, vars: &LossVars, eta: f64) -> LossBreakdown {
    let r = f64::from(tape.value(vars.reconstruction).data()[0]);
    let k = f64::from(tape.value(vars.kld).data()[0]);
    LossBreakdown::new(r, k, eta)
}

fn conv(name: &str, out: usize, inp: usize, width: usize, gain: f64, rng: &mut ChaCha8Rng) -> LayerWeights {
    LayerWeights::init(name, LayerKind::Conv1d, &[out, inp, width], gain, rng).expect("valid conv dims")
}

fn dense(name: &str, out: usize, inp: usize, gain: f64, rng: &mut ChaCha8Rng) -> LayerWeights {
    LayerWeights::init(name, LayerKind::Dense, &[out, inp], gain, rng).expect("valid dense dims")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adam::{AdamConfig, AdamState};
    use crate::model::loss::{kld_gaussian, mse};

    fn toy(mode: ModelMode) -> ModelSpec {
        ModelSpec {
            kernels_per_block: 4,
            dense_units: 16,
            latent_dim: 4,
            module_count: 3,
            time_steps: 32,
            channels: 3,
            ..ModelSpec::desk(mode)
        }
    }

    fn ramp(batch: usize, spec: &ModelSpec) -> Tensor {
        let n = batch * spec.time_steps * spec.channels;
        let data = (0..n).map(|i| ((i as f32) * 0.37).sin()).collect();
        Tensor::new(vec![batch, spec.time_steps, spec.channels], data).unwrap()
    }

    #[test]
    fn shape_contracts_hold() {
        for mode in [ModelMode::Vae, ModelMode::Cvae] {
            let spec = toy(mode);
            let model = Model::new(spec.clone()).unwrap();
            let p = model.init_params(1);
            let x = ramp(3, &spec);
            let ids = [0, 1, 2];
            let m = (mode == ModelMode::Cvae).then_some(&ids[..]);
            let dist = model.encode(&p, &x, m).unwrap();
            assert_eq!(dist.mu.dims(), &[3, 4]);
            assert_eq!(dist.logvar.dims(), &[3, 4]);
            let out = model.decode(&p, &dist.z, m).unwrap();
            assert_eq!(out.dims(), x.dims());
            assert!(out.is_finite());
        }
    }

    #[test]
    fn desk_round_trip_is_finite() {
        let spec = ModelSpec::desk(ModelMode::Cvae);
        let model = Model::new(spec.clone()).unwrap();
        let p = model.init_params(3);
        let x = ramp(2, &spec);
        let out = model.reconstruct(&p, &x, Some(&[0, 14]), &LatentNoise::Zero).unwrap();
        assert_eq!(out.dims(), &[2, 512, 14]);
        assert!(out.is_finite());
    }

    #[test]
    fn identical_rows_give_identical_mu() {
        let spec = toy(ModelMode::Vae);
        let model = Model::new(spec.clone()).unwrap();
        let p = model.init_params(5);
        let one = ramp(1, &spec);
        let x = Tensor::stack_rows(&[&one, &one]).unwrap();
        let dist = model.encode(&p, &x, None).unwrap();
        assert_eq!(dist.mu.row(0), dist.mu.row(1));
    }

    #[test]
    fn cvae_requires_module_ids() {
        let spec = toy(ModelMode::Cvae);
        let model = Model::new(spec.clone()).unwrap();
        let p = model.init_params(5);
        assert!(matches!(model.encode(&p, &ramp(1, &spec), None), Err(Error::Data(_))));
        assert!(matches!(model.encode(&p, &ramp(1, &spec), Some(&[3])), Err(Error::Data(_))));
    }

    #[test]
    fn loss_recomposes_from_parts() {
        let spec = toy(ModelMode::Cvae);
        let model = Model::new(spec.clone()).unwrap();
        let p = model.init_params(2);
        let x = ramp(2, &spec);
        let ids = [1, 2];
        let noise = LatentNoise::Seeded(11);
        let loss = model.loss(&p, &x, Some(&ids), 1.0, &noise).unwrap();
        let dist = model.encode(&p, &x, Some(&ids)).unwrap();
        let out = model.reconstruct(&p, &x, Some(&ids), &noise).unwrap();
        let recon = mse(&x, &out).unwrap();
        let kld = kld_gaussian(&dist).unwrap();
        assert!((loss.reconstruction - recon).abs() < 1e-6);
        assert!((loss.kld - kld).abs() <= 1e-6 * kld.max(1.0));
        assert!((loss.total - (recon + kld)).abs() <= 1e-6 * (recon + kld).max(1.0));

        let zero = model.loss(&p, &x, Some(&ids), 0.0, &noise).unwrap();
        assert_eq!(zero.total, zero.reconstruction);
    }

    #[test]
    fn every_parameter_receives_gradient() {
        let spec = toy(ModelMode::Cvae);
        let model = Model::new(spec.clone()).unwrap();
        let p = model.init_params(8);
        let x = ramp(4, &spec);
        let (_, g) = model
            .loss_and_gradients(&p, &x, Some(&[0, 1, 2, 0]), 1.0, &LatentNoise::Seeded(1))
            .unwrap();
        for layer in g.layers() {
            assert!(layer.kernel.norm() > 0.0, "{} kernel has no gradient", layer.name);
        }
    }

    #[test]
    fn overfits_constant_waveforms() {
        let spec = toy(ModelMode::Vae);
        let model = Model::new(spec.clone()).unwrap();
        let mut p = model.init_params(4);
        let x = Tensor::filled(&[2, spec.time_steps, spec.channels], 0.5);
        let mut adam = AdamState::new(&p, AdamConfig::with_learning_rate(1e-2));
        for step in 0..500 {
            let (_, g) = model
                .loss_and_gradients(&p, &x, None, 1.0, &LatentNoise::Seeded(step))
                .unwrap();
            adam.step(&mut p, &g).unwrap();
        }
        let out = model.reconstruct(&p, &x, None, &LatentNoise::Zero).unwrap();
        let err = mse(&x, &out).unwrap();
        assert!(err < 1e-3, "reconstruction mse {err}");
    }

    #[test]
    fn conditioning_changes_mu_after_training() {
        let spec = toy(ModelMode::Cvae);
        let model = Model::new(spec.clone()).unwrap();
        let mut p = model.init_params(6);
        // Module 1 carries a fixed offset so the condition is informative.
        let base = ramp(1, &spec);
        let shifted = base.map(|v| v + 1.0);
        let x = Tensor::stack_rows(&[&base, &shifted, &base, &shifted]).unwrap();
        let ids = [0, 1, 0, 1];
        let mut adam = AdamState::new(&p, AdamConfig::with_learning_rate(1e-2));
        for step in 0..200 {
            let (_, g) = model
                .loss_and_gradients(&p, &x, Some(&ids), 1.0, &LatentNoise::Seeded(step))
                .unwrap();
            adam.step(&mut p, &g).unwrap();
        }
        let same = Tensor::stack_rows(&[&base, &base]).unwrap();
        let dist = model.encode(&p, &same, Some(&[0, 1])).unwrap();
        let diff: f32 = dist
            .mu
            .row(0)
            .iter()
            .zip(dist.mu.row(1))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f32>()
            .sqrt();
        assert!(diff > 1e-4, "mu difference {diff}");
    }
}
