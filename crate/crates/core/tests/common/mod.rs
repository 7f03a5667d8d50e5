#![allow(dead_code)]

use modwatch::data::{generate, GeneratorConfig, SplitFractions};
use modwatch::eval::TrainedModel;
use modwatch::experiment::{prepare, spec_for, PreparedData};
use modwatch::model::{Model, ModelMode, ModelSpec};
use modwatch::training::{train, TrainConfig};

pub fn small_generator(seed: u64) -> GeneratorConfig {
    GeneratorConfig {
        module_count: 3,
        samples_per_module: 20,
        fault_count: 12,
        time_steps: 32,
        seed,
        ..GeneratorConfig::default()
    }
}

pub fn small_spec() -> ModelSpec {
    ModelSpec {
        kernels_per_block: 4,
        dense_units: 16,
        latent_dim: 4,
        ..ModelSpec::desk(ModelMode::Cvae)
    }
}

pub fn small_data(seed: u64) -> PreparedData {
    prepare(&generate(&small_generator(seed)).unwrap(), SplitFractions::default(), seed).unwrap()
}

/// A briefly trained conditional model on [`small_data`].
pub fn small_trained(seed: u64, epochs: usize) -> (PreparedData, TrainedModel) {
    let data = small_data(seed);
    let model = Model::new(spec_for(&small_spec(), ModelMode::Cvae, &data.train)).unwrap();
    let cfg = TrainConfig {
        max_epochs: epochs,
        seed,
        ..TrainConfig::desk()
    };
    let (params, _) = train(&model, &data.train, None, &cfg).unwrap();
    (data, TrainedModel::new(model, params).unwrap())
}
