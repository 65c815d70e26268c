//! Shared fixtures for the benchmarks.

use guicode_core::dataset::{synth_examples, Example};
use guicode_core::model::{Model, ModelConfig};
use guicode_core::raster::RenderTheme;
use guicode_core::synth::SynthParams;
use guicode_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .expect("shape matches data")
}

/// Desk-preset examples rendered at 64×64.
pub fn desk_examples(count: usize) -> Vec<Example> {
    synth_examples(&SynthParams::desk(42), count, 64, &RenderTheme::default())
        .expect("desk synthesis")
}

pub fn desk_model() -> Model<f32> {
    Model::new(ModelConfig::desk(), 1).expect("desk preset is valid")
}
