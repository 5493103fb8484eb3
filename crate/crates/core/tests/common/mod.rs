#![allow(dead_code)]

use mocha_asr_core::config::RunConfig;
use mocha_asr_core::encoder::FeatureSequence;
use mocha_asr_core::numerics::Tensor;
use mocha_asr_core::synth::{generate_split, SynthUtterance};
use mocha_asr_core::Model;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn tiny_model(seed: u64) -> Model<f64> {
    Model::new(RunConfig::tiny(), seed).unwrap()
}

pub fn random_frames(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Tensor<f64> {
    Tensor::matrix(n, d, (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn features(frames: Tensor<f64>) -> FeatureSequence {
    FeatureSequence {
        frames,
        frame_ms: 40.0,
        id: "t".into(),
    }
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn tiny_corpus(count: usize) -> Vec<SynthUtterance> {
    generate_split(&RunConfig::tiny().synth, "train", count).unwrap().utterances
}

/// Sets every parameter to zero.
pub fn zero_all(model: &mut Model<f64>) {
    let ids: Vec<_> = model.store.ids().collect();
    for id in ids {
        model.store.tensor_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
}
