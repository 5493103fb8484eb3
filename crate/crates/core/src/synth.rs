//! Synthetic corpus with exact token boundaries.
//!
//! Each symbol owns a unit-norm prototype vector; a token emits a run of
//! noisy copies of its prototype. The end-of-sentence token emits a run of
//! noise-only "silence" frames so that its boundary is the last frame.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::config::{SynthConfig, BOS, EOS, FIRST_SYMBOL};
use crate::encoder::FeatureSequence;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthUtterance {
    /// `BOS, symbols…, EOS`.
    pub tokens: Vec<usize>,
    pub features: FeatureSequence,
    /// `b_2..b_L`: last frame (1-based) of each token after BOS.
    pub boundaries: Vec<usize>,
}

impl SynthUtterance {
    pub fn id(&self) -> &str {
        &self.features.id
    }

    pub fn n_frames(&self) -> usize {
        self.features.len()
    }

    /// Boundary path `t_1..t_L` with `t_1 = 0`.
    pub fn gold_path(&self) -> Vec<usize> {
        let mut p = Vec::with_capacity(self.boundaries.len() + 1);
        p.push(0);
        p.extend_from_slice(&self.boundaries);
        p
    }

    /// Symbols without BOS/EOS.
    pub fn symbols(&self) -> &[usize] {
        &self.tokens[1..self.tokens.len() - 1]
    }
}

/// A generated corpus split.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub prototypes: Tensor<f64>,
    pub utterances: Vec<SynthUtterance>,
}

/// Unit-norm prototypes, one row per symbol. While the vocabulary fits in the
/// feature dimension the prototypes are orthonormalized.
pub fn prototypes(cfg: &SynthConfig) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.feature_dim;
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(cfg.vocab_size);
    for k in 0..cfg.vocab_size {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        if k < d {
            for r in &rows {
                let dot: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(r).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let norm = Float::sqrt(v.iter().map(|x| x * x).sum::<f64>());
        v.iter_mut().for_each(|x| *x /= norm);
        rows.push(v);
    }
    Tensor::matrix(cfg.vocab_size, d, rows.concat()).expect("prototype shape")
}

fn utterance_seed(seed: u64, split: u64, index: u64) -> u64 {
    // splitmix64 over the triple
    let mut z = seed ^ split.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn generate_one(cfg: &SynthConfig, protos: &Tensor<f64>, id: String, seed: u64) -> SynthUtterance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = cfg.feature_dim;
    let count = rng.random_range(cfg.min_tokens..=cfg.max_tokens);
    let mut tokens = Vec::with_capacity(count + 2);
    tokens.push(BOS);
    let mut last = usize::MAX;
    for _ in 0..count {
        // Adjacent symbols differ so that runs stay distinguishable.
        let mut k = rng.random_range(0..cfg.vocab_size);
        while k == last {
            k = rng.random_range(0..cfg.vocab_size);
        }
        last = k;
        tokens.push(FIRST_SYMBOL + k);
    }
    tokens.push(EOS);
    let noise = Normal::new(0.0, cfg.noise_std).ok();
    let mut data = Vec::new();
    let mut boundaries = Vec::with_capacity(count + 1);
    let mut frames = 0;
    for &tok in &tokens[1..] {
        let n = rng.random_range(cfg.min_frames..=cfg.max_frames);
        for _ in 0..n {
            for c in 0..d {
                let base = if tok == EOS { 0.0 } else { protos.at(tok - FIRST_SYMBOL, c) };
                let eps = match &noise {
                    Some(dist) if cfg.noise_std > 0.0 => dist.sample(&mut rng),
                    _ => 0.0,
                };
                data.push(base + eps);
            }
        }
        frames += n;
        boundaries.push(frames);
    }
    SynthUtterance {
        tokens,
        features: FeatureSequence {
            frames: Tensor::matrix(frames, d, data).expect("frame shape"),
            frame_ms: cfg.frame_ms,
            id,
        },
        boundaries,
    }
}

fn check(cfg: &SynthConfig) -> Result<()> {
    if cfg.vocab_size < 2 || cfg.min_tokens == 0 || cfg.min_tokens > cfg.max_tokens || cfg.min_frames == 0 || cfg.min_frames > cfg.max_frames {
        return Err(Error::Config(format!("invalid synthetic corpus settings {cfg:?}")));
    }
    Ok(())
}

/// Generates `count` utterances of one split (`train` or `test`).
pub fn generate_split(cfg: &SynthConfig, split: &str, count: usize) -> Result<Corpus> {
    check(cfg)?;
    let protos = prototypes(cfg);
    let tag = match split {
        "train" => 1,
        "test" => 2,
        _ => 3 + split.bytes().fold(0u64, |a, b| a.wrapping_mul(31).wrapping_add(b as u64)),
    };
    let utterances = (0..count)
        .map(|i| generate_one(cfg, &protos, format!("{split}-{i:05}"), utterance_seed(cfg.seed, tag, i as u64)))
        .collect();
    Ok(Corpus {
        prototypes: protos,
        utterances,
    })
}

/// Training and test splits of the configured sizes.
pub fn generate_corpus(cfg: &SynthConfig) -> Result<(Corpus, Corpus)> {
    Ok((generate_split(cfg, "train", cfg.num_train)?, generate_split(cfg, "test", cfg.num_test)?))
}

/// Nearest-prototype label of every frame (`None` for silence) followed by
/// run-length collapse. This is the sanity floor for the task's difficulty.
pub fn nearest_prototype_decode(frames: &Tensor<f64>, protos: &Tensor<f64>) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    let mut prev: Option<usize> = None;
    for r in 0..frames.rows() {
        let row = frames.row(r);
        let mut best = (row.iter().map(|x| x * x).sum::<f64>(), None);
        for k in 0..protos.rows() {
            let dist: f64 = row.iter().zip(protos.row(k)).map(|(a, b)| (a - b) * (a - b)).sum();
            if dist < best.0 {
                best = (dist, Some(FIRST_SYMBOL + k));
            }
        }
        if best.1 != prev {
            if let Some(t) = best.1 {
                out.push(t);
            }
            prev = best.1;
        }
    }
    out
}
