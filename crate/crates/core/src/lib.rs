//! Streaming decoder-only speech recognition driven by a monotonic chunkwise
//! read/write policy.
//!
//! The crate is `no_std` (with `alloc`) when built without the default `std`
//! feature. It contains the whole algorithmic stack: reverse-mode numerics,
//! the chunked encoder and adaptor, the policy network, the decoder-only
//! language model, the training objectives, the streaming inference engine and
//! a synthetic corpus generator with exact boundaries. File formats and the
//! command-line harness live in the companion `mocha-asr` crate.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod config;
pub mod encoder;
pub mod error;
pub mod layers;
pub mod lm;
pub mod losses;
pub mod metrics;
pub mod mocha;
pub mod model;
pub mod numerics;
pub mod stream;
pub mod synth;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use model::Model;
