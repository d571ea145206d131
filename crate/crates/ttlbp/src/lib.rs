//! Spiking-network training with temporally-truncated local backpropagation
//! through time.
//!
//! The crate simulates leaky integrate-and-fire networks over discrete time,
//! trains them with truncated-window backward passes confined to local
//! blocks (each block supervised by its own spiking classifier), and models
//! the memory and arithmetic cost of a `(k, n)` training configuration
//! analytically. A brute-force gradient oracle for toy networks backs the
//! test suite.
//!
//! Modules:
//! - [`neuron`]: LIF dynamics and the rectangular surrogate gradient.
//! - [`topology`]: architectures, shape inference, block plans, weights.
//! - [`engine`]: forward/backward over truncation intervals, SGD, oracle.
//! - [`costmodel`]: analytical memory / access / operation estimates.
//! - [`encodings`]: direct encoding, event-to-frame conversion, datasets.

pub mod costmodel;
pub mod encodings;
pub mod engine;
pub mod error;
pub mod layers;
pub mod neuron;
pub mod parallel;
pub mod rng;
pub mod tensor;
pub mod topology;

pub use error::{Error, Result};
pub use tensor::Tensor;
