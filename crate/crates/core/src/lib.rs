//! Spiking population autoencoder for multichannel EEG with per-task
//! associative-memory classifiers.

pub mod bam;
pub mod codec;
pub mod data;
pub mod error;
pub mod lif;
pub mod optim;
pub mod pipeline;
pub mod tensor;

pub use error::{Error, Result};
