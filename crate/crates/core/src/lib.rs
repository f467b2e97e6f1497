//! Multi-span raw-waveform acoustic models: strided 1-D convolution front-ends,
//! an FBANK baseline, a ReLU DNN head, SGD training with NewBob+ scheduling,
//! checkpoints and learned-filter analysis.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! name the common instantiations.

pub mod analysis;
pub mod checkpoint;
pub mod conv;
pub mod dataio;
pub mod dataset;
pub mod error;
pub mod fbank;
pub mod init;
pub mod model;
pub mod multispan;
pub mod network;
pub mod scalar;
pub mod trainer;

pub use error::{Error, ErrorKind, Result};
pub use scalar::Scalar;

pub type SignalF32 = conv::Signal<f32>;
pub type SignalF64 = conv::Signal<f64>;
pub type KernelBankF32 = conv::KernelBank<f32>;
pub type KernelBankF64 = conv::KernelBank<f64>;
pub type StreamF32 = multispan::Stream<f32>;
pub type StreamF64 = multispan::Stream<f64>;
pub type DnnHeadF32 = network::DnnHead<f32>;
pub type DnnHeadF64 = network::DnnHead<f64>;
pub type AcousticModelF32 = model::AcousticModel<f32>;
pub type AcousticModelF64 = model::AcousticModel<f64>;
pub type CorpusF32 = dataio::Corpus<f32>;
pub type CorpusF64 = dataio::Corpus<f64>;
