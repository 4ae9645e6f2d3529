//! Learnable wavelet filter banks for 1D convolutional networks.
//!
//! The crate provides a small deterministic numeric engine ([`ops`]), closed
//! form wavelet families ([`wavelets`]), the continuous wavelet convolution
//! layer ([`cwconv`]), the diagnosis network with its training loop
//! ([`network`], [`train`]), synthetic fault data ([`data`]) and the tooling
//! around them (checkpoints, gradient checks, PCA, multi-run comparison).

pub mod error;
pub mod tensor;
pub mod ops;
pub mod wavelets;
pub mod cwconv;
pub mod network;
pub mod gradcheck;
pub mod data;
pub mod train;
pub mod checkpoint;
pub mod pca;
pub mod compare;
mod binio;
mod kernels;

pub use error::{Error, Result};
pub use tensor::{Matrix, Shape, SignalBatch};
pub use wavelets::WaveletFamily;
pub use cwconv::CWConvLayer;
pub use network::{FirstLayerKind, Gradients, ModelConfig, Network};
pub use data::{Dataset, SyntheticSpec};
pub use train::{evaluate, train, Evaluation, Optimizer, TrainOptions};
