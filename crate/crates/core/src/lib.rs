//! Training laboratory for 2-D Wasserstein GANs.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! at the crate root fix the scalar to `f64`, which is what training uses.

pub mod autodiff;
pub mod cli;
pub mod data;
pub mod emd;
pub mod error;
pub mod nets;
pub mod penalty;
pub mod scalar;
pub mod tensor;
pub mod trainer;
pub mod viz;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = tensor::Tensor<f64>;
pub type Tape = autodiff::Tape<f64>;
pub type Batch2D = data::Batch2D<f64>;
pub type MlpParams = nets::MlpParams<f64>;
pub type RmsProp = nets::RmsProp<f64>;
pub type CostMatrix = emd::CostMatrix<f64>;
pub type Assignment = emd::Assignment<f64>;
pub type Trainer = trainer::Trainer<f64>;
pub type LevelSetGrid = viz::LevelSetGrid<f64>;
pub type FigureOverlay = viz::FigureOverlay<f64>;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tape32 = autodiff::Tape<f32>;
pub type Batch2D32 = data::Batch2D<f32>;
pub type MlpParams32 = nets::MlpParams<f32>;
