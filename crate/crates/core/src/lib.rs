//! Residual hourglass recurrent network for raw-waveform speech enhancement.

pub mod audio;
pub mod autodiff;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod training;

pub use model::{ModelConfig, ModelParams};
pub use tensor::{ParameterSet, Scalar, Tensor, TensorCollection, TensorError};
