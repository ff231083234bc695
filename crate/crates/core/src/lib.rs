pub mod autodiff;
pub mod data;
pub mod error;
pub mod f16;
pub mod graph;
mod kernels;
pub mod label;
pub mod ops;
pub mod optim;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{build_convnet, LayerSpec, Mode, ModelGraph};
pub use label::Behavior;
pub use tensor::{DType, Tensor};
pub use train::{evaluate, train, EvalResult, TrainConfig, TrainReport};
