pub mod autodiff;
pub mod blocks;
pub mod data;
pub mod error;
pub mod freq;
pub mod metrics;
pub mod network;
pub mod optim;
pub mod tensor;
pub mod train;
pub mod verify;
pub mod windows;

pub use autodiff::{Gradients, Tape, Var};
pub use error::{MptError, Result};
pub use network::{MptConfig, ParameterStore};
pub use tensor::{DType, Element, Tensor};
