//! NodeFormer: all-pair message passing over graphs with kernelized
//! Gumbel-Softmax attention, in `O(N)` time and memory per layer.

pub mod attention;
pub mod autodiff;
pub mod bench;
pub mod data;
pub mod error;
pub mod features;
pub mod gumbel;
pub mod losses;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod tensor;
pub mod trainer;
pub mod verify;

pub use autodiff::{Tape, Var};
pub use error::{Error, Result};
pub use tensor::Tensor;
