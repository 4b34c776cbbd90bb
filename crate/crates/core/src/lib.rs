//! Spiking-network training with dominant-eigencomponent gradient projection.
//!
//! Modules, bottom-up: [`linalg`] (SVD and symmetric eigen kernels), [`snn`]
//! (LIF network, BPTT), [`dep`] (gradient projection and SGD), [`attacks`]
//! (FGSM/PGD), [`hessian`] (spectral probes) and [`data`] (datasets, batching,
//! poisoned batches).

pub mod attacks;
pub mod data;
pub mod dep;
pub mod error;
pub mod hessian;
pub mod linalg;
pub mod snn;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
