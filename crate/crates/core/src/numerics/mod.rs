//! Dense tensors, reverse-mode differentiation, parameter storage and Adam.

pub mod adam;
pub mod gradcheck;
pub mod graph;
pub mod init;
pub mod params;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{check_gradients, GradCheck, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use init::{seeded_init, InitScheme};
pub use params::{Bound, ParamStore};
pub use rng::{derive_seed, rng, Rng};
pub use scalar::Scalar;
pub use tensor::Tensor;
