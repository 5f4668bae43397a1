//! Numeric foundation: tensors, forward kernels, a reverse-mode tape, Adam,
//! and finite-difference gradient checking.

pub mod gradcheck;
pub mod kernels;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use optim::{Adam, AdamConfig};
pub use tape::{Tape, Var};
pub use tensor::{Scalar, Tensor};
