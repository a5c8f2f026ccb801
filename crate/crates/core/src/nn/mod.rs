//! Dense-network machinery: matrices, the residual regressor, Adam and a
//! finite-difference gradient checker. Everything runs in `f64`.

pub mod adam;
pub mod gradcheck;
pub mod matrix;
pub mod network;

pub use adam::AdamState;
pub use gradcheck::{fd_gradcheck, GradCheckConfig, GradCheckReport};
pub use matrix::Matrix;
pub use network::{ForwardCache, Gradients, Mode, NetConfig, Network};
