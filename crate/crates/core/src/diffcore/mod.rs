//! Numeric substrate: dense tensors, flat parameter vectors, MLP
//! forward/backward, finite-difference Hessian-vector products and a
//! damped conjugate-gradient solver.

pub mod cg;
pub mod hvp;
pub mod net;
pub mod params;
pub mod tensor;
pub mod threads;

pub use cg::{cg_solve, CgConfig, CgSolution};
pub use hvp::HvpOperator;
pub use net::{Activation, LayerSpec, MlpSpec};
pub use params::ParamVector;
pub use tensor::Tensor;
