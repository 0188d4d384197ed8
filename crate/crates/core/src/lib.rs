//! Finite elements and physics-informed networks on a shared set of benchmark PDEs.
//!
//! The numerical kernels that do not touch a mesh (sparse solvers, networks,
//! jets, optimizers) are generic over [`Real`]; the aliases below fix them to
//! `f64`, which is what the benchmark uses.

pub mod bench;
pub mod error;
pub mod evolution;
pub mod fem;
pub mod mesh;
pub mod nn;
pub mod optim;
pub mod pinn;
pub mod problems;
pub mod sampling;
pub mod scalar;
pub mod sparse;

pub use error::{Error, Result};
pub use scalar::Real;

pub type SparseMatrix = sparse::CsrMatrix<f64>;
pub type IluPreconditioner = sparse::IluFactors<f64>;
pub type Network = nn::Mlp<f64>;
pub type Network32 = nn::Mlp<f32>;
pub type Jet2 = nn::Jet<f64>;
pub type Adam = optim::AdamState<f64>;
pub type Lbfgs = optim::LbfgsState<f64>;
