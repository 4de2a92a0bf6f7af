pub mod audio;
pub mod backbone;
pub mod decoder;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod objectives;
pub mod optim;
pub mod params;
pub mod real;
pub mod tensor;
pub mod types;

pub use error::{AvsError, Result};
pub use graph::{Gradients, Graph, Var};
pub use params::ParamStore;
pub use real::Real;
pub use tensor::Tensor;
