//! Event-camera streams as binary 3rd-order tensors, and spatiotemporal
//! representation learning with an Elastic-Net-regularized fully-connected
//! 3rd-order tensor network (ENTN).
//!
//! The pipeline is: [`event`] parses and bins streams, [`solver`] learns the
//! latent factors, [`eval`] turns factors into per-event features and scores
//! them with a linear SVM, [`denoise`] filters events by reconstruction
//! value, and [`synth`] generates labeled test scenes.

pub mod denoise;
pub mod error;
pub mod eval;
pub mod event;
pub mod io;
pub mod seed;
pub mod solver;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use event::{
    bin_to_tensor, parse_events, tensor_density, Event, EventFormat, EventStream, EventTensor,
    Geometry,
};
pub use solver::{solve, SolverConfig, SolverState};
pub use tensor::{f3tn_contract, FactorTriple, Mode, Tensor3};
