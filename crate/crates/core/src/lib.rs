//! Decomposition of trained single-task networks into aligned components
//! and their adaptive fusion into one multi-task model.
//!
//! The crate is `no_std` with `alloc`. File formats, CSV ingestion and the
//! command line live in the `emm` crate.

#![no_std]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod akf;
pub mod data;
pub mod deconstruct;
pub mod emm;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod param;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use param::{Init, ParamAlloc, ParamId, Parameter, Parameterized};
pub use tensor::Tensor;
