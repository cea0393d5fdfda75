//! Generalized stochastic gradient descent with momentum: an optimizer with
//! coupled-trajectory instrumentation, closed-form stability and
//! optimization bounds, and an experiment harness.

pub mod dataset;
pub mod error;
pub mod export;
pub mod format;
pub mod harness;
pub mod losses;
pub mod optimizer;
pub mod suite;
pub mod synthetic;
pub mod theory;

pub use dataset::{Dataset, Example, NeighborSpec, SparseVector};
pub use error::{Error, Result, RunSide};
pub use losses::{LossKind, WeightVector};
pub use optimizer::{HyperParams, SampleStream, SgdmState, Trajectory, Variant};
