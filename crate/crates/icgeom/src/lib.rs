//! Point-cloud classification of industrial components.
//!
//! The pipeline: triangle meshes are resampled to a fixed point budget,
//! each point gets a seven-value covariance-eigenvalue shape descriptor,
//! a small MLP embeds the descriptors, and a stack of edge-convolution
//! layers over dynamically recomputed k-NN graphs produces logits through
//! global max pooling. Training runs plain SGD with momentum on exact
//! hand-derived gradients; evaluation produces a row-normalized confusion
//! matrix and one-vs-rest ROC curves.
//!
//! Start with the runnable programs under `examples/`, or the `icgeom`
//! binary for the file-based workflow.

pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod geomfeat;
pub mod graph;
pub mod net;
pub mod pointcloud;
pub mod train;

pub use error::{Error, Result};
