//! Two-dimensional acoustic wave propagation on a staggered grid, and a
//! small convolutional surrogate trained without labels by driving the
//! finite-difference residual of its one-step prediction to zero.
//!
//! The crate is organised bottom-up:
//!
//! - [`grid`]: domain geometry, staggered fields, PML damping profile, sources
//! - [`fdm`]: the reference finite-difference stepper (ground truth)
//! - [`fdrc`]: the residual loss and its exact adjoint
//! - [`nn`]: the three-layer convolutional surrogate with a manual backward pass
//! - [`optim`]: Adam and the stepped learning-rate schedule
//! - [`pool`]: the self-feeding pool of evolving training domains
//! - [`trainer`]: the unsupervised training loop
//! - [`eval`]: surrogate rollouts, relative error, and oracle comparison
//! - [`io`]: binary snapshot and checkpoint formats, csv/pgm export

pub mod error;
pub mod eval;
pub mod fdm;
pub mod fdrc;
pub mod grid;
pub mod io;
pub mod nn;
pub mod optim;
pub mod pool;
pub mod real;
pub mod trainer;

pub use error::{Error, Result};
pub use grid::{DomainSpec, FieldGrid, SigmaField, SourceLayout, SourceSpec, WaveState};
pub use real::{Precision, Real};
