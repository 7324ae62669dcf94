//! Geodesic shooting metamorphosis of functional shapes: polyhedral meshes
//! carrying a scalar signal, deformed by a kernel velocity field while the
//! signal evolves additively, matched to a target through a
//! functional-varifold fidelity.

// `!(a >= b)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod fem;
pub mod io;
pub mod kernels;
pub mod matching;
pub mod model;
pub mod registry;
pub mod shapes;
pub mod sphere;
pub mod varifold;

pub use error::{FshapeError, Result};
pub use model::{DiscreteFshape, Point};
