//! Space-time channel map construction.
//!
//! The crate has two halves. The model-driven half ([`scene`], [`hcm`])
//! synthesizes complex channel matrices over a receiver grid as a mix of
//! image-method specular rays, moving-scatterer clusters and dense diffuse
//! multipath. The data-driven half ([`graph`], [`gnn`], [`train`]) takes a
//! sparse set of observed grid nodes and interpolates the rest with an
//! inductive graph network built on a Wasserstein k-NN topology.
//! [`metrics`] holds the evaluation statistics.
//!
//! Everything here is `no_std` compatible (with `alloc`); file formats,
//! wall clocks and the command line live in the `chanmap` crate.

#![cfg_attr(not(feature = "std"), no_std)]
// `!(x > 0.0)` deliberately rejects NaN; index loops walk parallel arrays.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod clock;
pub mod error;
pub mod geometry;
pub mod gnn;
pub mod graph;
pub mod hcm;
pub mod linalg;
pub mod metrics;
pub mod rng;
pub mod sampling;
pub mod scene;
pub mod train;

pub use error::{Error, Result};
pub use num_complex::Complex64;

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
