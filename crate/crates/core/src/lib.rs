//! Allocation-only core of the noised-autoencoder annotation refiner.
//!
//! Point annotations are perturbed with bounded random offsets
//! ([`noise`]), a small encoder/decoder ([`nn`]) learns a dense field that
//! undoes the perturbation ([`train`]), and the field is applied to the
//! original annotations to refine them ([`field::restore`]). [`synth`] and
//! [`eval`] provide synthetic scenes with known truth and the metrics used
//! to judge the refinement.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod annot;
pub mod error;
pub mod eval;
pub mod field;
pub mod nn;
pub mod noise;
pub mod rng;
pub mod synth;
pub mod train;

pub use annot::{nearest_distances, ImageGrid, Point, PointSet};
pub use error::{Error, Result};
pub use field::{restore, Sampling, VectorField};
pub use noise::{Alpha, BoundMode, SamplingBounds};
