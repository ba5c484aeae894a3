//! File formats, synthetic datasets, training driver and command line for
//! noised-autoencoder annotation refinement. The numerical work lives in
//! [`nae_core`].

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod formats;
pub mod pipeline;
pub mod report;
pub mod sweep;

pub use error::{Error, Result};
pub use nae_core;
