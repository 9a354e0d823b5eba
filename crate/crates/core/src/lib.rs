//! Joint hierarchical Gaussian processes for a continuous longitudinal
//! outcome and a recurrent binary event indicator observed on an integer
//! time grid.

pub mod config;
pub mod data_model;
pub mod error;
pub mod forecast;
pub mod gp_core;
pub mod kernels;
pub mod metrics;
pub mod persistence;
pub mod polya_gamma;
pub mod priors;
pub mod reproduce;
pub mod sampler;
pub mod simulate;
pub mod survival;

pub use error::{Error, Result};
