//! Very robust regression estimators and a parametric contamination
//! framework for comparing them by simulation.

pub mod biweight;
pub mod data;
pub mod dist;
pub mod error;
pub mod estimators;
pub mod forward_search;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod quadrature;
pub mod rng;
pub mod scenario;

pub use data::{Dataset, Diagnostics, FitResult, Method, Source, TrueModel};
pub use error::{Error, Result};
pub use rng::RngStream;
