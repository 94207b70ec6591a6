//! Numerical laboratory for rigidly rotating spiral waves of λ-ω
//! reaction-diffusion systems in radial form.

pub mod bvp;
pub mod error;
pub mod fit;
pub mod finite_q;
pub mod grid;
pub mod jet;
pub mod kernel;
pub mod leading_order;
pub mod model;
pub mod series_engine;
pub mod specfun;

pub use error::{Error, Result};
