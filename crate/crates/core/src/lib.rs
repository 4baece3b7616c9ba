#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::too_many_arguments,
    clippy::type_complexity,
    clippy::needless_range_loop
)]
//! Simulation and peaks-over-threshold inference for r-Pareto processes
//! with Brown–Resnick dependence.

pub mod br_model;
pub mod diagnostics;
pub mod error;
pub mod fit;
pub mod io;
pub mod linalg;
pub mod mvn_qmc;
pub mod normal;
pub mod objectives;
pub mod risk;
pub mod simulate;
pub mod variogram;

pub use error::{Error, Result};
