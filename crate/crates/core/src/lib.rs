//! Boundary-layer asymptotics for Poisson-Boltzmann type equations with Robin
//! boundary data, and radial finite-volume oracles to check them against.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod asymptotics;
pub mod ccpb;
pub mod error;
pub mod exec;
pub mod geometry;
pub mod nonlinearity;
pub mod numerics;
pub mod profiles;
pub mod radial_oracle;

pub use error::{Error, Result};
