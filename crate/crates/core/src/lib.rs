//! Rough-path numerics for the stochastic Landau–Lifshitz–Gilbert equation on the 1D torus.

pub mod analysis;
pub mod error;
pub mod experiments;
pub mod driver;
pub mod grid;
pub mod llg;
pub mod noise;
pub mod rough;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;
