//! Steady equilibria of a spring-mounted, torsionally restrained rigid body
//! immersed in a uniform Navier-Stokes stream, computed on truncated boxes.
//!
//! The crate is organised bottom-up: [`params`] holds the physical constants
//! and the rotation algebra, [`grid`] the staggered MAC grid with its masked
//! operators, [`lifting`] the solenoidal extensions of the far-field datum,
//! [`oseen`] the linear saddle-point solver, [`equilibrium`] the coupled
//! fixed-point map, [`invading`] the growing-box limit, [`analysis`] the
//! empirical checks of the a-priori bounds, and [`config`]/[`io`] the run
//! configuration and artifact handling used by the `fsieq` binary.

pub mod analysis;
pub mod config;
pub mod equilibrium;
pub mod error;
pub mod grid;
pub mod invading;
pub mod io;
pub mod lifting;
pub mod oseen;
pub mod params;
pub mod run;
pub mod verify;

pub use error::{Error, Result};

/// 3-vector used for constant data such as b_α and δ.
pub type Vec3 = nalgebra::Vector3<f64>;
/// 3×3 matrix used for Q(θ), 𝔸 and 𝔹(θ).
pub type Mat3 = nalgebra::Matrix3<f64>;
