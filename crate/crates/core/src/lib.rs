//! Inverse Monge–Ampère flow on symmetry-reduced Fano models.
//!
//! * [`geometry`]: sphere and radial projective-plane backgrounds.
//! * [`flow`]: time integration of `phi_t = 1 - e^rho`.
//! * [`functionals`]: E, I, J, F, Mabuchi, entropy and integrability integrals.
//! * [`geodesics`]: Legendre duals, `d_p` distances and rays.
//! * [`diagnostics`]: monitors over stored trajectories.
//! * [`harness`]: configuration, run archives and the command line.

pub mod cheb;
pub mod diagnostics;
pub mod error;
pub mod flow;
pub mod functionals;
pub mod geodesics;
pub mod geometry;
pub mod harness;

pub use error::{Error, Result};
