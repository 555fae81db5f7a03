//! Periodic homogenization of the nonstationary Maxwell system with constant permeability:
//! cell problems, effective tensors, spectral germ, Bloch fiber branches, and an
//! ε-commensurate torus propagator with correctors.

pub mod bloch;
pub mod cell;
pub mod coefficients;
pub mod config;
pub mod error;
pub mod germ;
pub mod harness;
pub mod io;
pub mod lanczos;
pub mod lattice;
pub mod linalg;
pub mod solver;
pub mod spectral;
pub mod wave;

pub use error::{Error, ErrorKind, Result};
