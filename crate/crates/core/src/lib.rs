//! Numerical workbench for radial solutions of supercritical elliptic
//! equations with a Hardy potential and a reaction that changes sign across
//! a switch radius.
//!
//! The pipeline: [`params`] derives the critical exponents and regime
//! classification from a problem configuration, [`fowler`] builds the
//! autonomous planar fields the log-radius substitution produces,
//! [`integrate`] drives them with a dense-output adaptive stepper,
//! [`manifolds`] traces invariant manifolds of the origin as arclength
//! parametrized branches, and [`shooting`] walks the unstable branch to
//! locate the fast-decay labels and classify everything in between.

pub mod error;
pub mod fowler;
pub mod integrate;
pub mod manifolds;
pub mod params;
pub mod report;
pub mod shooting;

pub use error::{Error, Result};
