//! Numerical construction and computer-assisted verification of the
//! approximate self-similar blowup profile of the Hou-Luo model.
//!
//! The crate is organised bottom-up:
//!
//! - [`interval`]: outward-rounded interval arithmetic and interval matrices;
//! - [`grid`]: adaptive meshes with absolute/relative spacing caps and
//!   piecewise upper/lower bounds for functions and their combinations;
//! - [`spline`]: quintic splines fit from nodal values and slopes with
//!   C3-continuous curvatures, plus rigorous derivative bounds per interval;
//! - [`profile`]: the explicit odd profile ansatz (power-tail bump plus
//!   rational part) with derivative recursions and far-field tail series;
//! - [`hilbert`]: the Hilbert transform / Biot-Savart evaluation of the
//!   velocity and its first three derivatives with per-point error budgets;
//! - [`solver`]: the dynamically rescaled evolution that drives the profile
//!   pair to a steady state, with residual diagnostics and checkpoints;
//! - [`energy`]: singular weights, damping coefficients, cost functions and
//!   weighted-norm machinery for the stability ledger;
//! - [`verifier`]: quadrature and tail error lemmas, the Schatten-norm bound
//!   on the optimal constant, and the inequality ledger.

pub mod energy;
pub mod grid;
pub mod hilbert;
pub mod interval;
pub mod profile;
pub mod solver;
pub mod spline;
pub mod verifier;

pub use interval::{Interval, IntervalError, IntervalMatrix};
