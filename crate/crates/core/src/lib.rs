//! Weighted information (WI) and weighted entropy (WE) rates.
//!
//! For a string `x = (x_0, .., x_{n-1})` with joint law `f_n` and a weight
//! function `phi_n`, the weighted information is `-phi_n(x) ln f_n(x)` and the
//! weighted entropy is its mean. This crate computes these quantities and
//! their growth rates for
//!
//! * IID processes ([`iid`]) with additive and multiplicative weights,
//! * finite-state Markov chains ([`markov`]) via exact transfer recursions,
//! * weighted transfer operators and their Perron (Krein–Rutman) data
//!   ([`spectral`]), including quadrature-discretized continuous kernels,
//! * metric/topological pressure and the variational principle ([`pressure`]),
//! * Gaussian vectors and the AR(1) process ([`gaussian`]),
//! * trajectory-level convergence checks ([`trajectory`]).
//!
//! All logarithms are natural; see [`LogBase`] for output conversion.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod gaussian;
pub mod iid;
pub mod markov;
pub mod model;
pub mod pressure;
pub mod quadrature;
pub mod spectral;
pub mod trajectory;

pub use error::{Error, Result};
pub use model::{DiscreteModel, JointWF, LogBase};
