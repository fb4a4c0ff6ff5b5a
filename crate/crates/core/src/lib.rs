//! Convex model-predictive down-regulation of a wind turbine in energy
//! coordinates.
//!
//! The crate contains the aerodynamic coefficient surfaces ([`aero`]), a
//! rigid-shaft plant ([`turbine`]), the concave available-power envelope
//! ([`envelope`]), operating-point linearizations ([`linearize`]), a sparse
//! ADMM quadratic-programming solver ([`qp`]), the receding-horizon controller
//! ([`mpc`]) and the closed-loop scenario harness ([`harness`]).

pub mod aero;
pub mod envelope;
pub mod harness;
pub mod linearize;
pub mod mpc;
pub mod qp;
pub mod turbine;

mod spline;
