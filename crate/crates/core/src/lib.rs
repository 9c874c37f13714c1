//! Lower and upper bounds on the value of stochastic control problems by
//! policy simulation and information relaxation with penalties.
//!
//! * [`finite_mdp`]: exact duality on small finite MDPs by enumeration.
//! * [`market`]: the discretized predictable-returns market.
//! * [`dp`]: grid value factors and the grid policy.
//! * [`concave`]: the interior-point engine behind every maximization.
//! * [`penalties`]: zero, first and linearized second penalties as affine forms.
//! * [`bounds`]: Monte Carlo lower and dual upper bounds.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod concave;
pub mod dp;
pub mod finite_mdp;
pub mod market;
pub mod penalties;
pub mod utility;
