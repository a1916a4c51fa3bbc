//! Online joint state and parameter estimation in nonlinear state-space
//! models via Rao-Blackwellized particle methods.
//!
//! The joint posterior is factorized as
//! `p(x_t, theta_t | y_1:t) = p(x_t | theta_t, y_1:t) p(theta_t | y_1:t)`:
//! the state conditional is tracked in closed form by one extended Kalman
//! filter per parameter particle, while the parameter marginal is carried by
//! the particle set itself. Three transport rules for the particles are
//! provided: importance weighting with resampling ([`rbpf`]), Stein
//! variational gradient descent ([`svgd`]), and Fisher-preconditioned Stein
//! descent with an Adam-style step ([`fisher`]).
//!
//! [`metrics`] scores filter output (CRPS, RMSE); [`theory`] holds grid-based
//! density tooling used to check contraction and total-variation bounds
//! empirically.
//!
//! The crate is `no_std` + `alloc`; all transcendental math goes through
//! `libm` and every random draw is made from a caller-seeded ChaCha stream.

#![cfg_attr(not(test), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod ekf;
pub mod error;
pub mod fisher;
pub mod linalg;
pub mod metrics;
pub mod mlp;
pub mod model;
pub mod ode;
pub mod rbpf;
pub mod sim;
pub mod svgd;
pub mod systems;
pub mod theory;
pub mod theta;

pub use error::{Error, Result};
