//! Error type shared across the crate.
//!
//! Numerical failure is part of the contract here: a singular innovation
//! covariance or a collapsed weight set is information the caller needs, not
//! a panic. Every fallible routine returns [`Result`].

use alloc::string::String;
use core::fmt;

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;

/// Failure modes of simulation, filtering, and transport.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Dimension mismatch between an argument and what the model declares.
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    /// An argument was outside its mathematical domain (e.g. sigma <= 0).
    Domain { what: &'static str, value: f64 },
    /// A vector field or measurement map produced a non-finite value.
    NonFinite { where_: &'static str },
    /// Simulated state left the finite domain at the given step (1-based).
    SimulationDiverged { step: usize },
    /// A filter produced a non-finite belief.
    FilterDiverged { where_: &'static str },
    /// Finite-difference Jacobian hit a non-finite entry in this column.
    JacobianError { coordinate: usize },
    /// Innovation covariance stayed non-positive-definite after the jitter
    /// ladder was exhausted.
    InnovationSingular { jitter_tried: f64 },
    /// Adam preconditioner stayed singular after the jitter ladder.
    PreconditionerSingular { jitter_tried: f64 },
    /// Every particle weight underflowed to zero in one update.
    WeightCollapse { max_log_weight: f64 },
    /// Finite-difference probes failed on both sides of a coordinate.
    GradientUnavailable { coordinate: usize },
    /// A transported particle left the finite domain.
    ParticleDiverged { particle: usize, iteration: usize },
    /// A Gaussian belief carried a non-finite mean or an indefinite
    /// covariance where a valid one was required.
    BeliefInvalid { what: &'static str },
    /// Anything configuration-shaped that cannot be expressed above.
    Config(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape {
                what,
                expected,
                got,
            } => write!(f, "{what}: expected dimension {expected}, got {got}"),
            Error::Domain { what, value } => {
                write!(f, "{what} out of domain (value {value})")
            }
            Error::NonFinite { where_ } => {
                write!(f, "non-finite value produced in {where_}")
            }
            Error::SimulationDiverged { step } => {
                write!(f, "simulated state became non-finite at step {step}")
            }
            Error::FilterDiverged { where_ } => {
                write!(f, "filter produced a non-finite belief in {where_}")
            }
            Error::JacobianError { coordinate } => {
                write!(f, "finite-difference Jacobian non-finite at coordinate {coordinate}")
            }
            Error::InnovationSingular { jitter_tried } => write!(
                f,
                "innovation covariance not positive definite (jitter up to {jitter_tried:e} tried)"
            ),
            Error::PreconditionerSingular { jitter_tried } => write!(
                f,
                "Adam preconditioner not positive definite (jitter up to {jitter_tried:e} tried)"
            ),
            Error::WeightCollapse { max_log_weight } => write!(
                f,
                "all particle weights underflowed (max log-weight {max_log_weight})"
            ),
            Error::GradientUnavailable { coordinate } => write!(
                f,
                "likelihood gradient unavailable: both probes failed at coordinate {coordinate}"
            ),
            Error::ParticleDiverged {
                particle,
                iteration,
            } => write!(
                f,
                "particle {particle} became non-finite at transport iteration {iteration}"
            ),
            Error::BeliefInvalid { what } => write!(f, "invalid Gaussian belief: {what}"),
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
