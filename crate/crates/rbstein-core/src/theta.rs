//! Parameter vectors with per-slot reparameterization.
//!
//! Transport (random walk, Stein descent) always acts on an unconstrained
//! vector; slots that represent variances are carried as logs so that a
//! gradient step cannot leave the positive half-line. Models only ever see
//! the constrained values.

use alloc::vec::Vec;
use nalgebra::DVector;

use crate::error::{Error, Result};

/// How one coordinate maps from unconstrained space to model space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotTransform {
    /// Model space equals transport space.
    Identity,
    /// The slot is a variance, carried as its log: model value = exp(raw).
    LogVariance,
}

/// A parameter vector in transport space plus its slot transforms.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaVector {
    /// Unconstrained values the transport rules act on.
    pub values: DVector<f64>,
    /// One transform per slot.
    pub transform: Vec<SlotTransform>,
}

impl ThetaVector {
    pub fn new(values: DVector<f64>, transform: Vec<SlotTransform>) -> Result<Self> {
        if values.len() != transform.len() {
            return Err(Error::Shape {
                what: "theta transform",
                expected: values.len(),
                got: transform.len(),
            });
        }
        Ok(Self { values, transform })
    }

    /// All-identity transform: model space equals transport space.
    pub fn identity(values: DVector<f64>) -> Self {
        let transform = alloc::vec![SlotTransform::Identity; values.len()];
        Self { values, transform }
    }

    /// Build from model-space values, logging the variance slots.
    pub fn from_constrained(constrained: DVector<f64>, transform: Vec<SlotTransform>) -> Result<Self> {
        if constrained.len() != transform.len() {
            return Err(Error::Shape {
                what: "theta transform",
                expected: constrained.len(),
                got: transform.len(),
            });
        }
        let mut values = constrained;
        for (i, t) in transform.iter().enumerate() {
            if let SlotTransform::LogVariance = t {
                if values[i] <= 0.0 {
                    return Err(Error::Domain {
                        what: "variance slot",
                        value: values[i],
                    });
                }
                values[i] = libm::log(values[i]);
            }
        }
        Ok(Self { values, transform })
    }

    /// Model-space values: exp applied to log-variance slots.
    pub fn constrained(&self) -> DVector<f64> {
        let mut out = self.values.clone();
        for (i, t) in self.transform.iter().enumerate() {
            if let SlotTransform::LogVariance = t {
                out[i] = libm::exp(out[i]);
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_round_trip() {
        let theta = ThetaVector::identity(DVector::from_row_slice(&[0.4, -1.2, 7.0]));
        assert_eq!(theta.constrained(), theta.values);
    }

    #[test]
    fn log_variance_constrains_to_exp() {
        let theta = ThetaVector::new(
            DVector::from_row_slice(&[2.0, 0.0]),
            alloc::vec![SlotTransform::Identity, SlotTransform::LogVariance],
        )
        .unwrap();
        let c = theta.constrained();
        assert_eq!(c[0], 2.0);
        assert!((c[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn from_constrained_inverts_constrain() {
        let transform = alloc::vec![SlotTransform::Identity, SlotTransform::LogVariance];
        let model_space = DVector::from_row_slice(&[-0.3, 0.25]);
        let theta = ThetaVector::from_constrained(model_space.clone(), transform).unwrap();
        assert!((theta.values[1] - libm::log(0.25)).abs() < 1e-15);
        let back = theta.constrained();
        assert!((back - model_space).norm() < 1e-15);
    }

    #[test]
    fn nonpositive_variance_is_rejected() {
        let transform = alloc::vec![SlotTransform::LogVariance];
        let err = ThetaVector::from_constrained(DVector::from_row_slice(&[0.0]), transform)
            .unwrap_err();
        assert!(matches!(err, Error::Domain { .. }));
    }

    #[test]
    fn mismatched_transform_length_is_rejected() {
        let err = ThetaVector::new(
            DVector::from_row_slice(&[1.0, 2.0]),
            alloc::vec![SlotTransform::Identity],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }
}
