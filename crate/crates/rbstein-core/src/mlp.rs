//! Minimal dense MLP with tanh hidden layers and a linear output layer.
//!
//! Weights live in one flat slice so the whole network can sit inside a
//! parameter vector and be moved by the same transport as any other
//! coordinate. Layout per layer: weight matrix row-major (out x in),
//! then the bias vector.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Layer widths, input first. `[3, 4, 4, 1]` is a 3-input scalar-output net.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    pub layers: Vec<usize>,
}

impl MlpSpec {
    pub fn new(layers: Vec<usize>) -> Self {
        debug_assert!(layers.len() >= 2);
        Self { layers }
    }

    /// Total number of weights and biases.
    pub fn weight_count(&self) -> usize {
        self.layers
            .windows(2)
            .map(|w| (w[0] + 1) * w[1])
            .sum()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layers.last().unwrap()
    }

    fn check_weights(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.weight_count() {
            return Err(Error::Shape {
                what: "mlp weights",
                expected: self.weight_count(),
                got: w.len(),
            });
        }
        Ok(())
    }

    /// Forward pass.
    pub fn forward(&self, w: &[f64], input: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.forward_with_input_jacobian(w, input, false)?.0)
    }

    /// Forward pass plus, when `want_jacobian`, d output / d input.
    ///
    /// The Jacobian is the product W_L D_{L-1} W_{L-1} ... D_1 W_1 with
    /// D_l = diag(1 - tanh^2) of layer l's pre-activations.
    pub fn forward_with_input_jacobian(
        &self,
        w: &[f64],
        input: &DVector<f64>,
        want_jacobian: bool,
    ) -> Result<(DVector<f64>, Option<DMatrix<f64>>)> {
        self.check_weights(w)?;
        if input.len() != self.input_dim() {
            return Err(Error::Shape {
                what: "mlp input",
                expected: self.input_dim(),
                got: input.len(),
            });
        }

        let mut activation = input.clone();
        let mut jacobian = if want_jacobian {
            Some(DMatrix::<f64>::identity(input.len(), input.len()))
        } else {
            None
        };

        let n_layers = self.layers.len() - 1;
        let mut offset = 0usize;
        for (l, pair) in self.layers.windows(2).enumerate() {
            let (n_in, n_out) = (pair[0], pair[1]);
            let weight = DMatrix::from_row_slice(n_out, n_in, &w[offset..offset + n_out * n_in]);
            offset += n_out * n_in;
            let bias = DVector::from_row_slice(&w[offset..offset + n_out]);
            offset += n_out;

            let pre = &weight * &activation + bias;
            let last_layer = l == n_layers - 1;
            if let Some(j) = jacobian.take() {
                let mut propagated = &weight * j;
                if !last_layer {
                    for r in 0..n_out {
                        let t = libm::tanh(pre[r]);
                        let gain = 1.0 - t * t;
                        propagated.row_mut(r).scale_mut(gain);
                    }
                }
                jacobian = Some(propagated);
            }
            activation = if last_layer {
                pre
            } else {
                pre.map(libm::tanh)
            };
        }
        Ok((activation, jacobian))
    }
}
