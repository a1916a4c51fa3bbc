//! Concrete case-study systems and linear test models.

pub mod bioreactor;
pub mod linear;
pub mod nn_plant;

pub use bioreactor::{
    bioreactor_derivative, bioreactor_jacobian, eta_mean, haldane_growth, BioreactorModel,
    BioreactorParams,
};
pub use linear::{Ar1Model, DampedIntegratorModel};
pub use nn_plant::{
    nn_benchmark_input, nn_nonlinear_term, nn_true_derivative, NnAugmentedModel, NnLinearBaseline,
};
