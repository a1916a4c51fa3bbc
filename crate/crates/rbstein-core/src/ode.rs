//! Fixed-step RK4 integration and the matching discrete-time Jacobian.
//!
//! Continuous-time plants are discretized with one classical Runge-Kutta
//! step per sample period. The Jacobian of the discrete map is obtained by
//! differentiating the scheme itself (chain rule through the four stages),
//! so it is consistent with the integrator to machine precision rather than
//! an O(ts) approximation of the matrix exponential.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::vec_finite;

/// One classical RK4 step of size `ts` for x' = deriv(x, u, theta),
/// holding `u` constant over the step.
pub fn rk4_step<F>(
    deriv: F,
    x: &DVector<f64>,
    u: &DVector<f64>,
    theta: &DVector<f64>,
    ts: f64,
) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>, &DVector<f64>, &DVector<f64>) -> DVector<f64>,
{
    let check = |v: DVector<f64>, stage: &'static str| -> Result<DVector<f64>> {
        if vec_finite(&v) {
            Ok(v)
        } else {
            Err(Error::NonFinite { where_: stage })
        }
    };
    let k1 = check(deriv(x, u, theta), "rk4 stage 1")?;
    let k2 = check(deriv(&(x + &k1 * (ts / 2.0)), u, theta), "rk4 stage 2")?;
    let k3 = check(deriv(&(x + &k2 * (ts / 2.0)), u, theta), "rk4 stage 3")?;
    let k4 = check(deriv(&(x + &k3 * ts), u, theta), "rk4 stage 4")?;
    let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (ts / 6.0);
    if vec_finite(&next) {
        Ok(next)
    } else {
        Err(Error::NonFinite {
            where_: "rk4 combination",
        })
    }
}

/// Jacobian of the RK4 step map with respect to x.
///
/// With J(.) the Jacobian of the vector field, the stage sensitivities are
///   K1 = J(x)
///   K2 = J(x + ts/2 k1) (I + ts/2 K1)
///   K3 = J(x + ts/2 k2) (I + ts/2 K2)
///   K4 = J(x + ts   k3) (I + ts   K3)
/// and d(next)/dx = I + ts/6 (K1 + 2 K2 + 2 K3 + K4).
pub fn rk4_jacobian<F, J>(
    deriv: F,
    jac: J,
    x: &DVector<f64>,
    u: &DVector<f64>,
    theta: &DVector<f64>,
    ts: f64,
) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>, &DVector<f64>, &DVector<f64>) -> DVector<f64>,
    J: Fn(&DVector<f64>, &DVector<f64>, &DVector<f64>) -> DMatrix<f64>,
{
    let n = x.len();
    let eye = DMatrix::<f64>::identity(n, n);

    let k1 = deriv(x, u, theta);
    let x2 = x + &k1 * (ts / 2.0);
    let k2 = deriv(&x2, u, theta);
    let x3 = x + &k2 * (ts / 2.0);
    let k3 = deriv(&x3, u, theta);
    let x4 = x + &k3 * ts;

    let big_k1 = jac(x, u, theta);
    let big_k2 = jac(&x2, u, theta) * (&eye + &big_k1 * (ts / 2.0));
    let big_k3 = jac(&x3, u, theta) * (&eye + &big_k2 * (ts / 2.0));
    let big_k4 = jac(&x4, u, theta) * (&eye + &big_k3 * ts);

    let j = &eye + (big_k1 + big_k2 * 2.0 + big_k3 * 2.0 + big_k4) * (ts / 6.0);
    if crate::linalg::mat_finite(&j) {
        Ok(j)
    } else {
        Err(Error::NonFinite {
            where_: "rk4 jacobian",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp_field(x: &DVector<f64>, _u: &DVector<f64>, _t: &DVector<f64>) -> DVector<f64> {
        x.clone()
    }

    #[test]
    fn rk4_matches_exponential_to_fifth_order() {
        // x' = x from 1.0 over ts = 0.1: one step gives the degree-4 Taylor
        // polynomial of e^0.1, 1.1051708333333333 (true value 1.1051709180...).
        let x = DVector::from_element(1, 1.0);
        let u = DVector::zeros(0);
        let theta = DVector::zeros(0);
        let next = rk4_step(exp_field, &x, &u, &theta, 0.1).unwrap();
        assert!((next[0] - 1.1051708333333333).abs() < 1e-14);
        assert!((next[0] - libm::exp(0.1)).abs() < 1e-7);
    }

    #[test]
    fn rk4_observed_order_is_four() {
        // Error ratio between step sizes h and h/2 should be about 2^4.
        let x = DVector::from_element(1, 1.0);
        let u = DVector::zeros(0);
        let theta = DVector::zeros(0);
        let err = |h: f64| -> f64 {
            let mut state = x.clone();
            let steps = (1.0 / h) as usize;
            for _ in 0..steps {
                state = rk4_step(exp_field, &state, &u, &theta, h).unwrap();
            }
            (state[0] - libm::exp(1.0)).abs()
        };
        let e1 = err(0.05);
        let e2 = err(0.025);
        let order = libm::log(e1 / e2) / libm::log(2.0);
        assert!(order > 3.7, "observed order {order}");
    }

    #[test]
    fn rk4_jacobian_matches_linear_system_exactly() {
        // For x' = A x the discrete Jacobian equals the RK4 polynomial in A.
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -0.3]);
        let ts = 0.1;
        let deriv = |x: &DVector<f64>, _: &DVector<f64>, _: &DVector<f64>| &a * x;
        let jac = |_: &DVector<f64>, _: &DVector<f64>, _: &DVector<f64>| a.clone();
        let x = DVector::from_row_slice(&[0.5, -1.0]);
        let u = DVector::zeros(0);
        let theta = DVector::zeros(0);
        let j = rk4_jacobian(deriv, jac, &x, &u, &theta, ts).unwrap();

        let eye = DMatrix::<f64>::identity(2, 2);
        let a1 = &a * ts;
        let expected = &eye
            + &a1
            + &a1 * &a1 / 2.0
            + &a1 * &a1 * &a1 / 6.0
            + &a1 * &a1 * &a1 * &a1 / 24.0;
        assert!((j - expected).norm() < 1e-14);
    }

    #[test]
    fn non_finite_stage_is_reported() {
        let deriv = |x: &DVector<f64>, _: &DVector<f64>, _: &DVector<f64>| {
            DVector::from_element(1, 1.0 / x[0])
        };
        let x = DVector::zeros(1);
        let u = DVector::zeros(0);
        let theta = DVector::zeros(0);
        let err = rk4_step(deriv, &x, &u, &theta, 0.1).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }
}
