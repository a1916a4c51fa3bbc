//! Small dense linear-algebra helpers shared by the filters.

use alloc::vec::Vec;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// ln(2 pi), the normalizing constant of the Gaussian log-density.
pub const LN_2PI: f64 = 1.8378770664093453;

/// First rung of the jitter ladder applied before Cholesky factorization.
pub const INNOVATION_JITTER_START: f64 = 1e-10;

/// Last rung of the jitter ladder; beyond this the matrix is reported
/// singular rather than silently distorted further.
pub const INNOVATION_JITTER_MAX: f64 = 1e-6;

/// Replace `m` with `(m + m^T) / 2`, discarding asymmetric round-off.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    debug_assert_eq!(n, m.ncols());
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Cholesky factorization with an escalating diagonal jitter.
///
/// Tries the matrix as given, then adds `start * I`, escalating tenfold up
/// to `max * I`. Returns the factorization together with the jitter that was
/// actually applied (0.0 when none was needed); `Err` carries the largest
/// jitter tried.
pub fn cholesky_jittered(
    m: &DMatrix<f64>,
    start: f64,
    max: f64,
) -> core::result::Result<(Cholesky<f64, Dyn>, f64), f64> {
    if let Some(chol) = Cholesky::new(m.clone()) {
        return Ok((chol, 0.0));
    }
    let n = m.nrows();
    let mut jitter = start;
    loop {
        let mut jittered = m.clone();
        for i in 0..n {
            jittered[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(jittered) {
            return Ok((chol, jitter));
        }
        if jitter >= max {
            return Err(jitter);
        }
        jitter *= 10.0;
    }
}

/// Gaussian log-density of a residual under covariance factor `chol`.
pub fn logpdf_from_chol(residual: &DVector<f64>, chol: &Cholesky<f64, Dyn>) -> f64 {
    let k = residual.len() as f64;
    let mut log_det = 0.0;
    for i in 0..residual.len() {
        log_det += 2.0 * libm::log(chol.l_dirty()[(i, i)]);
    }
    let maha = residual.dot(&chol.solve(residual));
    -0.5 * (k * LN_2PI + log_det + maha)
}

/// log N(y; mean, cov) with the standard jitter ladder on `cov`.
pub fn mvn_logpdf(y: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let (chol, _) = cholesky_jittered(cov, INNOVATION_JITTER_START, INNOVATION_JITTER_MAX)
        .map_err(|jitter_tried| Error::InnovationSingular { jitter_tried })?;
    Ok(logpdf_from_chol(&(y - mean), &chol))
}

/// True when every entry is finite.
pub fn vec_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// True when every entry is finite.
pub fn mat_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}

/// Factor a positive semi-definite matrix as `L L^T`.
///
/// Plain Cholesky when the matrix is definite; otherwise a symmetric
/// eigendecomposition with negative eigenvalues clamped to zero, which
/// covers rank-deficient spread matrices (including the all-zero one).
pub fn psd_factor(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !mat_finite(m) {
        return Err(Error::NonFinite {
            where_: "psd_factor input",
        });
    }
    if let Some(chol) = Cholesky::new(m.clone()) {
        return Ok(chol.unpack());
    }
    let eig = m.clone().symmetric_eigen();
    let sqrt_vals: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|&l| libm::sqrt(l.max(0.0)))
        .collect();
    let mut factor = eig.eigenvectors;
    for (j, s) in sqrt_vals.iter().enumerate() {
        factor.column_mut(j).scale_mut(*s);
    }
    Ok(factor)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetrize_averages_off_diagonal() {
        let mut m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 4.0, 3.0]);
        symmetrize(&mut m);
        assert_eq!(m[(0, 1)], 3.0);
        assert_eq!(m[(1, 0)], 3.0);
        assert_eq!(m[(0, 0)], 1.0);
    }

    #[test]
    fn jitter_ladder_repairs_semidefinite_matrix() {
        // Rank-1, exactly singular: plain Cholesky fails, first rung fixes it.
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let (_, jitter) = cholesky_jittered(&m, 1e-10, 1e-6).unwrap();
        assert!(jitter > 0.0 && jitter <= 1e-6);
    }

    #[test]
    fn jitter_ladder_gives_up_on_negative_definite() {
        let m = DMatrix::from_row_slice(1, 1, &[-1.0]);
        let err = cholesky_jittered(&m, 1e-10, 1e-6).unwrap_err();
        assert_eq!(err, 1e-6);
    }

    #[test]
    fn mvn_logpdf_matches_scalar_formula() {
        // N(y; 0, 4) at y = 1: -0.5 (ln 2pi + ln 4 + 1/4).
        let y = DVector::from_element(1, 1.0);
        let mean = DVector::zeros(1);
        let cov = DMatrix::from_element(1, 1, 4.0);
        let expected = -0.5 * (LN_2PI + libm::log(4.0) + 0.25);
        let got = mvn_logpdf(&y, &mean, &cov).unwrap();
        assert!((got - expected).abs() < 1e-14);
    }

    #[test]
    fn mvn_logpdf_diagonal_factorizes() {
        // Independent coordinates: joint log-density is the sum of marginals.
        let y = DVector::from_row_slice(&[0.3, -1.2]);
        let mean = DVector::from_row_slice(&[0.1, 0.4]);
        let cov = DMatrix::from_diagonal(&DVector::from_row_slice(&[0.5, 2.0]));
        let joint = mvn_logpdf(&y, &mean, &cov).unwrap();
        let mut sum = 0.0;
        for i in 0..2 {
            let v = cov[(i, i)];
            let d: f64 = y[i] - mean[i];
            sum += -0.5 * (LN_2PI + libm::log(v) + d * d / v);
        }
        assert!((joint - sum).abs() < 1e-14);
    }

    #[test]
    fn psd_factor_handles_zero_and_rank_deficient() {
        let zero = DMatrix::zeros(3, 3);
        let f = psd_factor(&zero).unwrap();
        assert!(f.iter().all(|&x| x == 0.0));

        let rank1 = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let f = psd_factor(&rank1).unwrap();
        let back = &f * f.transpose();
        assert!((back - rank1).norm() < 1e-12);
    }
}
