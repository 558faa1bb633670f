use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Leading eigenpair of a Hermitian matrix.
///
/// The eigenvector has unit norm and its first component with magnitude above
/// `1e-12` is made real and positive, so the result is deterministic.
pub fn max_eigpair(m: &DMatrix<Complex64>) -> (f64, DVector<Complex64>) {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "matrix must be square");
    assert!(n > 0, "matrix must be nonempty");
    let herm = (m + m.adjoint()).scale(0.5);
    let eig = herm.symmetric_eigen();
    let idx = eig.eigenvalues.imax();
    let mut v = eig.eigenvectors.column(idx).into_owned();
    let norm = v.norm();
    if norm > 0.0 {
        v.unscale_mut(norm);
    }
    if let Some(pivot) = v.iter().find(|z| z.norm() > 1e-12).copied() {
        let rot = pivot.conj() / pivot.norm();
        v *= rot;
    }
    (eig.eigenvalues[idx], v)
}

/// Best rank-one approximation `sqrt(lambda_max) e_max` of a PSD matrix.
#[derive(Debug, Clone)]
pub struct RankOne {
    pub vector: DVector<Complex64>,
    pub lambda_max: f64,
    /// `lambda_max / trace`, equal to one exactly when the matrix has rank one.
    pub ratio: f64,
    /// Frobenius norm of `m - v v^H` relative to the norm of `m`.
    pub residual: f64,
}

pub fn rank1_extract(m: &DMatrix<Complex64>) -> RankOne {
    let (lambda, e) = max_eigpair(m);
    let lambda_pos = lambda.max(0.0);
    let vector = e * Complex64::new(lambda_pos.sqrt(), 0.0);
    let trace: f64 = (0..m.nrows()).map(|i| m[(i, i)].re).sum();
    let approx = &vector * vector.adjoint();
    let mnorm = m.norm();
    let residual = if mnorm > 0.0 {
        (m - approx).norm() / mnorm
    } else {
        0.0
    };
    RankOne {
        vector,
        lambda_max: lambda,
        ratio: if trace > 0.0 { lambda / trace } else { 0.0 },
        residual,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn eigpair_of_rank_one_recovers_vector() {
        let v = DVector::from_vec(vec![c(1.0, 1.0), c(0.0, -2.0), c(0.5, 0.0)]);
        let m = &v * v.adjoint();
        let (lambda, e) = max_eigpair(&m);
        assert_relative_eq!(lambda, v.norm_squared(), epsilon = 1e-10);
        assert!(e[0].im.abs() < 1e-12 && e[0].re > 0.0);
        let overlap = (e.adjoint() * &v)[(0, 0)].norm();
        assert_relative_eq!(overlap, v.norm(), epsilon = 1e-10);
    }

    #[test]
    fn extraction_of_mixed_matrix_reports_ratio() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![c(3.0, 0.0), c(1.0, 0.0)]));
        let r = rank1_extract(&m);
        assert_relative_eq!(r.lambda_max, 3.0, epsilon = 1e-12);
        assert_relative_eq!(r.ratio, 0.75, epsilon = 1e-12);
        assert_relative_eq!(r.residual, 1.0 / 10f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn first_nonzero_component_is_positive_real() {
        let v = DVector::from_vec(vec![c(0.0, 0.0), c(-1.0, 1.0), c(2.0, 0.0)]);
        let m = &v * v.adjoint();
        let (_, e) = max_eigpair(&m);
        assert!(e[0].norm() < 1e-9);
        assert!(e[1].re > 0.0 && e[1].im.abs() < 1e-12);
    }
}
