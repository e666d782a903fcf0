//! Small dense linear-algebra helpers.
//!
//! The symmetric eigensolver here is a cyclic Jacobi iteration. Certificates
//! produced by [`crate::lmi::verify_solution`] rely only on it, so it is kept
//! self-contained and independent of the interior-point code.

use nalgebra::{DMatrix, DVector};

/// Relative off-diagonal tolerance at which the Jacobi sweep stops.
pub const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Eigen-decomposition of a symmetric matrix, eigenvalues sorted ascending.
#[derive(Debug, Clone)]
pub struct JacobiEigen {
    pub values: DVector<f64>,
    /// Columns are the eigenvectors matching `values`.
    pub vectors: DMatrix<f64>,
    pub sweeps: usize,
}

impl JacobiEigen {
    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

fn off_diagonal_norm(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

/// Cyclic Jacobi eigen-decomposition of the symmetric part of `a`.
///
/// Sweeps until the off-diagonal Frobenius norm drops below
/// `JACOBI_TOL * ||a||_F`.
pub fn jacobi_eigen(a: &DMatrix<f64>) -> JacobiEigen {
    assert!(a.is_square(), "jacobi_eigen needs a square matrix");
    let n = a.nrows();
    let mut m = symmetrize(a);
    let mut v = DMatrix::<f64>::identity(n, n);
    let scale = m.norm();
    let mut sweeps = 0;

    while sweeps < JACOBI_MAX_SWEEPS {
        let off = off_diagonal_norm(&m);
        if off == 0.0 || off <= JACOBI_TOL * scale {
            break;
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[(k, p)];
                    let akq = m[(k, q)];
                    m[(k, p)] = c * akp - s * akq;
                    m[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[(p, k)];
                    let aqk = m[(q, k)];
                    m[(p, k)] = c * apk - s * aqk;
                    m[(q, k)] = s * apk + c * aqk;
                }
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].total_cmp(&m[(j, j)]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| m[(i, i)]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &v.column(src));
    }
    JacobiEigen {
        values,
        vectors,
        sweeps,
    }
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

pub fn all_finite(a: &DMatrix<f64>) -> bool {
    a.iter().all(|v| v.is_finite())
}

/// Symmetric positive-definite square root inverse `A^{-1/2}`.
pub fn spd_inv_sqrt(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let eig = jacobi_eigen(a);
    if eig.min() <= 0.0 {
        return None;
    }
    let d = DMatrix::from_diagonal(&eig.values.map(|l| 1.0 / l.sqrt()));
    Some(&eig.vectors * d * eig.vectors.transpose())
}

/// Block-diagonal assembly of two square blocks.
pub fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (na, nb) = (a.nrows(), b.nrows());
    let mut out = DMatrix::zeros(na + nb, na + nb);
    out.view_mut((0, 0), (na, na)).copy_from(a);
    out.view_mut((na, na), (nb, nb)).copy_from(b);
    out
}

/// Maximum real part over the eigenvalues of a general square matrix.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn diagonal_input_is_returned_sorted() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, -1.0, 2.0]));
        let e = jacobi_eigen(&a);
        assert_eq!(e.values.as_slice(), &[-1.0, 2.0, 3.0]);
        assert_eq!(e.sweeps, 0);
    }

    #[test]
    fn two_by_two_closed_form() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let e = jacobi_eigen(&a);
        assert_relative_eq!(e.values[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(e.values[1], 3.0, epsilon = 1e-14);
    }

    #[test]
    fn inv_sqrt_of_diagonal() {
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![1000.0, 1.0]));
        let t = spd_inv_sqrt(&q).unwrap();
        assert_relative_eq!(t[(0, 0)], 1.0 / 1000f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(t[(1, 1)], 1.0, epsilon = 1e-15);
        assert!(spd_inv_sqrt(&DMatrix::zeros(2, 2)).is_none());
    }

    #[test]
    fn abscissa_of_damped_oscillator() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1000.0, -50.0]);
        assert_relative_eq!(spectral_abscissa(&a), -25.0, epsilon = 1e-10);
    }

    proptest! {
        // Cross-check against nalgebra's Householder/QR symmetric eigensolver.
        #[test]
        fn matches_reference_eigensolver(entries in proptest::collection::vec(-10.0f64..10.0, 16)) {
            let a = symmetrize(&DMatrix::from_row_slice(4, 4, &entries));
            let ours = jacobi_eigen(&a);
            let mut reference: Vec<f64> = a.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
            reference.sort_by(f64::total_cmp);
            for (x, y) in ours.values.iter().zip(reference.iter()) {
                prop_assert!((x - y).abs() <= 1e-10 * (1.0 + a.norm()));
            }
            let recon = &ours.vectors * DMatrix::from_diagonal(&ours.values) * ours.vectors.transpose();
            prop_assert!((recon - &a).norm() <= 1e-10 * (1.0 + a.norm()));
        }
    }
}
