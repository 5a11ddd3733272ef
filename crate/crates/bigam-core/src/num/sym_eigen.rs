//! Eigendecomposition of small dense symmetric matrices by the cyclic
//! Jacobi method.
//!
//! The per-observation weight matrices this crate decomposes are tiny
//! (a handful of rows) but can be numerically diagonal with permuted
//! entries, a shape on which `nalgebra`'s tridiagonalization-based
//! solver can return eigenvalues paired with the wrong eigenvectors.
//! Jacobi rotations never reorder anything they have not actually
//! rotated, converge quadratically at these sizes, and are fully
//! deterministic, so the decomposition always satisfies A = QΛQᵀ to
//! machine precision.

use nalgebra::{DMatrix, DVector};

/// Eigenvalues and orthonormal eigenvectors of a symmetric matrix,
/// satisfying `a ≈ vectors · diag(values) · vectorsᵀ`. The pairs are
/// returned in the order the sweeps leave them (no sorting).
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

/// Decompose a symmetric matrix with cyclic Jacobi sweeps. Only the
/// lower triangle is read. Panics if the matrix is not square.
pub fn sym_eigen(a: &DMatrix<f64>) -> SymEigen {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "sym_eigen needs a square matrix");
    // Work on a symmetrized copy so rounding asymmetry cannot drift.
    let mut m = DMatrix::from_fn(n, n, |r, c| {
        if r >= c {
            a[(r, c)]
        } else {
            a[(c, r)]
        }
    });
    let mut v = DMatrix::identity(n, n);
    if n <= 1 {
        return SymEigen {
            values: m.diagonal(),
            vectors: v,
        };
    }

    for _sweep in 0..64 {
        // Stop when every off-diagonal entry is negligible next to its
        // two diagonal companions.
        let mut converged = true;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let scale = m[(p, p)].abs() + m[(q, q)].abs();
                if apq.abs() <= f64::EPSILON * scale {
                    continue;
                }
                converged = false;

                // Classic Jacobi rotation angle, in the stable form of
                // t = tan θ from the smaller root of the quadratic.
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = if theta.abs() > 1e153 {
                    // Avoid overflow in θ²; the rotation is tiny.
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let tau = s / (1.0 + c);

                let app = m[(p, p)];
                let aqq = m[(q, q)];
                m[(p, p)] = app - t * apq;
                m[(q, q)] = aqq + t * apq;
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;
                for r in 0..n {
                    if r != p && r != q {
                        let arp = m[(r, p)];
                        let arq = m[(r, q)];
                        let new_rp = arp - s * (arq + tau * arp);
                        let new_rq = arq + s * (arp - tau * arq);
                        m[(r, p)] = new_rp;
                        m[(p, r)] = new_rp;
                        m[(r, q)] = new_rq;
                        m[(q, r)] = new_rq;
                    }
                }
                for r in 0..n {
                    let vrp = v[(r, p)];
                    let vrq = v[(r, q)];
                    v[(r, p)] = vrp - s * (vrq + tau * vrp);
                    v[(r, q)] = vrq + s * (vrp - tau * vrq);
                }
            }
        }
        if converged {
            break;
        }
    }

    SymEigen {
        values: m.diagonal(),
        vectors: v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use rand::Rng;

    fn reconstruction_error(a: &DMatrix<f64>, eig: &SymEigen) -> f64 {
        let recon =
            &eig.vectors * DMatrix::from_diagonal(&eig.values) * eig.vectors.transpose();
        (a - recon).norm() / a.norm().max(1.0)
    }

    fn orthogonality_error(eig: &SymEigen) -> f64 {
        let n = eig.vectors.nrows();
        (eig.vectors.transpose() * &eig.vectors - DMatrix::<f64>::identity(n, n)).norm()
    }

    #[test]
    fn decomposes_random_symmetric_matrices() {
        let mut rng = stream_rng(77, 0);
        for n in [1usize, 2, 3, 5, 8, 12] {
            for _ in 0..20 {
                let raw = DMatrix::from_fn(n, n, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
                let a = &raw + raw.transpose();
                let eig = sym_eigen(&a);
                assert!(
                    reconstruction_error(&a, &eig) < 1e-13,
                    "bad reconstruction at n = {n}"
                );
                assert!(orthogonality_error(&eig) < 1e-13);
            }
        }
    }

    #[test]
    fn handles_permuted_near_diagonal_matrices() {
        // Diagonal entries out of order with off-diagonal noise at the
        // last bit: the shape that breaks tridiagonalization-based
        // solvers' eigenpair ordering.
        let diag = [0.5368905384998431, 0.6069732912987036, 0.3258782172203832];
        let mut a = DMatrix::zeros(3, 3);
        for (i, d) in diag.iter().enumerate() {
            a[(i, i)] = *d;
        }
        a[(0, 1)] = 1.9e-16;
        a[(1, 0)] = 1.9e-16;
        a[(0, 2)] = -1.7e-16;
        a[(2, 0)] = -1.7e-16;
        let eig = sym_eigen(&a);
        assert!(reconstruction_error(&a, &eig) < 1e-14);
        // The inverse applied through the decomposition must invert.
        let u = DVector::from_column_slice(&[0.3, -1.2, 0.7]);
        let mut x = DVector::zeros(3);
        for j in 0..3 {
            let q = eig.vectors.column(j).clone_owned();
            x.axpy(q.dot(&u) / eig.values[j], &q, 1.0);
        }
        let back = &a * x;
        assert!((back - &u).norm() < 1e-12);
    }

    #[test]
    fn matches_known_two_by_two() {
        // [[2, 1], [1, 2]] has eigenvalues 1 and 3.
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let eig = sym_eigen(&a);
        let mut vals: Vec<f64> = eig.values.iter().cloned().collect();
        vals.sort_by(f64::total_cmp);
        assert!((vals[0] - 1.0).abs() < 1e-14);
        assert!((vals[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn rank_deficient_matrices_keep_a_clean_null_space() {
        // Rank-2 Gram matrix in four dimensions.
        let g = DMatrix::from_row_slice(
            4,
            2,
            &[1.0, 0.5, -0.3, 1.0, 2.0, -1.0, 0.0, 0.7],
        );
        let a = &g * g.transpose();
        let eig = sym_eigen(&a);
        assert!(reconstruction_error(&a, &eig) < 1e-13);
        let mut vals: Vec<f64> = eig.values.iter().cloned().collect();
        vals.sort_by(f64::total_cmp);
        assert!(vals[0].abs() < 1e-13);
        assert!(vals[1].abs() < 1e-13);
        assert!(vals[3] > 1.0);
    }
}
