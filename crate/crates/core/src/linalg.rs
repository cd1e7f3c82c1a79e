//! Small dense routines for `N x N` matrices with `N` known at compile time.
//!
//! The filter needs a lower-triangular square root, SPD solves and a
//! symmetric eigendecomposition for PSD repair; the stiff integrator needs a
//! pivoted LU. Sizes here never exceed 7, so straightforward algorithms are
//! used throughout.

use nalgebra::{SMatrix, SVector};

use crate::error::{Error, Result};
use crate::scalar::{c, Real};

/// LU factorisation with partial pivoting, stored in place.
#[derive(Debug, Clone)]
pub struct Lu<T: Real, const N: usize> {
    lu: SMatrix<T, N, N>,
    perm: [usize; N],
}

impl<T: Real, const N: usize> Lu<T, N> {
    /// `None` when a pivot is exactly zero or not finite.
    pub fn new(mut a: SMatrix<T, N, N>) -> Option<Self> {
        let mut perm = [0usize; N];
        for (i, p) in perm.iter_mut().enumerate() {
            *p = i;
        }
        for k in 0..N {
            let mut piv = k;
            let mut best = a[(k, k)].abs();
            for r in (k + 1)..N {
                let v = a[(r, k)].abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if best == T::zero() || !best.is_finite_val() {
                return None;
            }
            if piv != k {
                a.swap_rows(k, piv);
                perm.swap(k, piv);
            }
            let d = a[(k, k)];
            for r in (k + 1)..N {
                let l = a[(r, k)] / d;
                a[(r, k)] = l;
                for col in (k + 1)..N {
                    let u = a[(k, col)];
                    a[(r, col)] -= l * u;
                }
            }
        }
        Some(Self { lu: a, perm })
    }

    pub fn solve(&self, b: &SVector<T, N>) -> SVector<T, N> {
        let mut x = SVector::<T, N>::from_fn(|i, _| b[self.perm[i]]);
        for i in 0..N {
            for k in 0..i {
                let l = self.lu[(i, k)];
                let xk = x[k];
                x[i] -= l * xk;
            }
        }
        for i in (0..N).rev() {
            for k in (i + 1)..N {
                let u = self.lu[(i, k)];
                let xk = x[k];
                x[i] -= u * xk;
            }
            x[i] /= self.lu[(i, i)];
        }
        x
    }
}

pub fn symmetrize<T: Real, const N: usize>(a: &SMatrix<T, N, N>) -> SMatrix<T, N, N> {
    (a + a.transpose()) * c::<T>(0.5)
}

/// Plain Cholesky `A = L L^T`; `None` unless every pivot is positive.
pub fn cholesky<T: Real, const N: usize>(a: &SMatrix<T, N, N>) -> Option<SMatrix<T, N, N>> {
    let mut l = SMatrix::<T, N, N>::zeros();
    for j in 0..N {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > T::zero()) || !d.is_finite_val() {
            return None;
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..N {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Some(l)
}

/// Lower-triangular factor of the symmetrised `a`, adding diagonal jitter
/// `1e-12 * max(1, tr/N)` escalating by 10x up to `1e-8 * tr/N` when the
/// plain factorisation fails.
pub fn cholesky_jittered<T: Real, const N: usize>(a: &SMatrix<T, N, N>) -> Result<SMatrix<T, N, N>> {
    let sym = symmetrize(a);
    if let Some(l) = cholesky(&sym) {
        return Ok(l);
    }
    let mean_diag = sym.trace() / c(N as f64);
    let mut jitter = c::<T>(1e-12) * mean_diag.max(T::one());
    let ceiling = c::<T>(1e-8) * mean_diag.abs();
    loop {
        let trial = sym + SMatrix::<T, N, N>::identity() * jitter;
        if let Some(l) = cholesky(&trial) {
            return Ok(l);
        }
        jitter *= c(10.0);
        if jitter > ceiling {
            return Err(Error::Covariance(format!(
                "Cholesky failed after jitter up to {:e} (trace {:e})",
                ceiling.as_f64(),
                sym.trace().as_f64()
            )));
        }
    }
}

/// Solves `A x = b` for symmetric positive definite `A`.
pub fn spd_solve<T: Real, const N: usize>(a: &SMatrix<T, N, N>, b: &SVector<T, N>) -> Option<SVector<T, N>> {
    let l = cholesky(&symmetrize(a))?;
    let mut y = *b;
    for i in 0..N {
        for k in 0..i {
            let v = l[(i, k)] * y[k];
            y[i] -= v;
        }
        y[i] /= l[(i, i)];
    }
    for i in (0..N).rev() {
        for k in (i + 1)..N {
            let v = l[(k, i)] * y[k];
            y[i] -= v;
        }
        y[i] /= l[(i, i)];
    }
    Some(y)
}

/// Inverse of a symmetric positive definite matrix via Cholesky solves.
pub fn spd_inverse<T: Real, const N: usize>(a: &SMatrix<T, N, N>) -> Option<SMatrix<T, N, N>> {
    let mut inv = SMatrix::<T, N, N>::zeros();
    for j in 0..N {
        let mut e = SVector::<T, N>::zeros();
        e[j] = T::one();
        inv.set_column(j, &spd_solve(a, &e)?);
    }
    Some(symmetrize(&inv))
}

/// Eigenvalues (ascending) and matching eigenvector columns of a symmetric
/// matrix by cyclic Jacobi rotations.
pub fn symmetric_eigen<T: Real, const N: usize>(a: &SMatrix<T, N, N>) -> (SVector<T, N>, SMatrix<T, N, N>) {
    let mut m = symmetrize(a);
    let mut v = SMatrix::<T, N, N>::identity();
    let eps = T::default_epsilon();
    for _sweep in 0..100 {
        let mut off = T::zero();
        let mut diag = T::zero();
        for i in 0..N {
            diag += m[(i, i)] * m[(i, i)];
            for j in (i + 1)..N {
                off += m[(i, j)] * m[(i, j)];
            }
        }
        if off <= eps * eps * diag || off == T::zero() {
            break;
        }
        for p in 0..N {
            for q in (p + 1)..N {
                let apq = m[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (c::<T>(2.0) * apq);
                let sign = if theta >= T::zero() { T::one() } else { -T::one() };
                let t = sign / (theta.abs() + (theta * theta + T::one()).sqrt());
                let cs = T::one() / (t * t + T::one()).sqrt();
                let sn = t * cs;
                for k in 0..N {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = cs * mkp - sn * mkq;
                    m[(k, q)] = sn * mkp + cs * mkq;
                }
                for k in 0..N {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = cs * mpk - sn * mqk;
                    m[(q, k)] = sn * mpk + cs * mqk;
                }
                for k in 0..N {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = cs * vkp - sn * vkq;
                    v[(k, q)] = sn * vkp + cs * vkq;
                }
            }
        }
    }
    // selection sort keeps the column pairing explicit
    let mut vals = SVector::<T, N>::from_fn(|i, _| m[(i, i)]);
    for i in 0..N {
        let mut best = i;
        for j in (i + 1)..N {
            if vals[j] < vals[best] {
                best = j;
            }
        }
        if best != i {
            vals.swap_rows(i, best);
            v.swap_columns(i, best);
        }
    }
    (vals, v)
}

/// Symmetrises and raises every eigenvalue to at least `floor`.
///
/// Returns the input symmetrised but otherwise untouched when no eigenvalue
/// is below the floor.
pub fn floor_eigenvalues<T: Real, const N: usize>(a: &SMatrix<T, N, N>, floor: T) -> SMatrix<T, N, N> {
    let sym = symmetrize(a);
    let (vals, vecs) = symmetric_eigen(&sym);
    if vals.iter().all(|&l| l >= floor) {
        return sym;
    }
    let d = SMatrix::<T, N, N>::from_diagonal(&vals.map(|l| l.max(floor)));
    symmetrize(&(vecs * d * vecs.transpose()))
}

/// Spectral condition number of a symmetric matrix; infinite when the
/// smallest eigenvalue is not positive.
pub fn condition_number<T: Real, const N: usize>(a: &SMatrix<T, N, N>) -> T {
    let (vals, _) = symmetric_eigen(a);
    let lo = vals[0];
    let hi = vals[N - 1];
    if lo <= T::zero() {
        T::max_value().unwrap()
    } else {
        hi / lo
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3, Vector3};

    fn spd3() -> Matrix3<f64> {
        Matrix3::new(4.0, 1.0, 0.5, 1.0, 3.0, -0.2, 0.5, -0.2, 2.0)
    }

    #[test]
    fn lu_solves_with_pivoting() {
        let a = Matrix3::new(0.0, 2.0, 1.0, 1.0, 1.0, 0.0, 3.0, 0.0, 1.0);
        let b = Vector3::new(1.0, 2.0, 3.0);
        let x = Lu::new(a).unwrap().solve(&b);
        assert!((a * x - b).norm() < 1e-14);
        assert!(Lu::new(Matrix3::<f64>::zeros()).is_none());
    }

    #[test]
    fn cholesky_reconstructs() {
        let a = spd3();
        let l = cholesky(&a).unwrap();
        assert!((l * l.transpose() - a).norm() < 1e-14);
        assert_eq!(l[(0, 1)], 0.0);
    }

    #[test]
    fn jitter_rescues_semidefinite() {
        let v = Vector3::new(1.0, 2.0, 3.0);
        let a = v * v.transpose();
        assert!(cholesky(&a).is_none());
        let l = cholesky_jittered(&a).unwrap();
        assert!((l * l.transpose() - a).norm() < 1e-6);
        let bad = Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, 1.0));
        assert!(matches!(cholesky_jittered(&bad), Err(Error::Covariance(_))));
    }

    #[test]
    fn spd_inverse_is_inverse() {
        let a = spd3();
        let inv = spd_inverse(&a).unwrap();
        assert!((a * inv - Matrix3::identity()).norm() < 1e-14);
    }

    #[test]
    fn eigen_decomposition_reconstructs() {
        let a = spd3();
        let (vals, vecs) = symmetric_eigen(&a);
        assert!(vals[0] <= vals[1] && vals[1] <= vals[2]);
        let rec = vecs * Matrix3::from_diagonal(&vals) * vecs.transpose();
        assert!((rec - a).norm() < 1e-13);
        assert!((vecs.transpose() * vecs - Matrix3::identity()).norm() < 1e-13);
    }

    #[test]
    fn flooring_removes_negative_eigenvalues() {
        let a = Matrix3::new(1.0, 2.0, 0.0, 2.0, 1.0, 0.0, 0.0, 0.0, 3.0);
        let f = floor_eigenvalues(&a, 0.0);
        let (vals, _) = symmetric_eigen(&f);
        assert!(vals[0] >= -1e-15);
        assert_eq!(f, f.transpose());
        assert_eq!(floor_eigenvalues(&spd3(), 0.0), spd3());
    }

    #[test]
    fn condition_of_diagonal() {
        let a = Matrix3::from_diagonal(&Vector3::new(1.0_f64, 10.0, 100.0));
        assert!((condition_number(&a) - 100.0).abs() < 1e-12);
    }
}
