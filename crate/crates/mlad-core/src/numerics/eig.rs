//! Symmetric eigendecomposition by the cyclic Jacobi rotation method.

use super::mat::Mat;
use crate::error::{MladError, Result};

const SYMMETRY_TOL: f64 = 1e-10;
const OFFDIAG_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 100;

/// Eigendecomposition of a symmetric matrix: columns of `eigvecs` are the
/// eigenvectors, `eigvals` sorted descending. Sign convention: each
/// eigenvector's largest-magnitude entry is nonnegative.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub eigvecs: Mat,
    pub eigvals: Vec<f64>,
}

impl SymEig {
    pub fn dim(&self) -> usize {
        self.eigvals.len()
    }

    /// `U diag(l) U^T`.
    pub fn reconstruct(&self) -> Result<Mat> {
        let n = self.dim();
        let mut ul = self.eigvecs.clone();
        for i in 0..n {
            for j in 0..n {
                *ul.at_mut(i, j) *= self.eigvals[j];
            }
        }
        ul.matmul_nt(&self.eigvecs)
    }

    /// `U^T v`: project onto the eigenbasis.
    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.eigvecs.matvec_t(v)
    }

    /// `U w`: map eigenbasis coordinates back.
    pub fn unproject(&self, w: &[f64]) -> Result<Vec<f64>> {
        self.eigvecs.matvec(w)
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// Converges when the off-diagonal Frobenius norm drops below 1e-12 times
/// the matrix scale; errors if the input is not square/symmetric within
/// 1e-10 or if 100 sweeps do not converge.
pub fn sym_eig(a: &Mat) -> Result<SymEig> {
    let n = a.rows();
    if n != a.cols() {
        return Err(MladError::validation(format!(
            "sym_eig needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    let scale = a.data().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            if (a.at(i, j) - a.at(j, i)).abs() > SYMMETRY_TOL * scale {
                return Err(MladError::validation(format!(
                    "sym_eig input not symmetric at ({i},{j}): {} vs {}",
                    a.at(i, j),
                    a.at(j, i)
                )));
            }
        }
    }

    let mut m = a.clone();
    // enforce exact symmetry so rotations stay clean
    for i in 0..n {
        for j in (i + 1)..n {
            let s = 0.5 * (m.at(i, j) + m.at(j, i));
            *m.at_mut(i, j) = s;
            *m.at_mut(j, i) = s;
        }
    }
    let mut v = Mat::identity(n);

    let off = |m: &Mat| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m.at(i, j) * m.at(i, j);
                }
            }
        }
        s.sqrt()
    };

    let mut converged = n <= 1 || off(&m) < OFFDIAG_TOL * scale;
    for _sweep in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let apq = m.at(p, q);
                if apq.abs() < OFFDIAG_TOL * scale * 1e-3 {
                    continue;
                }
                let app = m.at(p, p);
                let aqq = m.at(q, q);
                let theta = 0.5 * (aqq - app) / apq;
                let t = if theta.abs() > 1e12 {
                    // rotation angle collapses; avoid overflow in theta^2
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let tau = s / (1.0 + c);

                *m.at_mut(p, p) = app - t * apq;
                *m.at_mut(q, q) = aqq + t * apq;
                *m.at_mut(p, q) = 0.0;
                *m.at_mut(q, p) = 0.0;
                for k in 0..n {
                    if k != p && k != q {
                        let akp = m.at(k, p);
                        let akq = m.at(k, q);
                        let new_kp = akp - s * (akq + tau * akp);
                        let new_kq = akq + s * (akp - tau * akq);
                        *m.at_mut(k, p) = new_kp;
                        *m.at_mut(p, k) = new_kp;
                        *m.at_mut(k, q) = new_kq;
                        *m.at_mut(q, k) = new_kq;
                    }
                }
                for k in 0..n {
                    let vkp = m_get(&v, k, p);
                    let vkq = m_get(&v, k, q);
                    *v.at_mut(k, p) = vkp - s * (vkq + tau * vkp);
                    *v.at_mut(k, q) = vkq + s * (vkp - tau * vkq);
                }
            }
        }
        converged = off(&m) < OFFDIAG_TOL * scale;
    }
    if !converged {
        return Err(MladError::numerical(format!(
            "Jacobi did not converge in {MAX_SWEEPS} sweeps (off-diagonal {})",
            off(&m)
        )));
    }

    // sort eigenpairs descending
    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<f64> = (0..n).map(|i| m.at(i, i)).collect();
    order.sort_by(|&i, &j| diag[j].partial_cmp(&diag[i]).unwrap());
    let eigvals: Vec<f64> = order.iter().map(|&i| diag[i]).collect();
    let mut eigvecs = Mat::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        // sign convention: largest-magnitude entry nonnegative
        let mut best = 0usize;
        let mut best_abs = 0.0;
        for k in 0..n {
            let a = v.at(k, src).abs();
            if a > best_abs {
                best_abs = a;
                best = k;
            }
        }
        let flip = if v.at(best, src) < 0.0 { -1.0 } else { 1.0 };
        for k in 0..n {
            *eigvecs.at_mut(k, col) = flip * v.at(k, src);
        }
    }

    Ok(SymEig { eigvecs, eigvals })
}

#[inline]
fn m_get(m: &Mat, r: usize, c: usize) -> f64 {
    m.at(r, c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::Rng;

    fn random_symmetric(rng: &mut Rng, n: usize) -> Mat {
        let mut a = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = rng.normal();
                *a.at_mut(i, j) = v;
                *a.at_mut(j, i) = v;
            }
        }
        a
    }

    fn max_abs(m: &Mat) -> f64 {
        m.data().iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
    }

    #[test]
    fn identity_eig() {
        let e = sym_eig(&Mat::identity(4)).unwrap();
        for v in &e.eigvals {
            assert!((v - 1.0).abs() < 1e-12);
        }
        let rec = e.reconstruct().unwrap();
        assert!(max_abs(&rec.sub(&Mat::identity(4)).unwrap()) < 1e-12);
    }

    #[test]
    fn diagonal_case_axis_aligned() {
        let a = Mat::from_rows(&[vec![3.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let e = sym_eig(&a).unwrap();
        assert!((e.eigvals[0] - 3.0).abs() < 1e-12);
        assert!((e.eigvals[1] - 1.0).abs() < 1e-12);
        assert!((e.eigvecs.at(0, 0).abs() - 1.0).abs() < 1e-12);
        assert!((e.eigvecs.at(1, 1).abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reconstruction_and_orthonormality_random_16() {
        let mut rng = Rng::seed_from(99);
        let a = random_symmetric(&mut rng, 16);
        let e = sym_eig(&a).unwrap();
        let rec = e.reconstruct().unwrap();
        assert!(max_abs(&rec.sub(&a).unwrap()) < 1e-8);
        let gram = e.eigvecs.matmul_tn(&e.eigvecs).unwrap();
        assert!(max_abs(&gram.sub(&Mat::identity(16)).unwrap()) < 1e-8);
    }

    #[test]
    fn eigvals_sorted_descending_and_signs_fixed() {
        let mut rng = Rng::seed_from(3);
        let a = random_symmetric(&mut rng, 8);
        let e = sym_eig(&a).unwrap();
        for w in e.eigvals.windows(2) {
            assert!(w[0] >= w[1]);
        }
        for col in 0..8 {
            let mut best = 0;
            let mut best_abs = 0.0;
            for k in 0..8 {
                if e.eigvecs.at(k, col).abs() > best_abs {
                    best_abs = e.eigvecs.at(k, col).abs();
                    best = k;
                }
            }
            assert!(e.eigvecs.at(best, col) >= 0.0);
        }
    }

    #[test]
    fn non_symmetric_rejected() {
        let a = Mat::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(sym_eig(&a).is_err());
    }
}
