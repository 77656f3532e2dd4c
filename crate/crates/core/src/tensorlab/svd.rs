//! Thin singular value decomposition by one-sided (Hestenes) Jacobi rotations.
//!
//! Column pairs of a working copy are rotated until mutually orthogonal; the
//! column norms are then the singular values and the accumulated rotations
//! form `V`. Accuracy is close to machine precision for the small dense
//! matrices the simulator needs (classifier heads, test matrices up to 64×64).

use alloc::vec::Vec;

use super::matrix::{dot, Matrix};
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100;

/// `m = u · diag(sigma) · vᵀ` with `u: m×r`, `v: n×r`, `r = min(m, n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdResult {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub v: Matrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Matrix {
        let r = self.sigma.len();
        let (m, n) = (self.u.rows(), self.v.rows());
        Matrix::from_fn(m, n, |i, j| {
            (0..r)
                .map(|k| self.u[(i, k)] * self.sigma[k] * self.v[(j, k)])
                .sum()
        })
    }
}

pub fn svd(m: &Matrix) -> Result<SvdResult> {
    if m.rows() == 0 || m.cols() == 0 {
        return Err(Error::Empty("matrix"));
    }
    if !m.is_finite() {
        return Err(Error::NonFinite("svd input"));
    }
    if m.rows() >= m.cols() {
        Ok(jacobi_tall(m))
    } else {
        let t = jacobi_tall(&m.transpose());
        Ok(SvdResult {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
        })
    }
}

/// Requires `rows >= cols`.
fn jacobi_tall(a: &Matrix) -> SvdResult {
    let (m, n) = a.shape();
    // Column-major working copies: cols[j] is column j.
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| (0..m).map(|i| a[(i, j)]).collect()).collect();
    let mut vcols: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * libm::sqrt(alpha * beta) {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + libm::sqrt(1.0 + zeta * zeta));
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = c * t;
                rotate(&mut cols, p, q, c, s);
                rotate(&mut vcols, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut sigma: Vec<f64> = cols.iter().map(|c| libm::sqrt(dot(c, c))).collect();
    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps the result deterministic for repeated singular values.
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]));
    let cols: Vec<Vec<f64>> = order.iter().map(|&j| cols[j].clone()).collect();
    let vcols: Vec<Vec<f64>> = order.iter().map(|&j| vcols[j].clone()).collect();
    sigma = order.iter().map(|&j| sigma[j]).collect();

    let smax = sigma.first().copied().unwrap_or(0.0);
    let tiny = smax * (m.max(n) as f64) * f64::EPSILON;
    let mut ucols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut deficient = Vec::new();
    for (j, c) in cols.into_iter().enumerate() {
        if sigma[j] > tiny {
            let inv = 1.0 / sigma[j];
            ucols.push(c.into_iter().map(|v| v * inv).collect());
        } else {
            sigma[j] = 0.0;
            deficient.push(j);
            ucols.push(alloc::vec![0.0; m]);
        }
    }
    for &j in &deficient {
        ucols[j] = orthonormal_complement(&ucols, &deficient, j, m);
    }

    SvdResult {
        u: Matrix::from_fn(m, n, |i, j| ucols[j][i]),
        sigma,
        v: Matrix::from_fn(n, n, |i, j| vcols[j][i]),
    }
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let (cp, cq) = (&mut left[p], &mut right[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Unit vector orthogonal to every already-valid column (`j` and the
/// not-yet-filled deficient columns excluded).
fn orthonormal_complement(
    ucols: &[Vec<f64>],
    deficient: &[usize],
    j: usize,
    m: usize,
) -> Vec<f64> {
    let basis: Vec<&Vec<f64>> = ucols
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != j && (!deficient.contains(k) || *k < j))
        .map(|(_, c)| c)
        .collect();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for e in 0..m {
        let mut v = alloc::vec![0.0; m];
        v[e] = 1.0;
        // Two Gram-Schmidt passes.
        for _ in 0..2 {
            for b in &basis {
                let proj = dot(&v, b);
                for (x, y) in v.iter_mut().zip(b.iter()) {
                    *x -= proj * y;
                }
            }
        }
        let norm = libm::sqrt(dot(&v, &v));
        if best.as_ref().map_or(true, |(bn, _)| norm > *bn) {
            best = Some((norm, v));
        }
    }
    let (norm, v) = best.expect("m >= 1");
    v.into_iter().map(|x| x / norm).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn orthonormality_error(q: &Matrix) -> f64 {
        let qtq = q.transpose().matmul(q).unwrap();
        qtq.max_abs_diff(&Matrix::identity(q.cols())).unwrap()
    }

    #[test]
    fn diagonal_values() {
        let s = svd(&Matrix::diag(&[3.0, 1.0])).unwrap();
        assert_eq!(s.sigma, vec![3.0, 1.0]);
        let s = svd(&Matrix::diag(&[1.0, 3.0])).unwrap();
        assert_eq!(s.sigma, vec![3.0, 1.0]);
    }

    #[test]
    fn identity_four() {
        let s = svd(&Matrix::identity(4)).unwrap();
        assert_eq!(s.sigma, vec![1.0; 4]);
    }

    #[test]
    fn rank_deficient_completes_basis() {
        let m = Matrix::new(3, 2, vec![1., 2., 2., 4., 3., 6.]).unwrap();
        let s = svd(&m).unwrap();
        assert!(s.sigma[1].abs() < 1e-12);
        assert!(orthonormality_error(&s.u) < 1e-12);
        assert!(orthonormality_error(&s.v) < 1e-12);
        assert!(s.reconstruct().max_abs_diff(&m).unwrap() < 1e-12);

        let z = svd(&Matrix::zeros(3, 4)).unwrap();
        assert_eq!(z.sigma, vec![0.0; 3]);
        assert!(orthonormality_error(&z.u) < 1e-12);
    }

    #[test]
    fn wide_matrix() {
        let m = Matrix::new(2, 3, vec![1., 0., 2., -1., 3., 0.5]).unwrap();
        let s = svd(&m).unwrap();
        assert_eq!((s.u.rows(), s.u.cols(), s.v.rows(), s.v.cols()), (2, 2, 3, 2));
        assert!(s.reconstruct().max_abs_diff(&m).unwrap() < 1e-13);
    }

    #[test]
    fn rejects_non_finite() {
        let mut m = Matrix::zeros(2, 2);
        m[(0, 1)] = f64::INFINITY;
        assert_eq!(svd(&m), Err(Error::NonFinite("svd input")));
    }
}
