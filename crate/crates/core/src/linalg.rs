//! Dense symmetric linear algebra: Cholesky, conjugate gradients and a cyclic
//! Jacobi eigensolver.
//!
//! The regularized particle update needs one solve against
//! `(1-ν)/N·K + ν·I` per iteration with `d` right-hand sides. Cholesky is the
//! default; CG is available when an approximate solve is acceptable.

use crate::error::{Error, Result};
use crate::matrix::{dot, Mat};

/// Largest matrix order accepted by [`sym_eigen`].
pub const DEFAULT_EIGEN_CAP: usize = 2000;

const JACOBI_MAX_SWEEPS: usize = 100;
const JACOBI_REL_TOL: f64 = 1e-12;

/// A square matrix that is symmetric by construction.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix(Mat);

impl SymMatrix {
    /// Wraps `m`, rejecting non-square or asymmetric input.
    pub fn new(m: Mat) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch {
                expected: m.rows(),
                found: m.cols(),
            });
        }
        if m.asymmetry() != 0.0 {
            return Err(Error::InvalidParameter(format!(
                "matrix is not symmetric (max asymmetry {:e})",
                m.asymmetry()
            )));
        }
        Ok(SymMatrix(m))
    }

    /// Builds a symmetric matrix from the upper triangle produced by `f(i, j)`, `i <= j`.
    pub fn from_upper(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = f(i, j);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        SymMatrix(m)
    }

    /// Symmetrizes `m` as `(m + mᵀ)/2`.
    pub fn symmetrize(m: &Mat) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch {
                expected: m.rows(),
                found: m.cols(),
            });
        }
        Ok(SymMatrix(m.symmetrized()))
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(Mat::identity(n))
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        SymMatrix(Mat::from_diag(diag))
    }

    pub(crate) fn from_mat_unchecked(m: Mat) -> Self {
        SymMatrix(m)
    }

    pub fn order(&self) -> usize {
        self.0.rows()
    }

    pub fn as_mat(&self) -> &Mat {
        &self.0
    }

    pub fn into_mat(self) -> Mat {
        self.0
    }

    /// `scale·self + shift·I`, used for the regularized system matrix.
    pub fn scaled_shifted(&self, scale: f64, shift: f64) -> SymMatrix {
        SymMatrix(self.0.scale(scale).add_diag(shift))
    }
}

impl std::ops::Index<(usize, usize)> for SymMatrix {
    type Output = f64;

    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.0[idx]
    }
}

/// Linear solver selection.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum SolveConfig {
    #[default]
    Cholesky,
    Cg {
        tol: f64,
        max_iter: usize,
        jacobi_precondition: bool,
    },
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SolveConfig::Cholesky => Ok(()),
            SolveConfig::Cg { tol, max_iter, .. } => {
                if !(tol > 0.0) {
                    return Err(Error::InvalidParameter(format!("cg tol must be > 0, got {tol}")));
                }
                if max_iter == 0 {
                    return Err(Error::InvalidParameter("cg max_iter must be >= 1".into()));
                }
                Ok(())
            }
        }
    }
}

/// Lower-triangular Cholesky factor `L` with `L·Lᵀ = A`.
#[derive(Clone, Debug)]
pub struct Cholesky {
    l: Mat,
}

impl Cholesky {
    pub fn factor(&self) -> &Mat {
        &self.l
    }

    pub fn into_factor(self) -> Mat {
        self.l
    }

    pub fn order(&self) -> usize {
        self.l.rows()
    }

    /// Solves `L·Y = B` in place. `B` must have `order()` rows.
    pub(crate) fn forward_in_place(&self, b: &mut Mat) {
        let n = self.order();
        debug_assert_eq!(b.rows(), n);
        let mut acc = vec![0.0; b.cols()];
        // one full row of right-hand sides at a time
        for i in 0..n {
            acc.copy_from_slice(b.row(i));
            let li = self.l.row(i);
            for (k, &lik) in li[..i].iter().enumerate() {
                if lik != 0.0 {
                    for (a, &y) in acc.iter_mut().zip(b.row(k)) {
                        *a -= lik * y;
                    }
                }
            }
            let inv = 1.0 / li[i];
            for (dst, a) in b.row_mut(i).iter_mut().zip(&acc) {
                *dst = a * inv;
            }
        }
    }

    /// Solves `A·X = B` for every column of `B` in place.
    pub fn solve_in_place(&self, b: &mut Mat) -> Result<()> {
        let n = self.order();
        if b.rows() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: b.rows(),
            });
        }
        self.forward_in_place(b);
        let mut acc = vec![0.0; b.cols()];
        // backward: Lᵀ·X = Y
        for i in (0..n).rev() {
            acc.copy_from_slice(b.row(i));
            for k in (i + 1)..n {
                let lki = self.l[(k, i)];
                if lki != 0.0 {
                    for (a, &x) in acc.iter_mut().zip(b.row(k)) {
                        *a -= lki * x;
                    }
                }
            }
            let inv = 1.0 / self.l[(i, i)];
            for (dst, a) in b.row_mut(i).iter_mut().zip(&acc) {
                *dst = a * inv;
            }
        }
        Ok(())
    }

    pub fn solve(&self, b: &Mat) -> Result<Mat> {
        let mut x = b.clone();
        self.solve_in_place(&mut x)?;
        Ok(x)
    }

    /// `ln det A = 2 Σ ln L_ii`.
    pub fn log_det(&self) -> f64 {
        2.0 * self.l.diag().iter().map(|v| v.ln()).sum::<f64>()
    }

    pub fn inverse(&self) -> Result<Mat> {
        self.solve(&Mat::identity(self.order()))
    }
}

/// Cholesky factorization in row-oriented (Banachiewicz) order.
pub fn cholesky(a: &SymMatrix) -> Result<Cholesky> {
    let n = a.order();
    let src = a.as_mat();
    let mut l = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let s = dot(&l.row(i)[..j], &l.row(j)[..j]);
            if i == j {
                let pivot = src[(i, i)] - s;
                if !(pivot > 0.0) || !pivot.is_finite() {
                    return Err(Error::NotSpd { index: i, pivot });
                }
                l[(i, i)] = pivot.sqrt();
            } else {
                l[(i, j)] = (src[(i, j)] - s) / l[(j, j)];
            }
        }
    }
    Ok(Cholesky { l })
}

/// Solves `A·X = B` for SPD `A` and an `n x m` right-hand side.
pub fn solve_spd(a: &SymMatrix, b: &Mat, cfg: &SolveConfig) -> Result<Mat> {
    if b.rows() != a.order() {
        return Err(Error::DimensionMismatch {
            expected: a.order(),
            found: b.rows(),
        });
    }
    cfg.validate()?;
    match *cfg {
        SolveConfig::Cholesky => cholesky(a)?.solve(b),
        SolveConfig::Cg {
            tol,
            max_iter,
            jacobi_precondition,
        } => {
            let mut x = Mat::zeros(b.rows(), b.cols());
            for c in 0..b.cols() {
                let col = conjugate_gradient(a, &b.col(c), tol, max_iter, jacobi_precondition)?;
                x.set_col(c, &col);
            }
            Ok(x)
        }
    }
}

/// Preconditioned conjugate gradients on a single right-hand side.
///
/// Stops when `‖r‖ ≤ tol·‖b‖`.
pub fn conjugate_gradient(
    a: &SymMatrix,
    b: &[f64],
    tol: f64,
    max_iter: usize,
    jacobi_precondition: bool,
) -> Result<Vec<f64>> {
    let n = a.order();
    let m = a.as_mat();
    let b_norm = dot(b, b).sqrt();
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok(x);
    }
    let inv_diag: Vec<f64> = if jacobi_precondition {
        let d = m.diag();
        if let Some(i) = d.iter().position(|&v| !(v > 0.0)) {
            return Err(Error::NotSpd { index: i, pivot: d[i] });
        }
        d.iter().map(|v| 1.0 / v).collect()
    } else {
        vec![1.0; n]
    };
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, b)| a * b).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut res = 1.0;
    for _ in 0..max_iter {
        for (i, out) in ap.iter_mut().enumerate() {
            *out = dot(m.row(i), &p);
        }
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::NotSpd { index: 0, pivot: pap });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        res = dot(&r, &r).sqrt() / b_norm;
        if res <= tol {
            return Ok(x);
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::MaxIterExceeded { residual: res })
}

/// Solves `(scale·Z·Zᵀ + shift·I)·X = B` through the Woodbury identity.
///
/// `Z` is `n x r` with `r` small; cost is `O(n r² + r³ + n r m)`. Used for
/// kernels with an exact finite feature map, where the Gram matrix is `Z·Zᵀ`.
pub fn solve_low_rank_shifted(z: &Mat, scale: f64, shift: f64, b: &Mat) -> Result<Mat> {
    if z.rows() != b.rows() {
        return Err(Error::DimensionMismatch {
            expected: z.rows(),
            found: b.rows(),
        });
    }
    if !(shift > 0.0) || scale < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "low-rank solve needs shift > 0 and scale >= 0 (got {shift}, {scale})"
        )));
    }
    if scale == 0.0 {
        return Ok(b.scale(1.0 / shift));
    }
    // inner = shift/scale·I + ZᵀZ
    let inner = SymMatrix::symmetrize(&z.tr_matmul(z)?.add_diag(shift / scale))?;
    let ztb = z.tr_matmul(b)?;
    let w = cholesky(&inner)?.solve(&ztb)?;
    let correction = z.matmul(&w)?;
    Ok(b.sub(&correction)?.scale(1.0 / shift))
}

/// Eigen-decomposition of a symmetric matrix.
#[derive(Clone, Debug)]
pub struct SymEigen {
    /// Ascending.
    pub values: Vec<f64>,
    /// Column `k` is the unit eigenvector for `values[k]`.
    pub vectors: Mat,
}

pub fn sym_eigen(a: &SymMatrix) -> Result<SymEigen> {
    sym_eigen_with_cap(a, DEFAULT_EIGEN_CAP)
}

/// Cyclic Jacobi eigensolver with row-cyclic rotation order.
///
/// Converges when the off-diagonal Frobenius norm drops to `1e-12·‖A‖_F`.
pub fn sym_eigen_with_cap(a: &SymMatrix, cap: usize) -> Result<SymEigen> {
    let n = a.order();
    if n > cap {
        return Err(Error::EigenCapExceeded { n, cap });
    }
    let mut m = a.as_mat().clone();
    let mut v = Mat::identity(n);
    let target = JACOBI_REL_TOL * m.frobenius();

    for _ in 0..JACOBI_MAX_SWEEPS {
        if off_diagonal_norm(&m) <= target {
            break;
        }
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
                rotate(&mut m, &mut v, p, q, c, s, t);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let diag = m.diag();
    order.sort_by(|&i, &j| diag[i].total_cmp(&diag[j]));
    let values = order.iter().map(|&i| diag[i]).collect();
    let vectors = Mat::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok(SymEigen { values, vectors })
}

fn off_diagonal_norm(m: &Mat) -> f64 {
    let mut s = 0.0;
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            if i != j {
                s += m[(i, j)] * m[(i, j)];
            }
        }
    }
    s.sqrt()
}

// Applies the rotation zeroing m[p][q]; t = tan(angle).
fn rotate(m: &mut Mat, v: &mut Mat, p: usize, q: usize, c: f64, s: f64, t: f64) {
    let n = m.rows();
    let apq = m[(p, q)];
    m[(p, p)] -= t * apq;
    m[(q, q)] += t * apq;
    m[(p, q)] = 0.0;
    m[(q, p)] = 0.0;
    for k in 0..n {
        if k == p || k == q {
            continue;
        }
        let akp = m[(k, p)];
        let akq = m[(k, q)];
        let new_kp = c * akp - s * akq;
        let new_kq = s * akp + c * akq;
        m[(k, p)] = new_kp;
        m[(p, k)] = new_kp;
        m[(k, q)] = new_kq;
        m[(q, k)] = new_kq;
    }
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}
