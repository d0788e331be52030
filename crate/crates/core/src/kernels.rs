//! Kernel evaluation, gradients, Gram assembly and bandwidth selection.
//!
//! Two families are supported:
//!
//! * Gaussian: `k(x, y) = exp(-‖x - y‖² / γ)`
//! * linear: `k(x, y) = ⟨x, y⟩ + 1`

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::SymMatrix;
use crate::matrix::{dot, sq_dist, Mat};

// Gram matrices below this order are assembled on the calling thread.
#[cfg(feature = "parallel")]
const PARALLEL_GRAM_MIN: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KernelSpec {
    Gaussian { bandwidth: f64 },
    Linear,
}

impl KernelSpec {
    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        let spec = KernelSpec::Gaussian { bandwidth };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Gaussian { bandwidth } if !(bandwidth > 0.0 && bandwidth.is_finite()) => Err(
                Error::InvalidParameter(format!("gaussian bandwidth must be positive, got {bandwidth}")),
            ),
            _ => Ok(()),
        }
    }

    pub fn bandwidth(&self) -> Option<f64> {
        match *self {
            KernelSpec::Gaussian { bandwidth } => Some(bandwidth),
            KernelSpec::Linear => None,
        }
    }

    /// Same family with a new bandwidth; the linear kernel is returned unchanged.
    pub fn with_bandwidth(&self, bandwidth: f64) -> Result<Self> {
        match self {
            KernelSpec::Gaussian { .. } => KernelSpec::gaussian(bandwidth),
            KernelSpec::Linear => Ok(KernelSpec::Linear),
        }
    }

    /// `k(x, y)` without dimension checks.
    #[inline]
    pub(crate) fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        match *self {
            KernelSpec::Gaussian { bandwidth } => (-sq_dist(x, y) / bandwidth).exp(),
            KernelSpec::Linear => dot(x, y) + 1.0,
        }
    }

    /// Writes `∇ₓ k(x, y)` into `out`; `kxy` must equal `k(x, y)`.
    #[inline]
    pub(crate) fn grad1_into(&self, x: &[f64], y: &[f64], kxy: f64, out: &mut [f64]) {
        match *self {
            KernelSpec::Gaussian { bandwidth } => {
                let c = -2.0 / bandwidth * kxy;
                for ((o, a), b) in out.iter_mut().zip(x).zip(y) {
                    *o = c * (a - b);
                }
            }
            KernelSpec::Linear => out.copy_from_slice(y),
        }
    }

    /// `tr(∇ₓ∇ᵧ k(x, y))`; `kxy` must equal `k(x, y)`.
    #[inline]
    pub(crate) fn cross_trace(&self, x: &[f64], y: &[f64], kxy: f64) -> f64 {
        let d = x.len() as f64;
        match *self {
            KernelSpec::Gaussian { bandwidth } => {
                (2.0 * d / bandwidth - 4.0 * sq_dist(x, y) / (bandwidth * bandwidth)) * kxy
            }
            KernelSpec::Linear => d,
        }
    }
}

fn check_dims(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    Ok(())
}

pub fn kernel_eval(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    spec.validate()?;
    check_dims(x, y)?;
    Ok(spec.value(x, y))
}

/// Gradient in the first argument, `∇ₓ k(x, y)`.
///
/// The gradient in the second argument is `kernel_grad1(spec, y, x)` for the
/// Gaussian kernel and `x` for the linear kernel.
pub fn kernel_grad1(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    spec.validate()?;
    check_dims(x, y)?;
    let mut out = vec![0.0; x.len()];
    spec.grad1_into(x, y, spec.value(x, y), &mut out);
    Ok(out)
}

/// Dense Gram matrix of an ensemble.
#[derive(Clone, Debug, PartialEq)]
pub struct GramMatrix(SymMatrix);

impl GramMatrix {
    pub fn n(&self) -> usize {
        self.0.order()
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn as_sym(&self) -> &SymMatrix {
        &self.0
    }

    pub fn as_mat(&self) -> &Mat {
        self.0.as_mat()
    }

    pub fn into_sym(self) -> SymMatrix {
        self.0
    }
}

/// Assembles `K_ij = k(x_i, x_j)`, evaluating each unordered pair once.
pub fn gram(spec: &KernelSpec, positions: &Mat) -> Result<GramMatrix> {
    spec.validate()?;
    let n = positions.rows();
    if n == 0 {
        return Err(Error::InsufficientParticles { required: 1, found: 0 });
    }
    let mut k = Mat::zeros(n, n);
    let fill_row = |i: usize, row: &mut [f64]| {
        let xi = positions.row(i);
        for (j, slot) in row.iter_mut().enumerate().skip(i) {
            *slot = spec.value(xi, positions.row(j));
        }
    };
    #[cfg(feature = "parallel")]
    let filled = n >= PARALLEL_GRAM_MIN && {
        k.as_mut_slice()
            .par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, row)| fill_row(i, row));
        true
    };
    #[cfg(not(feature = "parallel"))]
    let filled = false;
    if !filled {
        for (i, row) in k.as_mut_slice().chunks_mut(n).enumerate() {
            fill_row(i, row);
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            k[(j, i)] = k[(i, j)];
        }
    }
    Ok(GramMatrix(SymMatrix::from_mat_unchecked(k)))
}

/// Median-heuristic bandwidth `γ = med² / ln N`.
///
/// `med` is the median of the `N(N-1)/2` pairwise distances (the mean of the
/// two central values when the count is even).
pub fn median_heuristic(positions: &Mat) -> Result<f64> {
    let n = positions.rows();
    if n < 2 {
        return Err(Error::InsufficientParticles { required: 2, found: n });
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            dists.push(sq_dist(positions.row(i), positions.row(j)).sqrt());
        }
    }
    let med = median_in_place(&mut dists);
    if !(med > 0.0) {
        return Err(Error::DegenerateEnsemble);
    }
    Ok(med * med / (n as f64).ln())
}

fn median_in_place(v: &mut [f64]) -> f64 {
    let m = v.len();
    let mid = m / 2;
    let (lower, upper, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if m % 2 == 1 {
        upper
    } else {
        let lower = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}
