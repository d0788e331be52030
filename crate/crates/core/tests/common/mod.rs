//! Reference implementations shared by the integration tests and the
//! acceptance suite. Nothing here calls into the crate's kernels, scores or
//! solvers; linear algebra goes through nalgebra.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

#[derive(Clone, Copy, Debug)]
pub enum RefKernel {
    Gaussian(f64),
    Linear,
}

impl RefKernel {
    pub fn k(&self, x: &[f64], y: &[f64]) -> f64 {
        match *self {
            RefKernel::Gaussian(g) => {
                let r2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (-r2 / g).exp()
            }
            RefKernel::Linear => x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() + 1.0,
        }
    }

    /// `∂k/∂x_m` at `(x, y)`.
    pub fn d1(&self, x: &[f64], y: &[f64], m: usize) -> f64 {
        match *self {
            RefKernel::Gaussian(g) => -2.0 / g * (x[m] - y[m]) * self.k(x, y),
            RefKernel::Linear => y[m],
        }
    }

    /// `∂²k/∂x_m∂y_n` at `(x, y)`.
    pub fn d12(&self, x: &[f64], y: &[f64], m: usize, n: usize) -> f64 {
        match *self {
            RefKernel::Gaussian(g) => {
                let k = self.k(x, y);
                let delta = if m == n { 1.0 } else { 0.0 };
                2.0 / g * delta * k - 4.0 / (g * g) * (x[m] - y[m]) * (x[n] - y[n]) * k
            }
            RefKernel::Linear => {
                if m == n {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Centred or shifted Gaussian `N(mean, cov)` with score `∇V = cov⁻¹(x − mean)`.
#[derive(Clone, Debug)]
pub struct RefGaussian {
    pub mean: Vec<f64>,
    pub cov: DMatrix<f64>,
    pub prec: DMatrix<f64>,
}

impl RefGaussian {
    pub fn new(mean: Vec<f64>, cov: DMatrix<f64>) -> Self {
        let prec = cov.clone().try_inverse().expect("covariance must be invertible");
        RefGaussian { mean, cov, prec }
    }

    pub fn grad_v(&self, x: &[f64]) -> Vec<f64> {
        let diff = DVector::from_iterator(x.len(), x.iter().zip(&self.mean).map(|(a, m)| a - m));
        (&self.prec * diff).iter().copied().collect()
    }

    /// Random SPD covariance `AAᵀ + 0.5·I` and a random mean.
    pub fn random<R: Rng>(rng: &mut R, d: usize) -> Self {
        let a = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let cov = &a * a.transpose() + DMatrix::identity(d, d) * 0.5;
        let cov = (&cov + cov.transpose()) * 0.5;
        let mean = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        RefGaussian::new(mean, cov)
    }
}

/// Two-pass double-loop drift `v_i = (1/N) Σ_j [k(x_j,x_i)∇V(x_j) − ∂₁k(x_j,x_i)]`.
pub fn brute_drift(x: &[Vec<f64>], kernel: RefKernel, grad_v: &dyn Fn(&[f64]) -> Vec<f64>) -> Vec<Vec<f64>> {
    let n = x.len();
    let d = x[0].len();
    let scores: Vec<Vec<f64>> = x.iter().map(|p| grad_v(p)).collect();
    (0..n)
        .map(|i| {
            (0..d)
                .map(|m| {
                    (0..n)
                        .map(|j| kernel.k(&x[j], &x[i]) * scores[j][m] - kernel.d1(&x[j], &x[i], m))
                        .sum::<f64>()
                        / n as f64
                })
                .collect()
        })
        .collect()
}

/// `⟨β, ((1−ν)ι*ι + νI)⁻¹ β⟩` evaluated on the span of
/// `{k(x_i,·)} ∪ {∂_{1,m}k(x_j,·)}`.
///
/// `β_l = (1/N) Σ_j [k(x_j,·)∂_lV(x_j) − ∂_{1,l}k(x_j,·)]` for each output
/// coordinate `l`, and `ι*ι f = (1/N) Σ_i f(x_i) k(x_i,·)` maps the span
/// into itself. With coefficient vectors `c` and Gram matrix `G`,
/// `f(x_i) = (Gc)_i`, so the operator is `P = (1−ν)/N·[G_k; 0] + νI` and the
/// quadratic form is `Σ_l a_lᵀ G P⁻¹ a_l`.
pub fn augmented_reg_ksd(x: &[Vec<f64>], kernel: RefKernel, grad_v: &dyn Fn(&[f64]) -> Vec<f64>, nu: f64) -> f64 {
    let n = x.len();
    let d = x[0].len();
    let size = n + n * d;
    // basis index: i < n is k(x_i,·); n + j·d + m is ∂_{1,m}k(x_j,·)
    let split = |a: usize| {
        if a < n {
            (a, None)
        } else {
            ((a - n) / d, Some((a - n) % d))
        }
    };
    let g = DMatrix::from_fn(size, size, |a, b| match (split(a), split(b)) {
        ((i, None), (j, None)) => kernel.k(&x[i], &x[j]),
        // ⟨k(x_i,·), ∂_{1,m}k(x_j,·)⟩ = ∂_m k(x_i, ·) at x_j = ∂_{2,m}k(x_i, x_j)
        ((i, None), (j, Some(m))) => kernel.d1(&x[j], &x[i], m),
        ((i, Some(m)), (j, None)) => kernel.d1(&x[i], &x[j], m),
        ((i, Some(m)), (j, Some(mm))) => kernel.d12(&x[i], &x[j], m, mm),
    });
    let mut p = DMatrix::identity(size, size) * nu;
    for i in 0..n {
        for b in 0..size {
            p[(i, b)] += (1.0 - nu) / n as f64 * g[(i, b)];
        }
    }
    let lu = p.lu();
    let scores: Vec<Vec<f64>> = x.iter().map(|p| grad_v(p)).collect();
    (0..d)
        .map(|l| {
            let mut a = DVector::zeros(size);
            for j in 0..n {
                a[j] = scores[j][l] / n as f64;
                a[n + j * d + l] = -1.0 / n as f64;
            }
            let c = lu.solve(&a).expect("regularized operator is invertible");
            a.dot(&(&g * c))
        })
        .sum()
}

/// Scalar covariance recursion `σ' = σ(1 + hA(1 − σ/q))²`, `A = 1/((1−ν)σ + ν)`.
pub fn scalar_recursion(sigma: f64, q: f64, nu: f64, h: f64) -> f64 {
    let a = 1.0 / ((1.0 - nu) * sigma + nu);
    let f = 1.0 + h * a * (1.0 - sigma / q);
    sigma * f * f
}

pub fn rel_frobenius(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

pub fn random_ensemble<R: Rng>(rng: &mut R, n: usize, d: usize, spread: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| spread * rng.sample::<f64, _>(StandardNormal)).collect())
        .collect()
}
