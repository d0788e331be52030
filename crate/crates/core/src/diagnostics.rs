//! Stein-discrepancy and Fisher-type functionals.
//!
//! # Regularized Stein–Fisher information at an empirical measure
//!
//! Write `ι: H → L₂(ρ̂)` for the inclusion of the RKHS into `L₂` of the
//! empirical measure, and `β = ι*∇log(ρ̂/π) ∈ Hᵈ`. Integrating by parts,
//! `β = (1/N) Σ_j [k(x_j, ·)∇V(x_j) − ∇₁k(x_j, ·)]`, so `ιβ` is exactly the
//! particle drift `v` and `‖β‖²` is the V-statistic KSD. The push-through
//! identity
//!
//! ```text
//! ((1−ν)ι*ι + νI)⁻¹ = (1/ν)·(I − (1−ν)·ι*((1−ν)ιι* + νI)⁻¹ι)
//! ```
//!
//! with `ιι* = K/N` on `L₂(ρ̂)` gives
//!
//! ```text
//! ⟨β, ((1−ν)ι*ι + νI)⁻¹β⟩ = (1/ν)·(KSD² − (1−ν)·(1/N)·Σ_i v_i·g_i),
//! g = ((1−ν)/N·K + νI)⁻¹ v.
//! ```
//!
//! The integration tests cross-check this against an explicit evaluation of
//! the operator on the finite-dimensional span of `{k(x_i, ·), ∂ₗk(x_j, ·)}`.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::linalg::{cholesky, sym_eigen, SolveConfig, SymMatrix};
use crate::matrix::{dot, Mat};
use crate::sampler::{check_nu, KernelSystem};
use crate::targets::{true_moment, ScoreModel, TestFunction};

/// Reports treat values above `-NEGATIVE_NOISE_TOL·max(1, scale)` as zero.
pub const NEGATIVE_NOISE_TOL: f64 = 1e-8;

fn check_positions(positions: &Mat, target: &ScoreModel) -> Result<()> {
    if positions.rows() == 0 {
        return Err(Error::InsufficientParticles { required: 1, found: 0 });
    }
    if positions.cols() != target.dim() {
        return Err(Error::DimensionMismatch {
            expected: target.dim(),
            found: positions.cols(),
        });
    }
    Ok(())
}

/// Kernel Stein discrepancy, V-statistic form `(1/N²) Σᵢ Σⱼ u_π(xᵢ, xⱼ)`.
pub fn ksd_vstat(positions: &Mat, kernel: &KernelSpec, target: &ScoreModel) -> Result<f64> {
    kernel.validate()?;
    check_positions(positions, target)?;
    let scores = target.grad_potential_rows(positions)?;
    Ok(ksd_with_scores(positions, kernel, &scores))
}

fn ksd_with_scores(positions: &Mat, kernel: &KernelSpec, scores: &Mat) -> f64 {
    let (n, d) = positions.shape();
    let mut g1 = vec![0.0; d];
    let mut g2 = vec![0.0; d];
    let mut total = 0.0;
    for i in 0..n {
        let (xi, si) = (positions.row(i), scores.row(i));
        let mut row = 0.0;
        for j in 0..n {
            let (xj, sj) = (positions.row(j), scores.row(j));
            let k = kernel.value(xi, xj);
            kernel.grad1_into(xi, xj, k, &mut g1);
            // ∇₂k(x, y) = ∇₁k(y, x) for both symmetric families
            kernel.grad1_into(xj, xi, k, &mut g2);
            row += dot(si, sj) * k - dot(si, &g2) - dot(sj, &g1) + kernel.cross_trace(xi, xj, k);
        }
        total += row;
    }
    total / (n * n) as f64
}

/// Regularized Stein–Fisher information evaluated at the empirical measure.
pub fn reg_ksd(positions: &Mat, kernel: &KernelSpec, target: &ScoreModel, nu: f64, cfg: &SolveConfig) -> Result<f64> {
    check_nu(nu)?;
    kernel.validate()?;
    check_positions(positions, target)?;
    let scores = target.grad_potential_rows(positions)?;
    let ksd = ksd_with_scores(positions, kernel, &scores);
    if nu == 1.0 {
        return Ok(ksd);
    }
    let system = KernelSystem::build(kernel, positions)?;
    let v = system.drift(kernel, positions, &scores);
    let g = system.solve_regularized(nu, &v, cfg)?;
    let inner = dot(v.as_slice(), g.as_slice()) / positions.rows() as f64;
    Ok((ksd - (1.0 - nu) * inner) / nu)
}

/// Spectral data `(λᵢ, cᵢ)` of the kernel integral operator, with
/// `cᵢ = ⟨∇log(ρ/π), eᵢ⟩`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralModel {
    eigenvalues: Vec<f64>,
    coefficients: Vec<f64>,
}

impl SpectralModel {
    /// Eigenvalues must be positive and non-increasing.
    pub fn new(eigenvalues: Vec<f64>, coefficients: Vec<f64>) -> Result<Self> {
        if eigenvalues.len() != coefficients.len() {
            return Err(Error::DimensionMismatch {
                expected: eigenvalues.len(),
                found: coefficients.len(),
            });
        }
        if eigenvalues.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidParameter(
                "eigenvalues must be positive and finite".into(),
            ));
        }
        if eigenvalues.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidParameter("eigenvalues must be non-increasing".into()));
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter("coefficients must be finite".into()));
        }
        Ok(SpectralModel {
            eigenvalues,
            coefficients,
        })
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    fn pairs(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.eigenvalues.iter().copied().zip(self.coefficients.iter().copied())
    }
}

/// `I = Σ cᵢ²`.
pub fn spectral_fisher(m: &SpectralModel) -> f64 {
    m.coefficients.iter().map(|c| c * c).sum()
}

/// `Σ λᵢ cᵢ²`.
pub fn spectral_stein(m: &SpectralModel) -> f64 {
    m.pairs().map(|(l, c)| l * c * c).sum()
}

/// `Σ λᵢ / ((1−ν)λᵢ + ν) · cᵢ²`.
pub fn spectral_reg_stein(m: &SpectralModel, nu: f64) -> Result<f64> {
    check_nu(nu)?;
    Ok(m.pairs().map(|(l, c)| l / ((1.0 - nu) * l + nu) * c * c).sum())
}

/// `Σ λᵢ^{-2γ} cᵢ²`, the squared norm of the source-condition pre-image.
pub fn source_norm2(m: &SpectralModel, gamma: f64) -> f64 {
    m.pairs().map(|(l, c)| l.powf(-2.0 * gamma) * c * c).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SandwichVerdict {
    Holds,
    ConditionViolated,
    Fails,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SandwichOutcome {
    pub verdict: SandwichVerdict,
    pub fisher: f64,
    pub reg_stein: f64,
    /// Largest admissible `ν/(1−ν)`.
    pub ratio_bound: f64,
}

/// Relative slack allowed on each side of the sandwich inequality.
pub const SANDWICH_REL_TOL: f64 = 1e-12;

/// Checks `½(1−ν)⁻¹I ≤ I_ν ≤ (1−ν)⁻¹I` whenever
/// `ν/(1−ν) ≤ (I / (2‖𝔍‖²))^{1/(2γ)}`.
pub fn sandwich_check(m: &SpectralModel, gamma: f64, nu: f64) -> Result<SandwichOutcome> {
    if !(gamma > 0.0 && gamma <= 0.5) {
        return Err(Error::InvalidParameter(format!(
            "gamma must lie in (0, 1/2], got {gamma}"
        )));
    }
    if !(nu > 0.0 && nu < 1.0) {
        return Err(Error::InvalidParameter(format!("nu must lie in (0, 1), got {nu}")));
    }
    let fisher = spectral_fisher(m);
    let reg_stein = spectral_reg_stein(m, nu)?;
    let source = source_norm2(m, gamma);
    let ratio_bound = if fisher == 0.0 {
        f64::INFINITY
    } else {
        (fisher / (2.0 * source)).powf(1.0 / (2.0 * gamma))
    };
    let verdict = if nu / (1.0 - nu) > ratio_bound {
        SandwichVerdict::ConditionViolated
    } else {
        let upper = fisher / (1.0 - nu);
        let lower = 0.5 * upper;
        let ok = reg_stein >= lower * (1.0 - SANDWICH_REL_TOL) && reg_stein <= upper * (1.0 + SANDWICH_REL_TOL);
        if ok {
            SandwichVerdict::Holds
        } else {
            SandwichVerdict::Fails
        }
    };
    Ok(SandwichOutcome {
        verdict,
        fisher,
        reg_stein,
        ratio_bound,
    })
}

fn check_pair(s: &SymMatrix, q: &SymMatrix) -> Result<()> {
    if s.order() != q.order() {
        return Err(Error::DimensionMismatch {
            expected: q.order(),
            found: s.order(),
        });
    }
    Ok(())
}

/// `KL(N(0,S) | N(0,Q)) = ½(tr(Q⁻¹S) − d + ln det Q − ln det S)`.
///
/// Evaluated as `½ Σ (μ − 1 − ln μ)` over the eigenvalues `μ` of
/// `L⁻¹ S L⁻ᵀ` (`Q = L Lᵀ`), with `ln_1p` so that nearly converged pairs do
/// not drown in cancellation.
pub fn gaussian_kl(s: &SymMatrix, q: &SymMatrix) -> Result<f64> {
    check_pair(s, q)?;
    cholesky(s)?;
    let cq = cholesky(q)?;
    if s == q {
        return Ok(0.0);
    }
    // W = L⁻¹ S, then L⁻¹ Wᵀ = L⁻¹ S L⁻ᵀ
    let mut w = s.as_mat().clone();
    cq.forward_in_place(&mut w);
    let mut m = w.transpose();
    cq.forward_in_place(&mut m);
    let eig = sym_eigen(&SymMatrix::symmetrize(&m)?)?;
    let kl: f64 = eig
        .values
        .iter()
        .map(|&mu| {
            let x = mu - 1.0;
            x - x.ln_1p()
        })
        .sum::<f64>()
        * 0.5;
    Ok(kl.max(0.0))
}

/// `I(N(0,S) | N(0,Q)) = tr(S (Q⁻¹ − S⁻¹)ᵀ(Q⁻¹ − S⁻¹))`.
pub fn gaussian_fisher(s: &SymMatrix, q: &SymMatrix) -> Result<f64> {
    check_pair(s, q)?;
    let diff = precision_gap(s, q)?;
    let m = s.as_mat().matmul(&diff.tr_matmul(&diff)?)?;
    Ok(m.trace().max(0.0))
}

/// `Q⁻¹ − S⁻¹`.
pub(crate) fn precision_gap(s: &SymMatrix, q: &SymMatrix) -> Result<Mat> {
    let s_inv = cholesky(s)?.inverse()?;
    let q_inv = cholesky(q)?.inverse()?;
    q_inv.sub(&s_inv)
}

/// Per-test-function mean squared error against closed-form expectations.
///
/// `ensembles[r]` is the final ensemble of replicate `r`; `cosines[r]` is the
/// cosine test function drawn for that replicate.
pub fn mse_report(
    ensembles: &[Mat],
    target: &ScoreModel,
    cosines: &[TestFunction],
) -> Result<BTreeMap<&'static str, f64>> {
    if ensembles.is_empty() || ensembles.len() != cosines.len() {
        return Err(Error::InvalidParameter(
            "need one cosine test function per replicate ensemble".into(),
        ));
    }
    let mut sums: BTreeMap<&'static str, f64> = BTreeMap::new();
    for (x, &cosine) in ensembles.iter().zip(cosines) {
        for (name, err) in squared_errors(x, target, cosine)? {
            *sums.entry(name).or_insert(0.0) += err;
        }
    }
    let r = ensembles.len() as f64;
    Ok(sums.into_iter().map(|(k, v)| (k, v / r)).collect())
}

/// Squared errors of the ensemble averages of `h₁`, `h₂` and `cosine` for one
/// replicate, all evaluated on the first coordinate.
pub fn squared_errors(positions: &Mat, target: &ScoreModel, cosine: TestFunction) -> Result<[(&'static str, f64); 3]> {
    if positions.cols() != target.dim() {
        return Err(Error::DimensionMismatch {
            expected: target.dim(),
            found: positions.cols(),
        });
    }
    let mut out = [("", 0.0); 3];
    for (slot, h) in out
        .iter_mut()
        .zip([TestFunction::Identity, TestFunction::Square, cosine])
    {
        let truth = true_moment(target, h)?;
        *slot = (h.name(), (h.ensemble_mean(positions) - truth).powi(2));
    }
    Ok(out)
}

/// Discrepancy summary of one ensemble.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagReport {
    pub ksd2: f64,
    pub reg_ksd2: f64,
    pub mse: BTreeMap<&'static str, f64>,
}

impl DiagReport {
    /// Clamps round-off negatives to zero; rejects genuinely negative or non-finite input.
    pub fn new(ksd2: f64, reg_ksd2: f64, mse: BTreeMap<&'static str, f64>) -> Result<Self> {
        let scale = ksd2.abs().max(1.0);
        let clamp = |name: &str, v: f64| -> Result<f64> {
            if !v.is_finite() || v < -NEGATIVE_NOISE_TOL * scale {
                Err(Error::Evaluation(format!(
                    "{name} = {v} is not a valid nonnegative value"
                )))
            } else {
                Ok(v.max(0.0))
            }
        };
        let ksd2 = clamp("ksd2", ksd2)?;
        let reg_ksd2 = clamp("reg_ksd2", reg_ksd2)?;
        let mse = mse
            .into_iter()
            .map(|(k, v)| clamp(k, v).map(|v| (k, v)))
            .collect::<Result<_>>()?;
        Ok(DiagReport { ksd2, reg_ksd2, mse })
    }
}
