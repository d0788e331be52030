//! Target densities `π ∝ exp(-V)` and initial ensembles.
//!
//! Only `∇V` and the unnormalized log-density are ever evaluated; the
//! normalizing constant is never needed.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, SymMatrix};
use crate::matrix::{dot, Mat};

pub type LogDensityFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type GradFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

const MIXTURE_WEIGHT_TOL: f64 = 1e-12;
const FD_REL_STEP: f64 = 1e-5;

#[derive(Clone)]
pub enum ScoreModel {
    Gaussian {
        mean: Vec<f64>,
        covariance: SymMatrix,
        precision: Mat,
    },
    Mixture1d {
        weights: Vec<f64>,
        means: Vec<f64>,
        variances: Vec<f64>,
    },
    Custom {
        dim: usize,
        log_density: LogDensityFn,
        /// Gradient of the log-density, `∇ log π`.
        grad_log_density: Option<GradFn>,
    },
}

impl fmt::Debug for ScoreModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScoreModel::Gaussian { mean, covariance, .. } => f
                .debug_struct("Gaussian")
                .field("mean", mean)
                .field("covariance", covariance)
                .finish(),
            ScoreModel::Mixture1d {
                weights,
                means,
                variances,
            } => f
                .debug_struct("Mixture1d")
                .field("weights", weights)
                .field("means", means)
                .field("variances", variances)
                .finish(),
            ScoreModel::Custom {
                dim, grad_log_density, ..
            } => f
                .debug_struct("Custom")
                .field("dim", dim)
                .field("analytic_grad", &grad_log_density.is_some())
                .finish(),
        }
    }
}

impl ScoreModel {
    pub fn gaussian(mean: Vec<f64>, covariance: SymMatrix) -> Result<Self> {
        if covariance.order() != mean.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                found: covariance.order(),
            });
        }
        let precision = cholesky(&covariance)?.inverse()?.symmetrized();
        Ok(ScoreModel::Gaussian {
            mean,
            covariance,
            precision,
        })
    }

    pub fn standard_gaussian(d: usize) -> Self {
        ScoreModel::gaussian(vec![0.0; d], SymMatrix::identity(d)).expect("identity is SPD")
    }

    pub fn mixture1d(weights: Vec<f64>, means: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() || weights.len() != variances.len() {
            return Err(Error::InvalidParameter(
                "mixture weights, means and variances must be non-empty and equally long".into(),
            ));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::InvalidParameter("mixture weights must be >= 0".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > MIXTURE_WEIGHT_TOL {
            return Err(Error::InvalidParameter(format!(
                "mixture weights sum to {total}, expected 1"
            )));
        }
        if variances.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter("mixture variances must be > 0".into()));
        }
        if means.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidParameter("mixture means must be finite".into()));
        }
        Ok(ScoreModel::Mixture1d {
            weights,
            means,
            variances,
        })
    }

    /// The bimodal target `(1/3)·N(-2, 1) + (2/3)·N(2, 1)`.
    pub fn two_mode_mixture() -> Self {
        ScoreModel::mixture1d(vec![1.0 / 3.0, 2.0 / 3.0], vec![-2.0, 2.0], vec![1.0, 1.0]).expect("valid mixture")
    }

    pub fn custom(dim: usize, log_density: LogDensityFn, grad_log_density: Option<GradFn>) -> Self {
        ScoreModel::Custom {
            dim,
            log_density,
            grad_log_density,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ScoreModel::Gaussian { mean, .. } => mean.len(),
            ScoreModel::Mixture1d { .. } => 1,
            ScoreModel::Custom { dim, .. } => *dim,
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    /// Unnormalized `log π(x) = -V(x)` up to an additive constant.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        let v = match self {
            ScoreModel::Gaussian { mean, precision, .. } => {
                let diff: Vec<f64> = x.iter().zip(mean).map(|(a, m)| a - m).collect();
                -0.5 * dot(&diff, &precision.matvec(&diff)?)
            }
            ScoreModel::Mixture1d {
                weights,
                means,
                variances,
            } => {
                let logs: Vec<f64> = component_log_terms(x[0], weights, means, variances).collect();
                log_sum_exp(&logs)
            }
            ScoreModel::Custom { log_density, .. } => log_density(x),
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Evaluation(format!("log-density is not finite at {x:?}")))
        }
    }

    /// `∇V(x) = -∇ log π(x)`.
    pub fn grad_potential(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let g = match self {
            ScoreModel::Gaussian { mean, precision, .. } => {
                let diff: Vec<f64> = x.iter().zip(mean).map(|(a, m)| a - m).collect();
                precision.matvec(&diff)?
            }
            ScoreModel::Mixture1d {
                weights,
                means,
                variances,
            } => {
                let logs: Vec<f64> = component_log_terms(x[0], weights, means, variances).collect();
                let norm = log_sum_exp(&logs);
                let mut g = 0.0;
                for ((l, m), v) in logs.iter().zip(means).zip(variances) {
                    g += (l - norm).exp() * (x[0] - m) / v;
                }
                vec![g]
            }
            ScoreModel::Custom {
                grad_log_density: Some(grad),
                ..
            } => grad(x).into_iter().map(|v| -v).collect(),
            ScoreModel::Custom {
                grad_log_density: None, ..
            } => {
                let mut g = vec![0.0; x.len()];
                let mut probe = x.to_vec();
                for i in 0..x.len() {
                    let h = FD_REL_STEP * x[i].abs().max(1.0);
                    probe[i] = x[i] + h;
                    let up = self.log_density(&probe)?;
                    probe[i] = x[i] - h;
                    let down = self.log_density(&probe)?;
                    probe[i] = x[i];
                    g[i] = -(up - down) / (2.0 * h);
                }
                g
            }
        };
        if g.iter().all(|v| v.is_finite()) {
            Ok(g)
        } else {
            Err(Error::Evaluation(format!("score is not finite at {x:?}")))
        }
    }

    /// `∇V` at every particle, one row per particle.
    pub fn grad_potential_rows(&self, positions: &Mat) -> Result<Mat> {
        if positions.cols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: positions.cols(),
            });
        }
        let mut out = Mat::zeros(positions.rows(), positions.cols());
        for i in 0..positions.rows() {
            let g = self.grad_potential(positions.row(i))?;
            out.row_mut(i).copy_from_slice(&g);
        }
        Ok(out)
    }
}

fn component_log_terms<'a>(
    x: f64,
    weights: &'a [f64],
    means: &'a [f64],
    variances: &'a [f64],
) -> impl Iterator<Item = f64> + 'a {
    weights
        .iter()
        .zip(means)
        .zip(variances)
        .map(move |((w, m), v)| w.ln() - 0.5 * v.ln() - (x - m).powi(2) / (2.0 * v))
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

/// Scalar test functions whose expectations under the target are estimated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TestFunction {
    /// `h₁(x) = x`
    Identity,
    /// `h₂(x) = x²`
    Square,
    /// `h₃(x) = cos(ωx + b)`
    Cosine { omega: f64, phase: f64 },
}

impl TestFunction {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            TestFunction::Identity => x,
            TestFunction::Square => x * x,
            TestFunction::Cosine { omega, phase } => (omega * x + phase).cos(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TestFunction::Identity => "h1",
            TestFunction::Square => "h2",
            TestFunction::Cosine { .. } => "h3",
        }
    }

    /// Average of the test function over the first coordinate of an ensemble.
    pub fn ensemble_mean(&self, positions: &Mat) -> f64 {
        let n = positions.rows() as f64;
        positions.row_iter().map(|r| self.eval(r[0])).sum::<f64>() / n
    }
}

/// Exact `E_π[h(x₁)]` over the first coordinate, for Gaussian and mixture targets.
pub fn true_moment(model: &ScoreModel, h: TestFunction) -> Result<f64> {
    let components: Vec<(f64, f64, f64)> = match model {
        // the first coordinate of N(m, Σ) is N(m₁, Σ₁₁)
        ScoreModel::Gaussian { mean, covariance, .. } => vec![(1.0, mean[0], covariance[(0, 0)])],
        ScoreModel::Mixture1d {
            weights,
            means,
            variances,
        } => weights
            .iter()
            .zip(means)
            .zip(variances)
            .map(|((&w, &m), &v)| (w, m, v))
            .collect(),
        ScoreModel::Custom { .. } => {
            return Err(Error::Unsupported(
                "closed-form moments need a Gaussian or mixture target".into(),
            ))
        }
    };
    Ok(components
        .iter()
        .map(|&(w, m, v)| {
            w * match h {
                TestFunction::Identity => m,
                TestFunction::Square => v + m * m,
                TestFunction::Cosine { omega, phase } => (omega * m + phase).cos() * (-0.5 * omega * omega * v).exp(),
            }
        })
        .sum())
}

/// Draws `(ω, b)` for the cosine test function: `ω ~ N(0, 1)`, `b ~ U[0, 2π)`.
pub fn draw_cosine_params<R: rand::Rng>(rng: &mut R) -> TestFunction {
    let omega: f64 = StandardNormal.sample(rng);
    let phase = rng.random::<f64>() * 2.0 * PI;
    TestFunction::Cosine { omega, phase }
}

/// Independent Gaussian initialization, one mean and standard deviation per
/// coordinate (a single value is broadcast over all coordinates).
#[derive(Clone, Debug, PartialEq)]
pub struct InitSpec {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub seed: u64,
}

impl InitSpec {
    pub fn new(mean: Vec<f64>, std: Vec<f64>, seed: u64) -> Result<Self> {
        let spec = InitSpec { mean, std, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.is_empty() || self.std.is_empty() {
            return Err(Error::InvalidParameter("init mean and std must be non-empty".into()));
        }
        if self.std.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidParameter("init std must be > 0".into()));
        }
        if self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidParameter("init mean must be finite".into()));
        }
        Ok(())
    }

    fn coord(values: &[f64], j: usize, d: usize) -> Result<f64> {
        match values.len() {
            1 => Ok(values[0]),
            len if len == d => Ok(values[j]),
            len => Err(Error::DimensionMismatch {
                expected: d,
                found: len,
            }),
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

/// `n` i.i.d. draws from the initial distribution, deterministic in the seed.
pub fn sample_init(spec: &InitSpec, n: usize, d: usize) -> Result<Mat> {
    let mut rng = spec.rng();
    sample_init_with(spec, n, d, &mut rng)
}

/// Like [`sample_init`] but drawing from a caller-owned generator.
pub fn sample_init_with<R: rand::Rng>(spec: &InitSpec, n: usize, d: usize, rng: &mut R) -> Result<Mat> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::InsufficientParticles { required: 1, found: 0 });
    }
    let mut x = Mat::zeros(n, d);
    let params: Vec<(f64, f64)> = (0..d)
        .map(|j| Ok((InitSpec::coord(&spec.mean, j, d)?, InitSpec::coord(&spec.std, j, d)?)))
        .collect::<Result<_>>()?;
    for i in 0..n {
        for (j, &(m, s)) in params.iter().enumerate() {
            let z: f64 = StandardNormal.sample(rng);
            x[(i, j)] = m + s * z;
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fd_score(model: &ScoreModel, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::new();
        for i in 0..x.len() {
            let h = 1e-5 * x[i].abs().max(1.0);
            let mut p = x.to_vec();
            let mut m = x.to_vec();
            p[i] += h;
            m[i] -= h;
            out.push(-(model.log_density(&p).unwrap() - model.log_density(&m).unwrap()) / (2.0 * h));
        }
        out
    }

    #[test]
    fn standard_gaussian_score_is_identity() {
        let m = ScoreModel::standard_gaussian(2);
        assert_eq!(m.grad_potential(&[3.0, -1.0]).unwrap(), vec![3.0, -1.0]);
    }

    #[test]
    fn scaled_gaussian_score() {
        let m = ScoreModel::gaussian(vec![0.0], SymMatrix::from_diag(&[4.0])).unwrap();
        assert_eq!(m.grad_potential(&[2.0]).unwrap(), vec![0.5]);
    }

    #[test]
    fn mixture_score_at_origin_matches_finite_differences() {
        let m = ScoreModel::two_mode_mixture();
        // oracle: central differences on log π, frozen value -2/3
        let fd = fd_score(&m, &[0.0])[0];
        assert!((fd + 2.0 / 3.0).abs() < 1e-9, "fd oracle {fd}");
        let g = m.grad_potential(&[0.0]).unwrap()[0];
        assert!((g + 2.0 / 3.0).abs() < 1e-14, "score {g}");
    }

    #[test]
    fn symmetric_mixture_score_vanishes_at_center() {
        let m = ScoreModel::mixture1d(vec![0.5, 0.5], vec![-1.7, 1.7], vec![1.0, 1.0]).unwrap();
        assert!(m.grad_potential(&[0.0]).unwrap()[0].abs() < 1e-15);
    }

    #[test]
    fn mixture_validation() {
        assert!(ScoreModel::mixture1d(vec![0.5, 0.6], vec![0.0, 1.0], vec![1.0, 1.0]).is_err());
        assert!(ScoreModel::mixture1d(vec![0.5, 0.5], vec![0.0, 1.0], vec![1.0, 0.0]).is_err());
        assert!(ScoreModel::mixture1d(vec![1.0], vec![0.0, 1.0], vec![1.0]).is_err());
    }

    #[test]
    fn gaussian_requires_spd_covariance() {
        let cov = SymMatrix::new(Mat::from_rows(&[[1.0, 2.0], [2.0, 1.0]]).unwrap()).unwrap();
        assert!(matches!(
            ScoreModel::gaussian(vec![0.0, 0.0], cov),
            Err(Error::NotSpd { .. })
        ));
    }

    #[test]
    fn custom_without_gradient_uses_finite_differences() {
        let m = ScoreModel::custom(2, Arc::new(|x: &[f64]| -0.25 * x[0].powi(4) - 0.5 * x[1] * x[1]), None);
        let g = m.grad_potential(&[1.5, -2.0]).unwrap();
        assert!((g[0] - 1.5f64.powi(3)).abs() < 1e-8);
        assert!((g[1] + 2.0).abs() < 1e-8);
    }

    #[test]
    fn custom_with_gradient_negates_it() {
        let m = ScoreModel::custom(
            1,
            Arc::new(|x: &[f64]| -x[0] * x[0]),
            Some(Arc::new(|x: &[f64]| vec![-2.0 * x[0]])),
        );
        assert_eq!(m.grad_potential(&[3.0]).unwrap(), vec![6.0]);
    }

    #[test]
    fn non_finite_log_density_is_an_error() {
        let m = ScoreModel::custom(1, Arc::new(|x: &[f64]| if x[0] > 0.0 { f64::NAN } else { 0.0 }), None);
        assert!(matches!(m.grad_potential(&[0.0]), Err(Error::Evaluation(_))));
    }

    #[test]
    fn mixture_moments() {
        let m = ScoreModel::two_mode_mixture();
        // oracle: Σ w_j μ_j and Σ w_j (σ_j² + μ_j²)
        assert!((true_moment(&m, TestFunction::Identity).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((true_moment(&m, TestFunction::Square).unwrap() - 5.0).abs() < 1e-14);
        let cos0 = TestFunction::Cosine { omega: 0.0, phase: 0.0 };
        assert_eq!(true_moment(&m, cos0).unwrap(), 1.0);
        let g = ScoreModel::standard_gaussian(1);
        assert_eq!(true_moment(&g, cos0).unwrap(), 1.0);
    }

    #[test]
    fn cosine_moment_matches_quadrature() {
        let m = ScoreModel::two_mode_mixture();
        let h = TestFunction::Cosine { omega: 0.8, phase: 1.1 };
        // trapezoid rule on the normalized density over [-15, 15]
        let n = 60_000;
        let (a, b) = (-15.0, 15.0);
        let dx = (b - a) / n as f64;
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..=n {
            let x = a + i as f64 * dx;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            let p = m.log_density(&[x]).unwrap().exp();
            num += w * p * h.eval(x);
            den += w * p;
        }
        assert!((num / den - true_moment(&m, h).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn custom_moments_unsupported() {
        let m = ScoreModel::custom(1, Arc::new(|x: &[f64]| -x[0] * x[0]), None);
        assert!(matches!(
            true_moment(&m, TestFunction::Identity),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn gaussian_moments_use_first_marginal() {
        let cov = SymMatrix::new(Mat::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap()).unwrap();
        let m = ScoreModel::gaussian(vec![1.0, -3.0], cov).unwrap();
        assert_eq!(true_moment(&m, TestFunction::Identity).unwrap(), 1.0);
        assert_eq!(true_moment(&m, TestFunction::Square).unwrap(), 3.0);
    }

    #[test]
    fn sampling_is_deterministic_and_calibrated() {
        let spec = InitSpec::new(vec![-10.0], vec![1.0], 42).unwrap();
        let a = sample_init(&spec, 10_000, 1).unwrap();
        let b = sample_init(&spec, 10_000, 1).unwrap();
        assert_eq!(a, b);
        let n = a.rows() as f64;
        let mean = a.as_slice().iter().sum::<f64>() / n;
        let var = a.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((mean + 10.0).abs() < 0.05, "mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 0.05, "std {}", var.sqrt());

        let one = sample_init(&spec, 1, 1).unwrap();
        assert_eq!(one.shape(), (1, 1));
        assert!(one.is_finite());
    }

    #[test]
    fn init_validation() {
        assert!(InitSpec::new(vec![0.0], vec![0.0], 1).is_err());
        let spec = InitSpec::new(vec![0.0, 1.0], vec![1.0], 1).unwrap();
        assert!(sample_init(&spec, 3, 3).is_err());
        assert_eq!(sample_init(&spec, 3, 2).unwrap().shape(), (3, 2));
    }

    proptest! {
        #[test]
        fn analytic_scores_match_finite_differences(x in -6.0f64..6.0, y in -3.0f64..3.0) {
            let cov = SymMatrix::new(Mat::from_rows(&[[2.0, 0.3], [0.3, 0.5]]).unwrap()).unwrap();
            let models = [
                ScoreModel::two_mode_mixture(),
                ScoreModel::gaussian(vec![0.5, -1.0], cov).unwrap(),
            ];
            for m in &models {
                let pt: Vec<f64> = [x, y][..m.dim()].to_vec();
                let g = m.grad_potential(&pt).unwrap();
                let fd = fd_score(m, &pt);
                for (a, b) in g.iter().zip(&fd) {
                    prop_assert!((a - b).abs() <= 1e-5 * a.abs().max(1.0), "{} vs {}", a, b);
                }
            }
        }

        #[test]
        fn gaussian_score_is_linear(x in -5.0f64..5.0, y in -5.0f64..5.0, alpha in -3.0f64..3.0) {
            let cov = SymMatrix::new(Mat::from_rows(&[[1.5, -0.4], [-0.4, 0.9]]).unwrap()).unwrap();
            let m = ScoreModel::gaussian(vec![0.0, 0.0], cov).unwrap();
            let g = m.grad_potential(&[x, y]).unwrap();
            let ga = m.grad_potential(&[alpha * x, alpha * y]).unwrap();
            for (a, b) in g.iter().zip(&ga) {
                prop_assert!((alpha * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }
    }
}
