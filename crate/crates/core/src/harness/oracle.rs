//! Particles against the closed-form Gaussian covariance recursion.
//!
//! With a linear kernel, a centred Gaussian target `N(0, Q)` and a centred
//! Gaussian initialization whose covariance commutes with `Q`, the uncentred
//! second moment `XᵀX/N` of the particles follows the same matrix recursion
//! as the population covariance, up to sampling error. Both are driven by the
//! adaptive `(νₙ, hₙ)` schedule computed from the closed-form iterate.

use super::config::{ExperimentConfig, KernelConfig, TargetConfig};
use super::experiment::in_worker_pool;
use super::output::{fmt_f64, write_csv};
use crate::error::{Error, Result};
use crate::gaussian_flow::{discrete_step, kl_bound_sequence, schedule_params, MatrixFlowState, ScheduleStep};
use crate::kernels::KernelSpec;
use crate::linalg::{sym_eigen, SolveConfig, SymMatrix};
use crate::matrix::Mat;
use crate::sampler::{rsvgd_step, EnsembleState};
use crate::targets::sample_init;

pub const ORACLE_COLUMNS: [&str; 4] = ["n", "rel_err", "kl_closed", "bound_rhs"];

/// Relative tolerance for `S₀Q = QS₀`.
pub const COMMUTE_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleRow {
    pub n: usize,
    /// `‖S_emp − S_closed‖_F / ‖S_closed‖_F`
    pub rel_err: f64,
    pub kl_closed: f64,
    /// `KL₀ · Π(1 − ½λhᵢ/(1−νᵢ))` with `λ = 1/λ_max(Q)`.
    pub bound_rhs: f64,
}

impl OracleRow {
    pub fn fields(&self) -> Vec<String> {
        vec![
            self.n.to_string(),
            fmt_f64(self.rel_err),
            fmt_f64(self.kl_closed),
            fmt_f64(self.bound_rhs),
        ]
    }
}

/// Uncentred second moment `XᵀX / N`.
pub fn second_moment(x: &Mat) -> Result<SymMatrix> {
    let m = x.tr_matmul(x)?.scale(1.0 / x.rows() as f64);
    SymMatrix::symmetrize(&m)
}

fn rel_frobenius(a: &SymMatrix, b: &SymMatrix) -> Result<f64> {
    Ok(a.as_mat().sub(b.as_mat())?.frobenius() / b.as_mat().frobenius())
}

/// Result of an oracle run: the table plus the schedule that drove it.
#[derive(Clone, Debug)]
pub struct OracleRun {
    pub rows: Vec<OracleRow>,
    pub schedule: Vec<ScheduleStep>,
    pub states: Vec<MatrixFlowState>,
}

/// Runs `cfg.iters` steps with `δ = delta` and writes the table to `cfg.output`.
///
/// Requires a centred Gaussian target, the linear kernel and a centred
/// initialization `N(0, diag(init_std²))` that commutes with the target
/// covariance. Only the first replicate seed is used.
pub fn gaussian_oracle(cfg: &ExperimentConfig, delta: f64) -> Result<OracleRun> {
    in_worker_pool(|| oracle_in_pool(cfg, delta))
}

fn oracle_in_pool(cfg: &ExperimentConfig, delta: f64) -> Result<OracleRun> {
    cfg.validate()?;
    let TargetConfig::Gaussian { mean, .. } = &cfg.target else {
        return Err(Error::Precondition("gaussian-oracle needs a Gaussian target".into()));
    };
    if mean.iter().any(|&m| m != 0.0) {
        return Err(Error::Precondition("gaussian-oracle needs a zero-mean target".into()));
    }
    if cfg.kernel != KernelConfig::Linear {
        return Err(Error::Precondition("gaussian-oracle needs the linear kernel".into()));
    }
    if cfg.init_mean.iter().any(|&m| m != 0.0) {
        return Err(Error::Precondition(
            "gaussian-oracle needs a zero-mean initialization".into(),
        ));
    }
    let target = cfg.target.build()?;
    let d = target.dim();
    let q = match &target {
        crate::targets::ScoreModel::Gaussian { covariance, .. } => covariance.clone(),
        _ => unreachable!("built from a Gaussian config"),
    };
    let variances: Vec<f64> = (0..d)
        .map(|j| {
            let s = if cfg.init_std.len() == 1 {
                cfg.init_std[0]
            } else {
                cfg.init_std[j]
            };
            s * s
        })
        .collect();
    let s0 = SymMatrix::from_diag(&variances);
    let sq = s0.as_mat().matmul(q.as_mat())?;
    let qs = q.as_mat().matmul(s0.as_mat())?;
    if sq.sub(&qs)?.max_abs() > COMMUTE_TOL * sq.max_abs().max(1.0) {
        return Err(Error::Precondition(
            "initial covariance does not commute with the target covariance".into(),
        ));
    }
    let lambda = 1.0 / sym_eigen(&q)?.values[d - 1];

    let mut closed = MatrixFlowState::new(s0, q)?;
    let mut particles = EnsembleState::new(sample_init(&cfg.init_spec(0)?, cfg.particles, d)?)?;
    let kl0 = closed.kl()?;
    let mut rows = vec![OracleRow {
        n: 0,
        rel_err: rel_frobenius(&second_moment(particles.positions())?, closed.s())?,
        kl_closed: kl0,
        bound_rhs: kl0,
    }];
    let mut states = vec![closed.clone()];
    let mut schedule = Vec::with_capacity(cfg.iters);
    for n in 1..=cfg.iters {
        let p = schedule_params(&closed, delta)?;
        closed = discrete_step(&closed, p.nu, p.h)?;
        particles = rsvgd_step(
            &particles,
            &KernelSpec::Linear,
            &target,
            p.nu,
            p.h,
            &SolveConfig::Cholesky,
        )
        .map_err(|e| Error::StepFailed {
            iteration: n,
            source: Box::new(e),
        })?;
        schedule.push(p);
        let bound = *kl_bound_sequence(kl0, &schedule, lambda)?.last().expect("non-empty");
        rows.push(OracleRow {
            n,
            rel_err: rel_frobenius(&second_moment(particles.positions())?, closed.s())?,
            kl_closed: closed.kl()?,
            bound_rhs: bound,
        });
        states.push(closed.clone());
    }
    let table: Vec<Vec<String>> = rows.iter().map(OracleRow::fields).collect();
    write_csv(&cfg.output, &ORACLE_COLUMNS, &table)?;
    Ok(OracleRun { rows, schedule, states })
}
