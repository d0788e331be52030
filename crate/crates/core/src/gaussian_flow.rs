//! Closed-form covariance dynamics for a Gaussian target `N(0, Q)` under the
//! linear kernel `k(x, y) = ⟨x, y⟩ + 1`.
//!
//! Started from `N(0, S₀)`, both the continuous flow and the discrete
//! particle update stay Gaussian and centered, so the whole evolution is a
//! matrix recursion on the covariance. These iterates are the exact
//! reference that particle runs are compared against.

use crate::diagnostics::{gaussian_fisher, gaussian_kl, precision_gap};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, sym_eigen, SymMatrix};
use crate::matrix::Mat;

#[derive(Clone, Debug, PartialEq)]
pub struct MatrixFlowState {
    s: SymMatrix,
    q: SymMatrix,
    step: usize,
}

impl MatrixFlowState {
    pub fn new(s: SymMatrix, q: SymMatrix) -> Result<Self> {
        if s.order() != q.order() {
            return Err(Error::DimensionMismatch {
                expected: q.order(),
                found: s.order(),
            });
        }
        cholesky(&s)?;
        cholesky(&q)?;
        Ok(MatrixFlowState { s, q, step: 0 })
    }

    pub fn s(&self) -> &SymMatrix {
        &self.s
    }

    pub fn q(&self) -> &SymMatrix {
        &self.q
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn kl(&self) -> Result<f64> {
        gaussian_kl(&self.s, &self.q)
    }

    pub fn fisher(&self) -> Result<f64> {
        gaussian_fisher(&self.s, &self.q)
    }

    /// `‖S − Q‖₂`, the largest absolute eigenvalue of the difference.
    pub fn spectral_gap(&self) -> Result<f64> {
        let diff = SymMatrix::symmetrize(&self.s.as_mat().sub(self.q.as_mat())?)?;
        let e = sym_eigen(&diff)?;
        Ok(e.values.iter().fold(0.0f64, |m, v| m.max(v.abs())))
    }

    fn next(&self, s: Mat) -> Result<Self> {
        let s = SymMatrix::symmetrize(&s)?;
        if !s.as_mat().is_finite() || cholesky(&s).is_err() {
            return Err(Error::StepTooLarge { step: self.step + 1 });
        }
        Ok(MatrixFlowState {
            s,
            q: self.q.clone(),
            step: self.step + 1,
        })
    }
}

fn check_open_nu(nu: f64) -> Result<()> {
    if nu > 0.0 && nu < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("nu must lie in (0, 1), got {nu}")))
    }
}

/// `((1−ν)S + νI)⁻¹`.
fn regularized_inverse(s: &SymMatrix, nu: f64) -> Result<Mat> {
    let m = s.scaled_shifted(1.0 - nu, nu);
    cholesky(&m)?.inverse()
}

/// One step of the discrete covariance recursion:
///
/// ```text
/// S' = S + h·A·M·S² + h·S·A·M·S + h²·A·M·S³·M·A,
/// A = ((1−ν)S + νI)⁻¹,  M = S⁻¹ − Q⁻¹
/// ```
///
/// With `B = AMS` the three terms are `BS`, `SB` and `BSBᵀ`, so the sum is
/// evaluated as `F·S·Fᵀ + h·S·(B − Bᵀ)` with `F = I + hB`. The expanded form
/// cancels catastrophically when `F` is nearly singular; the factored form
/// does not, and its correction term vanishes exactly when `S` and `Q` are
/// diagonal.
///
/// The result is symmetrized before the positive-definiteness check.
pub fn discrete_step(state: &MatrixFlowState, nu: f64, h: f64) -> Result<MatrixFlowState> {
    check_open_nu(nu)?;
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidParameter(format!("step size must be positive, got {h}")));
    }
    let s = state.s.as_mat();
    let a = regularized_inverse(&state.s, nu)?;
    // M = S⁻¹ − Q⁻¹ = −(Q⁻¹ − S⁻¹)
    let m = precision_gap(&state.s, &state.q)?.scale(-1.0);
    let b = a.matmul(&m)?.matmul(s)?;
    let f = b.scale(h).add_diag(1.0);
    let fsf = f.matmul(s)?.matmul(&f.transpose())?;
    let skew = s.matmul(&b.sub(&b.transpose())?)?.scale(h);
    state.next(fsf.add(&skew)?)
}

/// Right-hand side of the continuous covariance flow:
///
/// ```text
/// dΣ/dt = 2AΣ − AΣ²Q⁻¹ − Q⁻¹AΣ²,   A = ((1−ν)Σ + νI)⁻¹
/// ```
pub fn continuous_rhs(sigma: &SymMatrix, q: &SymMatrix, nu: f64) -> Result<Mat> {
    check_open_nu(nu)?;
    if sigma.order() != q.order() {
        return Err(Error::DimensionMismatch {
            expected: q.order(),
            found: sigma.order(),
        });
    }
    cholesky(sigma)?;
    let q_inv = cholesky(q)?.inverse()?;
    let a = regularized_inverse(sigma, nu)?;
    let s = sigma.as_mat();
    let a_s = a.matmul(s)?;
    let a_s2 = a_s.matmul(s)?;
    a_s.scale(2.0).sub(&a_s2.matmul(&q_inv)?)?.sub(&q_inv.matmul(&a_s2)?)
}

/// Classical fourth-order Runge–Kutta on the continuous flow; returns
/// `steps + 1` states including the start.
pub fn rk4_integrate(state: &MatrixFlowState, nu: f64, dt: f64, steps: usize) -> Result<Vec<MatrixFlowState>> {
    check_open_nu(nu)?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    let q = &state.q;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(state.clone());
    let stage = |base: &Mat, k: &Mat, c: f64, step: usize| -> Result<SymMatrix> {
        let m = SymMatrix::symmetrize(&base.add(&k.scale(c))?)?;
        if cholesky(&m).is_err() {
            return Err(Error::StepTooLarge { step });
        }
        Ok(m)
    };
    for _ in 0..steps {
        let cur = out.last().expect("non-empty");
        let step = cur.step + 1;
        let s = cur.s.as_mat();
        let k1 = continuous_rhs(&cur.s, q, nu)?;
        let k2 = continuous_rhs(&stage(s, &k1, 0.5 * dt, step)?, q, nu)?;
        let k3 = continuous_rhs(&stage(s, &k2, 0.5 * dt, step)?, q, nu)?;
        let k4 = continuous_rhs(&stage(s, &k3, dt, step)?, q, nu)?;
        let incr = k1.add(&k2.scale(2.0))?.add(&k3.scale(2.0))?.add(&k4)?.scale(dt / 6.0);
        let next = cur.next(s.add(&incr)?)?;
        out.push(next);
    }
    Ok(out)
}

/// `(ν, h)` for one step of the adaptive Gaussian schedule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleStep {
    pub nu: f64,
    pub h: f64,
}

/// Adaptive schedule for the step leaving `state`:
///
/// ```text
/// r = I(S) / (2‖Q⁻¹ − S⁻¹‖²_F),   ν = r / (1 + r),
/// h = δ · λ_min((1−ν)S + νI)
/// ```
pub fn schedule_params(state: &MatrixFlowState, delta: f64) -> Result<ScheduleStep> {
    if !(delta > 0.0 && delta < 0.5) {
        return Err(Error::InvalidParameter(format!(
            "delta must lie in (0, 1/2), got {delta}"
        )));
    }
    let gap = precision_gap(&state.s, &state.q)?;
    let gap2 = gap.frobenius().powi(2);
    if gap2 == 0.0 {
        return Err(Error::DegenerateSchedule);
    }
    let fisher = state.fisher()?;
    let r = fisher / (2.0 * gap2);
    let nu = r / (1.0 + r);
    if !(nu > 0.0 && nu < 1.0) {
        return Err(Error::DegenerateSchedule);
    }
    let sigma_min = sym_eigen(&state.s)?.values[0];
    let h = delta * ((1.0 - nu) * sigma_min + nu);
    Ok(ScheduleStep { nu, h })
}

/// Runs `steps` discrete steps under the adaptive schedule.
pub fn run_schedule(
    state: &MatrixFlowState,
    delta: f64,
    steps: usize,
) -> Result<(Vec<MatrixFlowState>, Vec<ScheduleStep>)> {
    let mut states = vec![state.clone()];
    let mut schedule = Vec::with_capacity(steps);
    for _ in 0..steps {
        let cur = states.last().expect("non-empty");
        let p = schedule_params(cur, delta)?;
        let next = discrete_step(cur, p.nu, p.h)?;
        schedule.push(p);
        states.push(next);
    }
    Ok((states, schedule))
}

/// `KL(S₀) · Πᵢ₌₁ⁿ (1 − ½λhᵢ/(1−νᵢ))` for `n = 0..=len`.
pub fn kl_bound_sequence(kl0: f64, schedule: &[ScheduleStep], lambda: f64) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(schedule.len() + 1);
    let mut bound = kl0;
    out.push(bound);
    for (i, p) in schedule.iter().enumerate() {
        let factor = 1.0 - 0.5 * lambda * p.h / (1.0 - p.nu);
        if !(factor > 0.0) {
            return Err(Error::ScheduleInvalid { step: i + 1, factor });
        }
        bound *= factor;
        out.push(bound);
    }
    Ok(out)
}

/// Absolute slack allowed when comparing KL against the product bound.
pub const BOUND_ABS_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundVerdict {
    Holds,
    /// First step at which the KL exceeds the bound.
    Fails {
        step: usize,
    },
}

/// Checks `KL(Sₙ) ≤ KL(S₀)·Π(1 − ½λhᵢ/(1−νᵢ))` along a recorded run, where
/// `λ` is the log-Sobolev constant of the target (`1/λ_max(Q)` for `N(0, Q)`)
/// and `states[i+1]` was produced from
/// `states[i]` with `schedule[i]`.
pub fn theorem6_bound_check(
    states: &[MatrixFlowState],
    schedule: &[ScheduleStep],
    lambda: f64,
) -> Result<BoundVerdict> {
    let Some(first) = states.first() else {
        return Ok(BoundVerdict::Holds);
    };
    if schedule.len() + 1 < states.len() {
        return Err(Error::ScheduleExhausted {
            needed: states.len() - 1,
            available: schedule.len(),
        });
    }
    let bounds = kl_bound_sequence(first.kl()?, &schedule[..states.len() - 1], lambda)?;
    for (n, (state, bound)) in states.iter().zip(&bounds).enumerate().skip(1) {
        if state.kl()? > bound + BOUND_ABS_TOL {
            return Ok(BoundVerdict::Fails { step: n });
        }
    }
    Ok(BoundVerdict::Holds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(s: f64, q: f64) -> MatrixFlowState {
        MatrixFlowState::new(SymMatrix::from_diag(&[s]), SymMatrix::from_diag(&[q])).unwrap()
    }

    // q·(1 + h((1−ν)σ+ν)⁻¹(1 − σ/q))²·σ/q
    fn scalar_recursion(sigma: f64, q: f64, nu: f64, h: f64) -> f64 {
        let u = sigma / q;
        q * (1.0 + h / ((1.0 - nu) * sigma + nu) * (1.0 - u)).powi(2) * u
    }

    #[test]
    fn fixed_point() {
        let q = SymMatrix::new(Mat::from_rows(&[[2.0, 0.3], [0.3, 1.0]]).unwrap()).unwrap();
        let st = MatrixFlowState::new(q.clone(), q.clone()).unwrap();
        let next = discrete_step(&st, 0.3, 0.2).unwrap();
        assert!(next.s().as_mat().sub(q.as_mat()).unwrap().max_abs() <= 1e-12);
        assert!(continuous_rhs(&q, &q, 0.3).unwrap().max_abs() <= 1e-12);
    }

    #[test]
    fn scalar_step_example() {
        let next = discrete_step(&scalar(4.0, 1.0), 0.5, 0.1).unwrap();
        assert!((next.s()[(0, 0)] - 3.0976).abs() < 1e-12);
        assert_eq!(next.step(), 1);
    }

    #[test]
    fn diagonal_step_matches_scalar_recursion() {
        let st = MatrixFlowState::new(SymMatrix::from_diag(&[4.0, 0.5]), SymMatrix::from_diag(&[1.0, 2.0])).unwrap();
        let next = discrete_step(&st, 0.3, 0.15).unwrap();
        assert!((next.s()[(0, 0)] - scalar_recursion(4.0, 1.0, 0.3, 0.15)).abs() < 1e-12);
        assert!((next.s()[(1, 1)] - scalar_recursion(0.5, 2.0, 0.3, 0.15)).abs() < 1e-12);
        assert_eq!(next.s()[(0, 1)], 0.0);
    }

    #[test]
    fn continuous_rhs_examples() {
        let rhs = continuous_rhs(&SymMatrix::from_diag(&[4.0]), &SymMatrix::from_diag(&[1.0]), 0.5).unwrap();
        assert!((rhs[(0, 0)] + 9.6).abs() < 1e-12);
        let rhs = continuous_rhs(&SymMatrix::from_diag(&[2.5]), &SymMatrix::from_diag(&[2.5]), 0.7).unwrap();
        assert!(rhs[(0, 0)].abs() < 1e-15);
    }

    #[test]
    fn continuous_rhs_is_symmetric_without_commutation() {
        let s = SymMatrix::new(Mat::from_rows(&[[2.0, 0.7], [0.7, 1.0]]).unwrap()).unwrap();
        let q = SymMatrix::new(Mat::from_rows(&[[1.0, -0.2], [-0.2, 3.0]]).unwrap()).unwrap();
        let rhs = continuous_rhs(&s, &q, 0.4).unwrap();
        assert!(rhs.asymmetry() < 1e-12);
    }

    #[test]
    fn rk4_examples() {
        let st = scalar(4.0, 1.0);
        assert_eq!(rk4_integrate(&st, 0.5, 0.01, 0).unwrap(), vec![st.clone()]);
        let traj = rk4_integrate(&st, 0.5, 0.01, 500).unwrap();
        let sig: Vec<f64> = traj.iter().map(|s| s.s()[(0, 0)]).collect();
        assert!(sig.windows(2).all(|w| w[1] < w[0] && w[1] > 1.0));
        assert!(sig.last().unwrap() - 1.0 < 0.1);
    }

    #[test]
    fn rk4_is_fourth_order() {
        // Richardson: error(dt) / error(dt/2) ≈ 16 against a dt/64 reference
        let st = scalar(3.0, 1.0);
        let t = 1.0;
        let end = |dt: f64| {
            let n = (t / dt).round() as usize;
            rk4_integrate(&st, 0.3, dt, n).unwrap().last().unwrap().s()[(0, 0)]
        };
        let reference = end(0.2 / 64.0);
        let e1 = (end(0.2) - reference).abs();
        let e2 = (end(0.1) - reference).abs();
        let ratio = e1 / e2;
        assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn schedule_examples() {
        let p = schedule_params(&scalar(4.0, 1.0), 0.1).unwrap();
        assert!((p.nu - 2.0 / 3.0).abs() < 1e-14);
        assert!((p.h - 0.2).abs() < 1e-14);
        let p = schedule_params(&scalar(1.0, 4.0), 0.1).unwrap();
        assert!((p.nu - 1.0 / 3.0).abs() < 1e-14);
        assert!(matches!(
            schedule_params(&scalar(2.0, 2.0), 0.1),
            Err(Error::DegenerateSchedule)
        ));
        assert!(schedule_params(&scalar(4.0, 1.0), 0.5).is_err());
    }

    #[test]
    fn bound_holds_on_scalar_schedule() {
        let (states, schedule) = run_schedule(&scalar(4.0, 1.0), 0.1, 100).unwrap();
        assert_eq!(
            theorem6_bound_check(&states, &schedule, 1.0).unwrap(),
            BoundVerdict::Holds
        );
        assert_eq!(
            theorem6_bound_check(&states[..1], &[], 1.0).unwrap(),
            BoundVerdict::Holds
        );
        let kl: Vec<f64> = states.iter().map(|s| s.kl().unwrap()).collect();
        for (n, w) in kl.windows(2).enumerate() {
            assert!(w[1] <= w[0], "step {n}: {w:?}");
        }
    }

    #[test]
    fn adversarial_schedules_are_caught() {
        let st = scalar(4.0, 1.0);
        // factor 1 − ½·1·3/(1−0.5) < 0
        let huge = [ScheduleStep { nu: 0.5, h: 3.0 }];
        let s1 = discrete_step(&st, 0.5, 3.0).unwrap();
        assert!(matches!(
            theorem6_bound_check(&[st.clone(), s1], &huge, 1.0),
            Err(Error::ScheduleInvalid { step: 1, .. })
        ));
        // an over-optimistic claimed schedule: the recorded run moved less than claimed
        let claimed = [ScheduleStep { nu: 0.5, h: 0.9 }];
        let s1 = discrete_step(&st, 0.9, 0.01).unwrap();
        assert_eq!(
            theorem6_bound_check(&[st, s1], &claimed, 1.0).unwrap(),
            BoundVerdict::Fails { step: 1 }
        );
    }

    #[test]
    fn rk4_reports_loss_of_definiteness() {
        // first half stage: 4 + 0.5·(−9.6) < 0
        assert!(matches!(
            rk4_integrate(&scalar(4.0, 1.0), 0.5, 1.0, 1),
            Err(Error::StepTooLarge { step: 1 })
        ));
    }
}
