//! Regularized SVGD particle updates.
//!
//! One iteration moves the ensemble `X` (one particle per row) as
//!
//! ```text
//! X ← X − h · ((1−ν)/N · K + ν·I)⁻¹ · v
//! v_i = (1/N) Σ_j [ k(x_j, x_i) ∇V(x_j) − ∇₁k(x_j, x_i) ]
//! ```
//!
//! where `K` is the Gram matrix of the current particles. At `ν = 1` the
//! system matrix is the identity and the update is plain SVGD; that case skips
//! the linear solve entirely.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::kernels::{gram, median_heuristic, GramMatrix, KernelSpec};
use crate::linalg::{solve_low_rank_shifted, solve_spd, SolveConfig};
use crate::matrix::Mat;
use crate::targets::ScoreModel;

pub const DEFAULT_ADAGRAD_FUDGE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleState {
    positions: Mat,
    iteration: usize,
    adagrad_accum: Mat,
}

impl EnsembleState {
    pub fn new(positions: Mat) -> Result<Self> {
        if positions.rows() == 0 {
            return Err(Error::InsufficientParticles { required: 1, found: 0 });
        }
        if !positions.is_finite() {
            return Err(Error::InvalidParameter("particle positions must be finite".into()));
        }
        let adagrad_accum = Mat::zeros(positions.rows(), positions.cols());
        Ok(EnsembleState {
            positions,
            iteration: 0,
            adagrad_accum,
        })
    }

    pub fn positions(&self) -> &Mat {
        &self.positions
    }

    pub fn into_positions(self) -> Mat {
        self.positions
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn adagrad_accum(&self) -> &Mat {
        &self.adagrad_accum
    }

    pub fn n(&self) -> usize {
        self.positions.rows()
    }

    pub fn dim(&self) -> usize {
        self.positions.cols()
    }

    fn advanced(&self, positions: Mat, adagrad_accum: Mat) -> Result<Self> {
        if !positions.is_finite() {
            return Err(Error::Evaluation(format!(
                "particle positions became non-finite at iteration {}",
                self.iteration + 1
            )));
        }
        Ok(EnsembleState {
            positions,
            iteration: self.iteration + 1,
            adagrad_accum,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepSchedule {
    Constant {
        h: f64,
    },
    /// Per-coordinate Adagrad: `accum += g²`, `rate = base / (fudge + √accum)`.
    Adagrad {
        base: f64,
        fudge: f64,
    },
}

impl StepSchedule {
    pub fn adagrad(base: f64) -> Self {
        StepSchedule::Adagrad {
            base,
            fudge: DEFAULT_ADAGRAD_FUDGE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            StepSchedule::Constant { h } => h > 0.0 && h.is_finite(),
            StepSchedule::Adagrad { base, fudge } => base > 0.0 && fudge > 0.0 && base.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid step schedule {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum NuSchedule {
    Constant(f64),
    Sequence(Vec<f64>),
}

pub(crate) fn check_nu(nu: f64) -> Result<()> {
    if nu > 0.0 && nu <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("nu must lie in (0, 1], got {nu}")))
    }
}

impl NuSchedule {
    pub fn validate(&self) -> Result<()> {
        match self {
            NuSchedule::Constant(nu) => check_nu(*nu),
            NuSchedule::Sequence(seq) => seq.iter().try_for_each(|&nu| check_nu(nu)),
        }
    }

    /// Regularization used for the step taken from iteration `k`.
    pub fn at(&self, k: usize) -> Result<f64> {
        match self {
            NuSchedule::Constant(nu) => Ok(*nu),
            NuSchedule::Sequence(seq) => seq.get(k).copied().ok_or(Error::ScheduleExhausted {
                needed: k + 1,
                available: seq.len(),
            }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BandwidthPolicy {
    /// Use the kernel exactly as given.
    Fixed,
    /// Recompute the Gaussian bandwidth with the median heuristic before every step.
    MedianPerIter,
    /// Set the Gaussian bandwidth from the initial ensemble, then keep it.
    MedianOnce,
}

impl BandwidthPolicy {
    /// Fixes a [`BandwidthPolicy::MedianOnce`] bandwidth from the starting
    /// positions; other policies pass through unchanged.
    pub fn resolve(self, kernel: &KernelSpec, initial: &Mat) -> Result<(KernelSpec, BandwidthPolicy)> {
        match (self, kernel) {
            (BandwidthPolicy::MedianOnce, KernelSpec::Gaussian { .. }) => Ok((
                kernel.with_bandwidth(median_heuristic(initial)?)?,
                BandwidthPolicy::Fixed,
            )),
            (BandwidthPolicy::MedianOnce, _) => Ok((*kernel, BandwidthPolicy::Fixed)),
            _ => Ok((*kernel, self)),
        }
    }
}

/// Kernel system for the current ensemble: either the dense Gram matrix or,
/// for the linear kernel, its exact feature factor `Z = [X, 1]` with `K = Z·Zᵀ`.
pub(crate) enum KernelSystem {
    Dense(GramMatrix),
    Features(Mat),
}

impl KernelSystem {
    pub(crate) fn build(kernel: &KernelSpec, positions: &Mat) -> Result<Self> {
        match kernel {
            KernelSpec::Gaussian { .. } => Ok(KernelSystem::Dense(gram(kernel, positions)?)),
            KernelSpec::Linear => {
                let (n, d) = positions.shape();
                let z = Mat::from_fn(n, d + 1, |i, j| if j < d { positions[(i, j)] } else { 1.0 });
                Ok(KernelSystem::Features(z))
            }
        }
    }

    /// Solves `((1−ν)/N·K + ν·I)·G = rhs`.
    pub(crate) fn solve_regularized(&self, nu: f64, rhs: &Mat, cfg: &SolveConfig) -> Result<Mat> {
        let n = rhs.rows() as f64;
        let scale = (1.0 - nu) / n;
        match self {
            KernelSystem::Dense(k) => {
                let system = k.as_sym().scaled_shifted(scale, nu);
                solve_spd(&system, rhs, cfg)
            }
            KernelSystem::Features(z) => solve_low_rank_shifted(z, scale, nu, rhs),
        }
    }

    /// `v_i = (1/N) Σ_j [k(x_j, x_i) g_j − ∇₁k(x_j, x_i)]` with `g = ∇V` rows.
    pub(crate) fn drift(&self, kernel: &KernelSpec, positions: &Mat, scores: &Mat) -> Mat {
        let (n, d) = positions.shape();
        let inv_n = 1.0 / n as f64;
        match (self, kernel) {
            (KernelSystem::Dense(k), KernelSpec::Gaussian { bandwidth }) => {
                let c = 2.0 / bandwidth;
                let mut v = Mat::zeros(n, d);
                for i in 0..n {
                    let xi = positions.row(i);
                    let krow = k.as_mat().row(i);
                    let out = v.row_mut(i);
                    for (j, &kij) in krow.iter().enumerate() {
                        let gj = scores.row(j);
                        let xj = positions.row(j);
                        for l in 0..d {
                            // -∇₁k(x_j, x_i) = (2/γ)(x_j − x_i) k
                            out[l] += kij * (gj[l] + c * (xj[l] - xi[l]));
                        }
                    }
                    for o in out.iter_mut() {
                        *o *= inv_n;
                    }
                }
                v
            }
            (KernelSystem::Dense(k), KernelSpec::Linear) => {
                let mut v = Mat::zeros(n, d);
                for i in 0..n {
                    let xi = positions.row(i);
                    let out = v.row_mut(i);
                    for j in 0..n {
                        let kij = k.entry(i, j);
                        for (l, o) in out.iter_mut().enumerate() {
                            // ∇₁k(x_j, x_i) = x_i
                            *o += kij * scores[(j, l)] - xi[l];
                        }
                    }
                    for o in out.iter_mut() {
                        *o *= inv_n;
                    }
                }
                v
            }
            (KernelSystem::Features(z), _) => {
                // (1/N) Σ_j (z_jᵀ z_i) g_j − x_i = z_iᵀ·C − x_i with C = ZᵀG / N
                let c = z.tr_matmul(scores).expect("shapes agree").scale(inv_n);
                let mut v = z.matmul(&c).expect("shapes agree");
                for i in 0..n {
                    for (o, x) in v.row_mut(i).iter_mut().zip(positions.row(i)) {
                        *o -= x;
                    }
                }
                v
            }
        }
    }
}

fn check_state(state: &EnsembleState, target: &ScoreModel) -> Result<()> {
    if state.dim() != target.dim() {
        return Err(Error::DimensionMismatch {
            expected: target.dim(),
            found: state.dim(),
        });
    }
    Ok(())
}

/// Unregularized drift `v` of the particle update, one row per particle.
///
/// `X − h·v` is the SVGD update, i.e. `v = −φ*` for the optimal Stein field.
pub fn drift(state: &EnsembleState, kernel: &KernelSpec, target: &ScoreModel) -> Result<Mat> {
    kernel.validate()?;
    check_state(state, target)?;
    let x = state.positions();
    let scores = target.grad_potential_rows(x)?;
    Ok(KernelSystem::build(kernel, x)?.drift(kernel, x, &scores))
}

/// The solved direction `((1−ν)/N·K + ν·I)⁻¹ v`; equal to `v` at `ν = 1`.
pub fn regularized_direction(
    state: &EnsembleState,
    kernel: &KernelSpec,
    target: &ScoreModel,
    nu: f64,
    cfg: &SolveConfig,
) -> Result<Mat> {
    check_nu(nu)?;
    kernel.validate()?;
    check_state(state, target)?;
    let x = state.positions();
    let scores = target.grad_potential_rows(x)?;
    let system = KernelSystem::build(kernel, x)?;
    let v = system.drift(kernel, x, &scores);
    if nu == 1.0 {
        return Ok(v);
    }
    system.solve_regularized(nu, &v, cfg)
}

fn apply_step(state: &EnsembleState, direction: &Mat, step: &StepSchedule) -> Result<EnsembleState> {
    let mut x = state.positions.clone();
    let mut accum = state.adagrad_accum.clone();
    match *step {
        StepSchedule::Constant { h } => {
            for (xi, g) in x.as_mut_slice().iter_mut().zip(direction.as_slice()) {
                *xi -= h * g;
            }
        }
        StepSchedule::Adagrad { base, fudge } => {
            for ((xi, a), g) in x
                .as_mut_slice()
                .iter_mut()
                .zip(accum.as_mut_slice())
                .zip(direction.as_slice())
            {
                *a += g * g;
                *xi -= base / (fudge + a.sqrt()) * g;
            }
        }
    }
    state.advanced(x, accum)
}

/// One regularized step with a constant step size `h`.
pub fn rsvgd_step(
    state: &EnsembleState,
    kernel: &KernelSpec,
    target: &ScoreModel,
    nu: f64,
    h: f64,
    cfg: &SolveConfig,
) -> Result<EnsembleState> {
    advance(state, kernel, target, nu, &StepSchedule::Constant { h }, cfg)
}

/// One regularized step under a step schedule; Adagrad rescales the solved
/// direction elementwise.
pub fn advance(
    state: &EnsembleState,
    kernel: &KernelSpec,
    target: &ScoreModel,
    nu: f64,
    step: &StepSchedule,
    cfg: &SolveConfig,
) -> Result<EnsembleState> {
    step.validate()?;
    let direction = regularized_direction(state, kernel, target, nu, cfg)?;
    apply_step(state, &direction, step)
}

/// Plain SVGD: `X − h·v` with no linear system.
pub fn svgd_step(
    state: &EnsembleState,
    kernel: &KernelSpec,
    target: &ScoreModel,
    step: &StepSchedule,
) -> Result<EnsembleState> {
    step.validate()?;
    let v = drift(state, kernel, target)?;
    apply_step(state, &v, step)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOptions {
    pub nu: NuSchedule,
    pub step: StepSchedule,
    pub iters: usize,
    pub solver: SolveConfig,
    pub bandwidth: BandwidthPolicy,
    /// Positions are recorded every `stride` iterations (and at the end).
    pub stride: usize,
}

impl RunOptions {
    pub fn new(nu: NuSchedule, step: StepSchedule, iters: usize) -> Self {
        RunOptions {
            nu,
            step,
            iters,
            solver: SolveConfig::Cholesky,
            bandwidth: BandwidthPolicy::Fixed,
            stride: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub iteration: usize,
    pub positions: Mat,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub snapshots: Vec<Snapshot>,
    /// Wall-clock of each step in milliseconds (bandwidth selection excluded).
    pub wall_ms: Vec<f64>,
    /// Kernel used for each step.
    pub kernels: Vec<KernelSpec>,
    pub final_state: EnsembleState,
}

/// Kernel for the next step under a bandwidth policy.
///
/// [`BandwidthPolicy::MedianOnce`] must be resolved first with
/// [`BandwidthPolicy::resolve`]; unresolved it is rejected.
pub fn step_kernel(kernel: &KernelSpec, policy: BandwidthPolicy, positions: &Mat) -> Result<KernelSpec> {
    match (policy, kernel) {
        (BandwidthPolicy::MedianPerIter, KernelSpec::Gaussian { .. }) => {
            kernel.with_bandwidth(median_heuristic(positions)?)
        }
        (BandwidthPolicy::MedianOnce, _) => Err(Error::InvalidParameter(
            "median-once bandwidth must be resolved against the initial ensemble".into(),
        )),
        _ => Ok(*kernel),
    }
}

/// Runs `opts.iters` steps from `init`.
///
/// Failures inside the loop are reported as [`Error::StepFailed`] carrying the
/// 1-based index of the failing step.
pub fn run(init: EnsembleState, kernel: &KernelSpec, target: &ScoreModel, opts: &RunOptions) -> Result<Trajectory> {
    opts.nu.validate()?;
    opts.step.validate()?;
    opts.solver.validate()?;
    kernel.validate()?;
    if opts.stride == 0 {
        return Err(Error::InvalidParameter("record stride must be >= 1".into()));
    }
    if let NuSchedule::Sequence(seq) = &opts.nu {
        if seq.len() < opts.iters {
            return Err(Error::ScheduleExhausted {
                needed: opts.iters,
                available: seq.len(),
            });
        }
    }

    let mut snapshots = vec![Snapshot {
        iteration: init.iteration(),
        positions: init.positions().clone(),
    }];
    let (kernel, policy) = opts.bandwidth.resolve(kernel, init.positions())?;
    let mut wall_ms = Vec::with_capacity(opts.iters);
    let mut kernels = Vec::with_capacity(opts.iters);
    let mut state = init;
    for k in 0..opts.iters {
        let nu = opts.nu.at(k)?;
        let step_kernel = step_kernel(&kernel, policy, state.positions()).map_err(|e| Error::StepFailed {
            iteration: k + 1,
            source: Box::new(e),
        })?;
        let start = Instant::now();
        state = advance(&state, &step_kernel, target, nu, &opts.step, &opts.solver).map_err(|e| Error::StepFailed {
            iteration: k + 1,
            source: Box::new(e),
        })?;
        wall_ms.push(start.elapsed().as_secs_f64() * 1e3);
        kernels.push(step_kernel);
        if (k + 1) % opts.stride == 0 || k + 1 == opts.iters {
            snapshots.push(Snapshot {
                iteration: state.iteration(),
                positions: state.positions().clone(),
            });
        }
    }
    Ok(Trajectory {
        snapshots,
        wall_ms,
        kernels,
        final_state: state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{kernel_eval, kernel_grad1};
    use crate::linalg::SymMatrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn g(b: f64) -> KernelSpec {
        KernelSpec::gaussian(b).unwrap()
    }

    fn state(rows: &[&[f64]]) -> EnsembleState {
        EnsembleState::new(Mat::from_rows(rows).unwrap()).unwrap()
    }

    // Independent pairwise oracle straight from the definition.
    fn brute_drift(x: &Mat, kernel: &KernelSpec, target: &ScoreModel) -> Mat {
        let (n, d) = x.shape();
        let mut v = Mat::zeros(n, d);
        for i in 0..n {
            for j in 0..n {
                let k = kernel_eval(kernel, x.row(j), x.row(i)).unwrap();
                let gv = target.grad_potential(x.row(j)).unwrap();
                let gk = kernel_grad1(kernel, x.row(j), x.row(i)).unwrap();
                for l in 0..d {
                    v[(i, l)] += (k * gv[l] - gk[l]) / n as f64;
                }
            }
        }
        v
    }

    fn random_ensemble(rng: &mut ChaCha8Rng, n: usize, d: usize) -> EnsembleState {
        EnsembleState::new(Mat::from_fn(n, d, |_, _| rng.random_range(-3.0..3.0))).unwrap()
    }

    #[test]
    fn single_particle_drift_is_the_score() {
        let target = ScoreModel::standard_gaussian(1);
        let v = drift(&state(&[&[2.0]]), &g(1.0), &target).unwrap();
        assert_eq!(v.as_slice(), &[2.0]);
        let v = drift(&state(&[&[0.0]]), &g(1.0), &target).unwrap();
        assert_eq!(v.as_slice(), &[0.0]);
    }

    #[test]
    fn drift_matches_pairwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mixture = ScoreModel::two_mode_mixture();
        let cov = SymMatrix::new(Mat::from_rows(&[[1.0, 0.2], [0.2, 2.0]]).unwrap()).unwrap();
        let gauss2 = ScoreModel::gaussian(vec![0.1, -0.3], cov).unwrap();
        for (target, d) in [(&mixture, 1), (&gauss2, 2)] {
            for n in [2, 7] {
                let s = random_ensemble(&mut rng, n, d);
                for kernel in [g(0.7), KernelSpec::Linear] {
                    let v = drift(&s, &kernel, target).unwrap();
                    let oracle = brute_drift(s.positions(), &kernel, target);
                    assert!(v.sub(&oracle).unwrap().max_abs() < 1e-12, "{kernel:?}");
                }
            }
        }
    }

    #[test]
    fn svgd_direction_moves_particles_apart() {
        // flat target: only the repulsion acts
        let flat = ScoreModel::custom(1, std::sync::Arc::new(|_: &[f64]| 0.0), None);
        let s = state(&[&[-0.1], &[0.1]]);
        let next = svgd_step(&s, &g(1.0), &flat, &StepSchedule::Constant { h: 0.1 }).unwrap();
        assert!(next.positions()[(0, 0)] < -0.1);
        assert!(next.positions()[(1, 0)] > 0.1);
    }

    #[test]
    fn scalar_step_example() {
        let target = ScoreModel::standard_gaussian(1);
        for nu in [0.1, 0.5, 1.0] {
            let next = rsvgd_step(&state(&[&[2.0]]), &g(1.0), &target, nu, 0.1, &SolveConfig::Cholesky).unwrap();
            assert!((next.positions()[(0, 0)] - 1.8).abs() < 1e-15);
            assert_eq!(next.iteration(), 1);
        }
    }

    #[test]
    fn zero_drift_is_a_fixed_point() {
        let target = ScoreModel::standard_gaussian(1);
        let s = state(&[&[0.0]]);
        let next = rsvgd_step(&s, &g(1.0), &target, 0.3, 0.5, &SolveConfig::Cholesky).unwrap();
        assert_eq!(next.positions(), s.positions());
    }

    #[test]
    fn run_decays_geometrically() {
        let target = ScoreModel::standard_gaussian(1);
        let opts = RunOptions::new(NuSchedule::Constant(0.4), StepSchedule::Constant { h: 0.1 }, 3);
        let traj = run(state(&[&[2.0]]), &g(1.0), &target, &opts).unwrap();
        assert_eq!(traj.snapshots.len(), 4);
        assert_eq!(traj.wall_ms.len(), 3);
        let x3 = traj.final_state.positions()[(0, 0)];
        assert!((x3 - 1.458).abs() < 1e-12, "{x3}");
    }

    #[test]
    fn run_with_zero_iterations_returns_init() {
        let target = ScoreModel::standard_gaussian(1);
        let init = state(&[&[2.0], &[1.0]]);
        let opts = RunOptions::new(NuSchedule::Constant(0.4), StepSchedule::adagrad(0.1), 0);
        let traj = run(init.clone(), &g(1.0), &target, &opts).unwrap();
        assert_eq!(traj.snapshots.len(), 1);
        assert_eq!(&traj.snapshots[0].positions, init.positions());
        assert_eq!(traj.final_state, init);
    }

    #[test]
    fn short_nu_sequence_is_rejected() {
        let target = ScoreModel::standard_gaussian(1);
        let opts = RunOptions::new(
            NuSchedule::Sequence(vec![0.5, 0.5]),
            StepSchedule::Constant { h: 0.1 },
            3,
        );
        assert!(matches!(
            run(state(&[&[2.0]]), &g(1.0), &target, &opts),
            Err(Error::ScheduleExhausted {
                needed: 3,
                available: 2
            })
        ));
        assert!(matches!(
            NuSchedule::Sequence(vec![0.5]).at(1),
            Err(Error::ScheduleExhausted { .. })
        ));
    }

    #[test]
    fn invalid_parameters_rejected() {
        let target = ScoreModel::standard_gaussian(1);
        let s = state(&[&[2.0]]);
        assert!(rsvgd_step(&s, &g(1.0), &target, 0.0, 0.1, &SolveConfig::Cholesky).is_err());
        assert!(rsvgd_step(&s, &g(1.0), &target, 1.5, 0.1, &SolveConfig::Cholesky).is_err());
        assert!(rsvgd_step(&s, &g(1.0), &target, 0.5, -0.1, &SolveConfig::Cholesky).is_err());
        assert!(drift(&s, &g(1.0), &ScoreModel::standard_gaussian(2)).is_err());
    }

    #[test]
    fn stride_controls_recording() {
        let target = ScoreModel::standard_gaussian(1);
        let mut opts = RunOptions::new(NuSchedule::Constant(1.0), StepSchedule::Constant { h: 0.1 }, 7);
        opts.stride = 3;
        let traj = run(state(&[&[2.0], &[0.5]]), &g(1.0), &target, &opts).unwrap();
        let its: Vec<usize> = traj.snapshots.iter().map(|s| s.iteration).collect();
        assert_eq!(its, vec![0, 3, 6, 7]);
    }

    #[test]
    fn median_once_keeps_the_initial_bandwidth() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let target = ScoreModel::two_mode_mixture();
        let init = random_ensemble(&mut rng, 25, 1);
        let h0 = median_heuristic(init.positions()).unwrap();
        let mut opts = RunOptions::new(NuSchedule::Constant(0.5), StepSchedule::Constant { h: 0.2 }, 5);
        opts.bandwidth = BandwidthPolicy::MedianOnce;
        let traj = run(init.clone(), &g(1.0), &target, &opts).unwrap();
        assert!(traj.kernels.iter().all(|k| k.bandwidth() == Some(h0)));
        assert!(step_kernel(&g(1.0), BandwidthPolicy::MedianOnce, init.positions()).is_err());
    }

    #[test]
    fn nu_one_run_equals_dedicated_svgd_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let target = ScoreModel::two_mode_mixture();
        let init = random_ensemble(&mut rng, 30, 1);
        let step = StepSchedule::adagrad(0.3);
        let mut opts = RunOptions::new(NuSchedule::Constant(1.0), step, 20);
        opts.bandwidth = BandwidthPolicy::MedianPerIter;
        let traj = run(init.clone(), &g(1.0), &target, &opts).unwrap();

        let mut s = init;
        for _ in 0..20 {
            let k = g(median_heuristic(s.positions()).unwrap());
            s = svgd_step(&s, &k, &target, &step).unwrap();
        }
        assert_eq!(traj.final_state, s);
    }

    #[test]
    fn degenerate_ensemble_still_solves() {
        let target = ScoreModel::standard_gaussian(1);
        let s = state(&[&[1.0], &[1.0], &[1.0]]);
        let next = rsvgd_step(&s, &g(1.0), &target, 0.1, 0.1, &SolveConfig::Cholesky).unwrap();
        assert!(next.positions().is_finite());
    }

    #[test]
    fn cholesky_and_cg_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let target = ScoreModel::two_mode_mixture();
        let cg = SolveConfig::Cg {
            tol: 1e-12,
            max_iter: 10_000,
            jacobi_precondition: true,
        };
        for n in [5, 40, 100] {
            let s = random_ensemble(&mut rng, n, 1);
            let k = g(median_heuristic(s.positions()).unwrap());
            let a = regularized_direction(&s, &k, &target, 0.1, &SolveConfig::Cholesky).unwrap();
            let b = regularized_direction(&s, &k, &target, 0.1, &cg).unwrap();
            assert!(a.sub(&b).unwrap().frobenius() <= 1e-8 * a.frobenius());
        }
    }

    #[test]
    fn linear_kernel_feature_solve_matches_dense_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let target = ScoreModel::standard_gaussian(2);
        let s = random_ensemble(&mut rng, 12, 2);
        let dense = KernelSystem::Dense(gram(&KernelSpec::Linear, s.positions()).unwrap());
        let scores = target.grad_potential_rows(s.positions()).unwrap();
        let v = dense.drift(&KernelSpec::Linear, s.positions(), &scores);
        let expected = dense.solve_regularized(0.3, &v, &SolveConfig::Cholesky).unwrap();
        let got = regularized_direction(&s, &KernelSpec::Linear, &target, 0.3, &SolveConfig::Cholesky).unwrap();
        assert!(got.sub(&expected).unwrap().frobenius() <= 1e-10 * expected.frobenius());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn permutation_equivariance(seed in any::<u64>(), n in 2usize..12, nu in 0.05f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let target = ScoreModel::two_mode_mixture();
            let s = random_ensemble(&mut rng, n, 1);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.reverse();
            perm.rotate_left(seed as usize % n);
            let ps = EnsembleState::new(s.positions().permute_rows(&perm)).unwrap();
            let k = g(1.1);
            let v = drift(&s, &k, &target).unwrap();
            let pv = drift(&ps, &k, &target).unwrap();
            prop_assert!(v.permute_rows(&perm).sub(&pv).unwrap().max_abs() < 1e-12);
            let a = rsvgd_step(&s, &k, &target, nu, 0.05, &SolveConfig::Cholesky).unwrap();
            let b = rsvgd_step(&ps, &k, &target, nu, 0.05, &SolveConfig::Cholesky).unwrap();
            prop_assert!(a.positions().permute_rows(&perm).sub(b.positions()).unwrap().max_abs() < 1e-10);
        }

        #[test]
        fn nu_one_reduces_to_svgd(seed in any::<u64>(), n in 1usize..20, d in 1usize..3, h in 0.001f64..0.5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let target = ScoreModel::standard_gaussian(d);
            let s = random_ensemble(&mut rng, n, d);
            let k = g(rng.random_range(0.2..3.0));
            let stepped = rsvgd_step(&s, &k, &target, 1.0, h, &SolveConfig::Cholesky).unwrap();
            let v = drift(&s, &k, &target).unwrap();
            let expected = s.positions().sub(&v.scale(h)).unwrap();
            let err = stepped.positions().sub(&expected).unwrap().frobenius();
            prop_assert!(err <= 1e-10 * s.positions().frobenius());
        }
    }
}
