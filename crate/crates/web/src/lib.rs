//! WebAssembly bindings for the demo page in `www/`.
//!
//! Each exported function returns a flat `Float64Array`; the page slices it
//! and draws on a canvas. The `*_impl` functions hold the logic so native
//! tests can exercise it without a browser.

use steinflow::diagnostics::reg_ksd;
use steinflow::gaussian_flow::{discrete_step, kl_bound_sequence, schedule_params, MatrixFlowState};
use steinflow::sampler::{advance, step_kernel, BandwidthPolicy};
use steinflow::{
    median_heuristic, sample_init, EnsembleState, InitSpec, KernelSpec, ScoreModel, SolveConfig, StepSchedule,
    SymMatrix,
};
use wasm_bindgen::prelude::*;

/// Histogram range used by [`mixture_histogram`].
pub const HIST_LO: f64 = -8.0;
pub const HIST_HI: f64 = 8.0;

const MAX_PARTICLES: usize = 1000;

fn js(e: steinflow::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn check_particles(n: usize) -> steinflow::Result<()> {
    if !(2..=MAX_PARTICLES).contains(&n) {
        return Err(steinflow::Error::InvalidParameter(format!(
            "particles must lie in [2, {MAX_PARTICLES}], got {n}"
        )));
    }
    Ok(())
}

/// Runs the sampler on `(1/3)N(−2,1) + (2/3)N(2,1)` from `N(−10,1)` and
/// returns `2·bins` values: the particle density histogram on
/// `[HIST_LO, HIST_HI]` followed by the target density at the bin centres,
/// normalized over that range.
pub fn mixture_histogram_impl(
    nu: f64,
    particles: usize,
    iters: usize,
    step_size: f64,
    seed: u64,
    bins: usize,
) -> steinflow::Result<Vec<f64>> {
    check_particles(particles)?;
    if bins == 0 {
        return Err(steinflow::Error::InvalidParameter("bins must be >= 1".into()));
    }
    let target = ScoreModel::two_mode_mixture();
    let init = InitSpec::new(vec![-10.0], vec![1.0], seed)?;
    let mut state = EnsembleState::new(sample_init(&init, particles, 1)?)?;
    let kernel = KernelSpec::gaussian(1.0)?;
    let step = StepSchedule::adagrad(step_size);
    for _ in 0..iters {
        let k = step_kernel(&kernel, BandwidthPolicy::MedianPerIter, state.positions())?;
        state = advance(&state, &k, &target, nu, &step, &SolveConfig::Cholesky)?;
    }
    let width = (HIST_HI - HIST_LO) / bins as f64;
    let mut out = vec![0.0; 2 * bins];
    for &x in state.positions().as_slice() {
        let b = ((x - HIST_LO) / width).floor();
        if b >= 0.0 && (b as usize) < bins {
            out[b as usize] += 1.0 / (particles as f64 * width);
        }
    }
    // the log-density is unnormalized; normalize over the plotted range
    for b in 0..bins {
        let c = HIST_LO + (b as f64 + 0.5) * width;
        out[bins + b] = target.log_density(&[c])?.exp();
    }
    let mass: f64 = out[bins..].iter().sum::<f64>() * width;
    out[bins..].iter_mut().for_each(|v| *v /= mass);
    Ok(out)
}

#[wasm_bindgen]
pub fn mixture_histogram(
    nu: f64,
    particles: usize,
    iters: usize,
    step_size: f64,
    seed: u64,
    bins: usize,
) -> Result<Vec<f64>, JsError> {
    mixture_histogram_impl(nu, particles, iters, step_size, seed, bins).map_err(js)
}

/// Scalar Gaussian flow from variance `sigma0` towards `q` under the adaptive
/// schedule. Returns `steps + 1` triples `(KL, bound, ν)`; `ν` of the last
/// triple is 0 since no step leaves it.
pub fn gaussian_flow_impl(sigma0: f64, q: f64, delta: f64, steps: usize) -> steinflow::Result<Vec<f64>> {
    let mut state = MatrixFlowState::new(SymMatrix::from_diag(&[sigma0]), SymMatrix::from_diag(&[q]))?;
    let kl0 = state.kl()?;
    let mut kls = vec![kl0];
    let mut schedule = Vec::with_capacity(steps);
    for _ in 0..steps {
        let p = match schedule_params(&state, delta) {
            Ok(p) => p,
            // converged exactly: nothing left to schedule
            Err(steinflow::Error::DegenerateSchedule) => break,
            Err(e) => return Err(e),
        };
        state = discrete_step(&state, p.nu, p.h)?;
        schedule.push(p);
        kls.push(state.kl()?);
    }
    let bounds = kl_bound_sequence(kl0, &schedule, 1.0 / q)?;
    let mut out = Vec::with_capacity(3 * kls.len());
    for (i, (kl, bound)) in kls.iter().zip(&bounds).enumerate() {
        out.extend([*kl, *bound, schedule.get(i).map_or(0.0, |p| p.nu)]);
    }
    Ok(out)
}

#[wasm_bindgen]
pub fn gaussian_flow(sigma0: f64, q: f64, delta: f64, steps: usize) -> Result<Vec<f64>, JsError> {
    gaussian_flow_impl(sigma0, q, delta, steps).map_err(js)
}

/// Regularized KSD of an `N(shift, 1)` ensemble against `N(0, 1)` for each `ν`
/// in `nus`, using a median-bandwidth Gaussian kernel.
pub fn reg_ksd_curve_impl(particles: usize, shift: f64, seed: u64, nus: &[f64]) -> steinflow::Result<Vec<f64>> {
    check_particles(particles)?;
    let x = sample_init(&InitSpec::new(vec![shift], vec![1.0], seed)?, particles, 1)?;
    let kernel = KernelSpec::gaussian(median_heuristic(&x)?)?;
    let target = ScoreModel::standard_gaussian(1);
    nus.iter()
        .map(|&nu| reg_ksd(&x, &kernel, &target, nu, &SolveConfig::Cholesky))
        .collect()
}

#[wasm_bindgen]
pub fn reg_ksd_curve(particles: usize, shift: f64, seed: u64, nus: Vec<f64>) -> Result<Vec<f64>, JsError> {
    reg_ksd_curve_impl(particles, shift, seed, &nus).map_err(js)
}
