//! Per-iteration timing of the regularized update against plain SVGD.

use std::time::Instant;

use super::config::ExperimentConfig;
use super::experiment::in_worker_pool;
use super::output::{fmt_f64, write_csv};
use crate::error::{Error, Result};
use crate::sampler::{advance, step_kernel, EnsembleState};
use crate::targets::sample_init;

/// Untimed steps taken before measuring.
pub const WARMUP_ITERS: usize = 3;
/// Lower bound on timed steps per point; `cfg.iters` raises it.
pub const MIN_TIMED_ITERS: usize = 20;

pub const BENCH_COLUMNS: [&str; 4] = ["particles", "reg_ms", "svgd_ms", "overhead_ms"];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchRow {
    pub particles: usize,
    /// Mean per-iteration time at the configured `ν < 1`.
    pub reg_ms: f64,
    /// Mean per-iteration time at `ν = 1`.
    pub svgd_ms: f64,
    pub overhead_ms: f64,
}

impl BenchRow {
    pub fn fields(&self) -> Vec<String> {
        vec![
            self.particles.to_string(),
            fmt_f64(self.reg_ms),
            fmt_f64(self.svgd_ms),
            fmt_f64(self.overhead_ms),
        ]
    }
}

/// Mean milliseconds per step of `nu`, measured around the update only.
fn time_steps(cfg: &ExperimentConfig, n: usize, nu: f64) -> Result<f64> {
    let target = cfg.target.build()?;
    let (kernel, policy) = cfg.kernel.build()?;
    let mut state = EnsembleState::new(sample_init(&cfg.init_spec(0)?, n, target.dim())?)?;
    let (kernel, policy) = policy.resolve(&kernel, state.positions())?;
    let timed = cfg.iters.max(MIN_TIMED_ITERS);
    let mut total = 0.0;
    for k in 0..WARMUP_ITERS + timed {
        let kern = step_kernel(&kernel, policy, state.positions())?;
        let start = Instant::now();
        state = advance(&state, &kern, &target, nu, &cfg.step, &cfg.solver)?;
        if k >= WARMUP_ITERS {
            total += start.elapsed().as_secs_f64() * 1e3;
        }
    }
    Ok(total / timed as f64)
}

/// Times `cfg` at each particle count and writes the table to `cfg.output`.
///
/// `ν` is the first value of the configured schedule and must be below 1.
pub fn bench_timing(cfg: &ExperimentConfig, counts: &[usize]) -> Result<Vec<BenchRow>> {
    cfg.validate()?;
    if counts.is_empty() {
        return Err(Error::InvalidParameter("need at least one particle count".into()));
    }
    if counts.windows(2).any(|w| w[0] >= w[1]) || counts[0] < 2 {
        return Err(Error::InvalidParameter(
            "particle counts must be strictly increasing and at least 2".into(),
        ));
    }
    let nu = cfg.nu.at(0)?;
    if nu >= 1.0 {
        return Err(Error::config("sampler.nu", "bench compares nu < 1 against nu = 1"));
    }
    let rows = in_worker_pool(|| {
        counts
            .iter()
            .map(|&n| {
                let reg_ms = time_steps(cfg, n, nu)?;
                let svgd_ms = time_steps(cfg, n, 1.0)?;
                Ok(BenchRow {
                    particles: n,
                    reg_ms,
                    svgd_ms,
                    overhead_ms: reg_ms - svgd_ms,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let table: Vec<Vec<String>> = rows.iter().map(BenchRow::fields).collect();
    write_csv(&cfg.output, &BENCH_COLUMNS, &table)?;
    Ok(rows)
}

/// Least-squares slope of `ln y` against `ln x`. `None` with fewer than two
/// points or any non-positive value.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 || x.iter().chain(y).any(|&v| !(v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}
