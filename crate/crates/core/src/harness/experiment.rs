//! Seeded multi-replicate experiments.
//!
//! Replicate `r` owns a ChaCha8 generator seeded with `seed ⊕ r`. The
//! generator first draws the initial ensemble and then, under the
//! per-replicate policy, the cosine parameters `(ω, b)`. Replicates may run
//! on a worker pool; rows are always gathered in `(replicate, iteration)`
//! order before a single write.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::output::{fmt_f64, write_csv};
use crate::diagnostics::{ksd_vstat, reg_ksd, squared_errors, DiagReport};
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::matrix::Mat;
use crate::sampler::{advance, step_kernel, BandwidthPolicy, EnsembleState, NuSchedule};
use crate::targets::{draw_cosine_params, sample_init_with, ScoreModel, TestFunction};

/// Environment variable capping the number of replicate workers.
pub const THREADS_ENV: &str = "STEINFLOW_THREADS";

pub const RESULT_COLUMNS: [&str; 8] = [
    "replicate",
    "iteration",
    "wall_ms",
    "ksd2",
    "reg_ksd2",
    "mse_h1",
    "mse_h2",
    "mse_h3",
];

/// One recorded iteration of one replicate.
///
/// `mse_h*` are the squared errors of this replicate's ensemble averages; the
/// mean squared error is their average over replicates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResultRow {
    pub replicate: usize,
    pub iteration: usize,
    pub wall_ms: f64,
    pub ksd2: f64,
    pub reg_ksd2: f64,
    pub mse_h1: f64,
    pub mse_h2: f64,
    pub mse_h3: f64,
}

impl ResultRow {
    /// Marks the iteration at which a run aborted; every metric is NaN.
    pub fn sentinel(replicate: usize, iteration: usize) -> Self {
        ResultRow {
            replicate,
            iteration,
            wall_ms: f64::NAN,
            ksd2: f64::NAN,
            reg_ksd2: f64::NAN,
            mse_h1: f64::NAN,
            mse_h2: f64::NAN,
            mse_h3: f64::NAN,
        }
    }

    pub fn is_sentinel(&self) -> bool {
        self.ksd2.is_nan()
    }

    pub fn fields(&self) -> Vec<String> {
        vec![
            self.replicate.to_string(),
            self.iteration.to_string(),
            fmt_f64(self.wall_ms),
            fmt_f64(self.ksd2),
            fmt_f64(self.reg_ksd2),
            fmt_f64(self.mse_h1),
            fmt_f64(self.mse_h2),
            fmt_f64(self.mse_h3),
        ]
    }

    pub fn mse(&self) -> [f64; 3] {
        [self.mse_h1, self.mse_h2, self.mse_h3]
    }
}

/// Everything a replicate produced, including a failure if it aborted.
#[derive(Debug)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub rows: Vec<ResultRow>,
    pub cosine: TestFunction,
    pub final_positions: Mat,
    pub failure: Option<Error>,
}

/// Parses a worker-count override.
pub fn parse_thread_cap(raw: &str) -> Result<usize> {
    raw.trim()
        .parse()
        .ok()
        .filter(|&n: &usize| n >= 1)
        .ok_or_else(|| Error::config(THREADS_ENV, format!("expected a positive integer, got `{raw}`")))
}

/// Builds the worker pool, honouring [`THREADS_ENV`].
pub fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(raw) = std::env::var(THREADS_ENV) {
        builder = builder.num_threads(parse_thread_cap(&raw)?);
    }
    builder
        .build()
        .map_err(|e| Error::Evaluation(format!("could not start worker pool: {e}")))
}

/// Runs `f` on the worker pool so that nested parallel work honours the cap.
pub(crate) fn in_worker_pool<T: Send>(f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    worker_pool()?.install(f)
}

/// `ν` used for diagnostics at iteration `k`: the value of the step leaving
/// `k`, or the last value of a sequence at the end of the run.
fn diagnostic_nu(nu: &NuSchedule, k: usize) -> f64 {
    match nu {
        NuSchedule::Constant(v) => *v,
        NuSchedule::Sequence(seq) => seq[k.min(seq.len() - 1)],
    }
}

struct Replicate<'a> {
    cfg: &'a ExperimentConfig,
    target: &'a ScoreModel,
    kernel: KernelSpec,
    policy: BandwidthPolicy,
    replicate: usize,
    cosine: TestFunction,
}

impl Replicate<'_> {
    fn row(&self, state: &EnsembleState, wall_ms: f64) -> Result<ResultRow> {
        let x = state.positions();
        let kernel = step_kernel(&self.kernel, self.policy, x)?;
        let nu = diagnostic_nu(&self.cfg.nu, state.iteration());
        let ksd2 = ksd_vstat(x, &kernel, self.target)?;
        let reg = if nu == 1.0 {
            ksd2
        } else {
            reg_ksd(x, &kernel, self.target, nu, &self.cfg.solver)?
        };
        let errs = squared_errors(x, self.target, self.cosine)?;
        let report = DiagReport::new(ksd2, reg, errs.into_iter().collect())?;
        Ok(ResultRow {
            replicate: self.replicate,
            iteration: state.iteration(),
            wall_ms,
            ksd2: report.ksd2,
            reg_ksd2: report.reg_ksd2,
            mse_h1: report.mse["h1"],
            mse_h2: report.mse["h2"],
            mse_h3: report.mse["h3"],
        })
    }

    fn run(mut self, init: Mat) -> ReplicateResult {
        let mut rows = Vec::new();
        match self.policy.resolve(&self.kernel, &init) {
            Ok((kernel, policy)) => (self.kernel, self.policy) = (kernel, policy),
            Err(e) => return self.abort(rows, init, 0, e),
        }
        let mut state = match EnsembleState::new(init.clone()) {
            Ok(s) => s,
            Err(e) => return self.abort(rows, init, 0, e),
        };
        match self.row(&state, 0.0) {
            Ok(r) => rows.push(r),
            Err(e) => return self.abort(rows, init, 0, e),
        }
        let cfg = self.cfg;
        for k in 0..cfg.iters {
            let step = (|| {
                let nu = cfg.nu.at(k)?;
                let kernel = step_kernel(&self.kernel, self.policy, state.positions())?;
                let start = Instant::now();
                let next = advance(&state, &kernel, self.target, nu, &cfg.step, &cfg.solver)?;
                Ok((next, start.elapsed().as_secs_f64() * 1e3))
            })();
            let (next, elapsed) = match step {
                Ok(v) => v,
                Err(e) => return self.abort(rows, state.into_positions(), k + 1, e),
            };
            state = next;
            if (k + 1) % cfg.stride == 0 || k + 1 == cfg.iters {
                let wall = if cfg.wall_clock { elapsed } else { 0.0 };
                match self.row(&state, wall) {
                    Ok(r) => rows.push(r),
                    Err(e) => return self.abort(rows, state.into_positions(), k + 1, e),
                }
            }
        }
        ReplicateResult {
            replicate: self.replicate,
            rows,
            cosine: self.cosine,
            final_positions: state.into_positions(),
            failure: None,
        }
    }

    fn abort(&self, mut rows: Vec<ResultRow>, positions: Mat, iteration: usize, e: Error) -> ReplicateResult {
        rows.push(ResultRow::sentinel(self.replicate, iteration));
        ReplicateResult {
            replicate: self.replicate,
            rows,
            cosine: self.cosine,
            final_positions: positions,
            failure: Some(Error::StepFailed {
                iteration,
                source: Box::new(e),
            }),
        }
    }
}

/// Runs replicate `r` of `cfg` on the calling thread.
pub fn run_replicate(cfg: &ExperimentConfig, target: &ScoreModel, replicate: usize) -> Result<ReplicateResult> {
    let (kernel, policy) = cfg.kernel.build()?;
    let spec = cfg.init_spec(replicate)?;
    let mut rng = spec.rng();
    let init = sample_init_with(&spec, cfg.particles, target.dim(), &mut rng)?;
    let cosine = cfg.h3.fixed_function().unwrap_or_else(|| draw_cosine_params(&mut rng));
    Ok(Replicate {
        cfg,
        target,
        kernel,
        policy,
        replicate,
        cosine,
    }
    .run(init))
}

/// Runs every replicate without writing anything. Failed replicates carry
/// their error in [`ReplicateResult::failure`].
pub fn run_replicates(cfg: &ExperimentConfig) -> Result<Vec<ReplicateResult>> {
    cfg.validate()?;
    let target = cfg.target.build()?;
    let pool = worker_pool()?;
    pool.install(|| {
        (0..cfg.replicates)
            .into_par_iter()
            .map(|r| run_replicate(cfg, &target, r))
            .collect()
    })
}

fn first_failure(results: Vec<ReplicateResult>) -> Result<Vec<ReplicateResult>> {
    if let Some(pos) = results.iter().position(|r| r.failure.is_some()) {
        let mut results = results;
        let failed = results.swap_remove(pos);
        return Err(failed.failure.expect("checked above"));
    }
    Ok(results)
}

pub fn result_rows(results: &[ReplicateResult]) -> Vec<Vec<String>> {
    results
        .iter()
        .flat_map(|r| r.rows.iter().map(ResultRow::fields))
        .collect()
}

/// Runs the experiment and writes one row per (replicate, recorded iteration)
/// to `cfg.output`. If a replicate fails, the rows gathered so far, ending in a
/// sentinel row, are still written before the error is returned.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ReplicateResult>> {
    let results = run_replicates(cfg)?;
    write_csv(&cfg.output, &RESULT_COLUMNS, &result_rows(&results))?;
    first_failure(results)
}

/// Replicate-mean squared errors per recorded iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MsePoint {
    pub iteration: usize,
    /// `[h1, h2, h3]`
    pub mse: [f64; 3],
}

impl MsePoint {
    pub fn log10(&self) -> [f64; 3] {
        self.mse.map(f64::log10)
    }
}

/// Averages the per-replicate squared errors at each recorded iteration.
pub fn mse_curve(results: &[ReplicateResult]) -> Result<Vec<MsePoint>> {
    let Some(first) = results.first() else {
        return Err(Error::InvalidParameter("no replicates to average".into()));
    };
    if results.iter().any(|r| r.failure.is_some()) {
        return Err(Error::Precondition("cannot average replicates that aborted".into()));
    }
    let r = results.len() as f64;
    first
        .rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut mse = [0.0; 3];
            for res in results {
                let other = res
                    .rows
                    .get(i)
                    .filter(|o| o.iteration == row.iteration)
                    .ok_or_else(|| Error::Precondition("replicates recorded different iterations".into()))?;
                for (m, v) in mse.iter_mut().zip(other.mse()) {
                    *m += v / r;
                }
            }
            Ok(MsePoint {
                iteration: row.iteration,
                mse,
            })
        })
        .collect()
}

pub const SWEEP_COLUMNS: [&str; 7] = [
    "nu",
    "particles",
    "iteration",
    "log10_mse_h1",
    "log10_mse_h2",
    "log10_mse_h3",
    "mean_wall_ms",
];

/// Final-iteration summary of one sweep point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub nu: f64,
    pub particles: usize,
    pub iteration: usize,
    pub log10_mse: [f64; 3],
    pub mean_wall_ms: f64,
}

impl SweepRow {
    pub fn fields(&self) -> Vec<String> {
        let mut f = vec![fmt_f64(self.nu), self.particles.to_string(), self.iteration.to_string()];
        f.extend(self.log10_mse.iter().map(|&v| fmt_f64(v)));
        f.push(fmt_f64(self.mean_wall_ms));
        f
    }
}

/// Output path for one sweep point: `dir/stem_nu<ν>_n<N>.csv`.
pub fn sweep_point_path(base: &Path, nu: f64, particles: usize) -> PathBuf {
    let stem = base
        .file_stem()
        .map_or("sweep".into(), |s| s.to_string_lossy().into_owned());
    base.with_file_name(format!("{stem}_nu{nu}_n{particles}.csv"))
}

/// Summarizes a finished experiment at its last recorded iteration.
pub fn summarize(cfg: &ExperimentConfig, results: &[ReplicateResult]) -> Result<SweepRow> {
    let curve = mse_curve(results)?;
    let last = curve.last().expect("every replicate records iteration 0");
    let walls: Vec<f64> = results
        .iter()
        .flat_map(|r| r.rows.iter().filter(|row| row.iteration > 0).map(|row| row.wall_ms))
        .collect();
    let mean_wall_ms = if walls.is_empty() {
        0.0
    } else {
        walls.iter().sum::<f64>() / walls.len() as f64
    };
    Ok(SweepRow {
        nu: diagnostic_nu(&cfg.nu, 0),
        particles: cfg.particles,
        iteration: last.iteration,
        log10_mse: last.log10(),
        mean_wall_ms,
    })
}

/// Runs `cfg` for every `(ν, N)` pair. Each point writes its own result file
/// next to `cfg.output`, and the summary goes to `cfg.output` itself.
pub fn sweep(cfg: &ExperimentConfig, nus: &[f64], particle_counts: &[usize]) -> Result<Vec<SweepRow>> {
    if nus.is_empty() || particle_counts.is_empty() {
        return Err(Error::InvalidParameter(
            "sweep needs at least one nu and one particle count".into(),
        ));
    }
    let mut summary = Vec::new();
    for &nu in nus {
        for &n in particle_counts {
            let mut point = cfg.clone();
            point.nu = NuSchedule::Constant(nu);
            point.particles = n;
            point.output = sweep_point_path(&cfg.output, nu, n);
            let results = run_experiment(&point)?;
            summary.push(summarize(&point, &results)?);
        }
    }
    let rows: Vec<Vec<String>> = summary.iter().map(SweepRow::fields).collect();
    write_csv(&cfg.output, &SWEEP_COLUMNS, &rows)?;
    Ok(summary)
}

pub const DIAGNOSE_COLUMNS: [&str; 4] = ["replicate", "iteration", "ksd2", "reg_ksd2"];

/// Runs the experiment and writes only the KSD and regularized-KSD trajectory.
pub fn diagnose(cfg: &ExperimentConfig) -> Result<Vec<ReplicateResult>> {
    let results = run_replicates(cfg)?;
    let rows: Vec<Vec<String>> = results
        .iter()
        .flat_map(|r| r.rows.iter())
        .map(|row| {
            vec![
                row.replicate.to_string(),
                row.iteration.to_string(),
                fmt_f64(row.ksd2),
                fmt_f64(row.reg_ksd2),
            ]
        })
        .collect();
    write_csv(&cfg.output, &DIAGNOSE_COLUMNS, &rows)?;
    first_failure(results)
}
