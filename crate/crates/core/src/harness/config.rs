//! Experiment configuration documents.
//!
//! A config is a TOML file with four flat sections. Every key, its type and
//! default is listed in the README; unknown keys are rejected so that typos do
//! not silently fall back to defaults.
//!
//! ```toml
//! [target]
//! kind = "mixture"
//! weights = [0.3333333333333333, 0.6666666666666666]
//! means = [-2.0, 2.0]
//! variances = [1.0, 1.0]
//!
//! [kernel]
//! kind = "gaussian"
//! bandwidth = "median"
//!
//! [sampler]
//! nu = 0.1
//! step = "adagrad"
//! step_size = 2.0
//!
//! [run]
//! particles = 200
//! iters = 100
//! seed = 7
//! output = "out.csv"
//! ```
//!
//! `run.preset = "fig1"` fills in the two-mode mixture experiment; explicit
//! keys still override it.

use std::path::PathBuf;

use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::linalg::{SolveConfig, SymMatrix};
use crate::matrix::Mat;
use crate::sampler::{BandwidthPolicy, NuSchedule, StepSchedule, DEFAULT_ADAGRAD_FUDGE};
use crate::targets::{InitSpec, ScoreModel, TestFunction};

pub const DEFAULT_STEP_SIZE: f64 = 0.1;
pub const DEFAULT_CG_TOL: f64 = 1e-10;
pub const DEFAULT_CG_MAX_ITER: usize = 1000;

/// Adagrad base rate of the `fig1` preset. The default 0.1 leaves the
/// ensemble near its initialization after 100 iterations.
pub const FIG1_STEP_SIZE: f64 = 2.0;

#[derive(Clone, Debug, PartialEq)]
pub enum TargetConfig {
    Gaussian {
        mean: Vec<f64>,
        covariance: Vec<Vec<f64>>,
    },
    Mixture {
        weights: Vec<f64>,
        means: Vec<f64>,
        variances: Vec<f64>,
    },
}

impl TargetConfig {
    pub fn dim(&self) -> usize {
        match self {
            TargetConfig::Gaussian { mean, .. } => mean.len(),
            TargetConfig::Mixture { .. } => 1,
        }
    }

    pub fn build(&self) -> Result<ScoreModel> {
        match self {
            TargetConfig::Gaussian { mean, covariance } => {
                let cov = Mat::from_rows(covariance).map_err(|e| Error::config("target.covariance", e.to_string()))?;
                let cov = SymMatrix::new(cov).map_err(|e| Error::config("target.covariance", e.to_string()))?;
                ScoreModel::gaussian(mean.clone(), cov).map_err(|e| Error::config("target", e.to_string()))
            }
            TargetConfig::Mixture {
                weights,
                means,
                variances,
            } => ScoreModel::mixture1d(weights.clone(), means.clone(), variances.clone())
                .map_err(|e| Error::config("target", e.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KernelConfig {
    /// Gaussian kernel with the median heuristic recomputed every iteration.
    GaussianMedian,
    /// Median bandwidth of the initial ensemble, held fixed afterwards.
    GaussianMedianOnce,
    GaussianFixed {
        bandwidth: f64,
    },
    Linear,
}

impl KernelConfig {
    /// Kernel and bandwidth policy for the sampler. The median variant starts
    /// from a placeholder bandwidth that is replaced before the first step.
    pub fn build(&self) -> Result<(KernelSpec, BandwidthPolicy)> {
        match *self {
            KernelConfig::GaussianMedian => Ok((KernelSpec::gaussian(1.0)?, BandwidthPolicy::MedianPerIter)),
            KernelConfig::GaussianMedianOnce => Ok((KernelSpec::gaussian(1.0)?, BandwidthPolicy::MedianOnce)),
            KernelConfig::GaussianFixed { bandwidth } => Ok((
                KernelSpec::gaussian(bandwidth).map_err(|e| Error::config("kernel.bandwidth", e.to_string()))?,
                BandwidthPolicy::Fixed,
            )),
            KernelConfig::Linear => Ok((KernelSpec::Linear, BandwidthPolicy::Fixed)),
        }
    }
}

/// How `(ω, b)` of the cosine test function is chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum H3Policy {
    /// Drawn once per replicate from the replicate generator, after the initial ensemble.
    PerReplicate,
    Fixed {
        omega: f64,
        phase: f64,
    },
}

impl H3Policy {
    pub fn fixed_function(&self) -> Option<TestFunction> {
        match *self {
            H3Policy::PerReplicate => None,
            H3Policy::Fixed { omega, phase } => Some(TestFunction::Cosine { omega, phase }),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub target: TargetConfig,
    pub kernel: KernelConfig,
    pub nu: NuSchedule,
    pub step: StepSchedule,
    pub solver: SolveConfig,
    pub particles: usize,
    pub iters: usize,
    pub replicates: usize,
    pub seed: u64,
    pub output: PathBuf,
    pub stride: usize,
    pub init_mean: Vec<f64>,
    pub init_std: Vec<f64>,
    pub h3: H3Policy,
    /// Record measured step times in `wall_ms`. Off by default so that output
    /// files are byte-for-byte reproducible.
    pub wall_clock: bool,
}

impl ExperimentConfig {
    /// The two-mode mixture experiment: `(1/3)N(−2,1) + (2/3)N(2,1)`, init
    /// `N(−10,1)`, median-bandwidth Gaussian kernel, Adagrad, 200 particles,
    /// 100 iterations, 20 replicates.
    pub fn fig1(seed: u64, output: impl Into<PathBuf>) -> Self {
        ExperimentConfig {
            target: TargetConfig::Mixture {
                weights: vec![1.0 / 3.0, 2.0 / 3.0],
                means: vec![-2.0, 2.0],
                variances: vec![1.0, 1.0],
            },
            kernel: KernelConfig::GaussianMedian,
            nu: NuSchedule::Constant(1.0),
            step: StepSchedule::adagrad(FIG1_STEP_SIZE),
            solver: SolveConfig::Cholesky,
            particles: 200,
            iters: 100,
            replicates: 20,
            seed,
            output: output.into(),
            stride: 1,
            init_mean: vec![-10.0],
            init_std: vec![1.0],
            h3: H3Policy::PerReplicate,
            wall_clock: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.target.dim()
    }

    /// Initialization for replicate `r`, seeded with `seed ⊕ r`.
    pub fn init_spec(&self, replicate: usize) -> Result<InitSpec> {
        InitSpec::new(
            self.init_mean.clone(),
            self.init_std.clone(),
            self.seed ^ replicate as u64,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let target = self.target.build()?;
        let positive = |key: &str, v: usize| {
            if v == 0 {
                Err(Error::config(key, "must be >= 1"))
            } else {
                Ok(())
            }
        };
        positive("run.particles", self.particles)?;
        positive("run.iters", self.iters)?;
        positive("run.replicates", self.replicates)?;
        positive("run.stride", self.stride)?;
        if self.output.as_os_str().is_empty() {
            return Err(Error::config("run.output", "path must be non-empty"));
        }
        self.kernel.build()?;
        self.nu
            .validate()
            .map_err(|e| Error::config("sampler.nu", e.to_string()))?;
        if let NuSchedule::Sequence(seq) = &self.nu {
            if seq.len() < self.iters {
                return Err(Error::config(
                    "sampler.nu",
                    format!("sequence has {} values but run.iters = {}", seq.len(), self.iters),
                ));
            }
        }
        self.step
            .validate()
            .map_err(|e| Error::config("sampler.step_size", e.to_string()))?;
        self.solver
            .validate()
            .map_err(|e| Error::config("sampler.solver", e.to_string()))?;
        let d = target.dim();
        for (key, v) in [("run.init_mean", &self.init_mean), ("run.init_std", &self.init_std)] {
            if v.len() != 1 && v.len() != d {
                return Err(Error::config(key, format!("expected 1 or {d} values, got {}", v.len())));
            }
        }
        self.init_spec(0)
            .map_err(|e| Error::config("run.init_std", e.to_string()))?;
        if let H3Policy::Fixed { omega, phase } = self.h3 {
            if !omega.is_finite() || !phase.is_finite() {
                return Err(Error::config("run.h3_omega", "cosine parameters must be finite"));
            }
        }
        Ok(())
    }

    /// Canonical document with every key spelled out; `parse_config` inverts it.
    pub fn to_toml(&self) -> String {
        let mut target = Table::new();
        match &self.target {
            TargetConfig::Gaussian { mean, covariance } => {
                target.insert("kind".into(), "gaussian".into());
                target.insert("mean".into(), floats(mean));
                target.insert(
                    "covariance".into(),
                    Value::Array(covariance.iter().map(|r| floats(r)).collect()),
                );
            }
            TargetConfig::Mixture {
                weights,
                means,
                variances,
            } => {
                target.insert("kind".into(), "mixture".into());
                target.insert("weights".into(), floats(weights));
                target.insert("means".into(), floats(means));
                target.insert("variances".into(), floats(variances));
            }
        }

        let mut kernel = Table::new();
        match self.kernel {
            KernelConfig::GaussianMedian => {
                kernel.insert("kind".into(), "gaussian".into());
                kernel.insert("bandwidth".into(), "median".into());
            }
            KernelConfig::GaussianMedianOnce => {
                kernel.insert("kind".into(), "gaussian".into());
                kernel.insert("bandwidth".into(), "median_once".into());
            }
            KernelConfig::GaussianFixed { bandwidth } => {
                kernel.insert("kind".into(), "gaussian".into());
                kernel.insert("bandwidth".into(), bandwidth.into());
            }
            KernelConfig::Linear => {
                kernel.insert("kind".into(), "linear".into());
            }
        }

        let mut sampler = Table::new();
        match &self.nu {
            NuSchedule::Constant(nu) => sampler.insert("nu".into(), (*nu).into()),
            NuSchedule::Sequence(seq) => sampler.insert("nu".into(), floats(seq)),
        };
        match self.step {
            StepSchedule::Constant { h } => {
                sampler.insert("step".into(), "constant".into());
                sampler.insert("step_size".into(), h.into());
            }
            StepSchedule::Adagrad { base, fudge } => {
                sampler.insert("step".into(), "adagrad".into());
                sampler.insert("step_size".into(), base.into());
                sampler.insert("adagrad_fudge".into(), fudge.into());
            }
        }
        match self.solver {
            SolveConfig::Cholesky => {
                sampler.insert("solver".into(), "cholesky".into());
            }
            SolveConfig::Cg {
                tol,
                max_iter,
                jacobi_precondition,
            } => {
                sampler.insert("solver".into(), "cg".into());
                sampler.insert("cg_tol".into(), tol.into());
                sampler.insert("cg_max_iter".into(), (max_iter as i64).into());
                sampler.insert("cg_jacobi".into(), jacobi_precondition.into());
            }
        }

        let mut run = Table::new();
        run.insert("particles".into(), (self.particles as i64).into());
        run.insert("iters".into(), (self.iters as i64).into());
        run.insert("replicates".into(), (self.replicates as i64).into());
        // u64 seeds above i64::MAX are stored as their two's-complement bit pattern
        run.insert("seed".into(), (self.seed as i64).into());
        run.insert("output".into(), self.output.to_string_lossy().into_owned().into());
        run.insert("stride".into(), (self.stride as i64).into());
        run.insert("init_mean".into(), floats(&self.init_mean));
        run.insert("init_std".into(), floats(&self.init_std));
        match self.h3 {
            H3Policy::PerReplicate => {
                run.insert("h3".into(), "per_replicate".into());
            }
            H3Policy::Fixed { omega, phase } => {
                run.insert("h3".into(), "fixed".into());
                run.insert("h3_omega".into(), omega.into());
                run.insert("h3_phase".into(), phase.into());
            }
        }
        run.insert("wall_clock".into(), self.wall_clock.into());

        let mut doc = Table::new();
        doc.insert("target".into(), Value::Table(target));
        doc.insert("kernel".into(), Value::Table(kernel));
        doc.insert("sampler".into(), Value::Table(sampler));
        doc.insert("run".into(), Value::Table(run));
        toml::to_string(&doc).expect("a table of plain values always serializes")
    }
}

fn floats(v: &[f64]) -> Value {
    Value::Array(v.iter().map(|&x| Value::Float(x)).collect())
}

/// One section of the document. Keys are removed as they are read so that
/// leftovers can be reported as unknown.
struct Section {
    name: &'static str,
    table: Table,
}

impl Section {
    fn key(&self, key: &str) -> String {
        format!("{}.{}", self.name, key)
    }

    fn take(&mut self, key: &str) -> Option<Value> {
        self.table.remove(key)
    }

    fn float(&mut self, key: &str) -> Result<Option<f64>> {
        self.take(key).map(|v| as_float(&v, &self.key(key))).transpose()
    }

    fn count(&mut self, key: &str) -> Result<Option<usize>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::Integer(i)) if i >= 0 => Ok(Some(i as usize)),
            Some(Value::Integer(i)) => Err(Error::config(self.key(key), format!("must be >= 0, got {i}"))),
            Some(other) => Err(type_error(&self.key(key), "an integer", &other)),
        }
    }

    fn string(&mut self, key: &str) -> Result<Option<String>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(other) => Err(type_error(&self.key(key), "a string", &other)),
        }
    }

    fn boolean(&mut self, key: &str) -> Result<Option<bool>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::Boolean(b)) => Ok(Some(b)),
            Some(other) => Err(type_error(&self.key(key), "a boolean", &other)),
        }
    }

    fn floats(&mut self, key: &str) -> Result<Option<Vec<f64>>> {
        let k = self.key(key);
        self.take(key).map(|v| float_array(&v, &k)).transpose()
    }

    fn required<T>(&self, key: &str, v: Option<T>) -> Result<T> {
        v.ok_or_else(|| Error::config(self.key(key), "missing required key"))
    }

    fn finish(self) -> Result<()> {
        match self.table.keys().next() {
            Some(k) => Err(Error::config(format!("{}.{}", self.name, k), "unknown key")),
            None => Ok(()),
        }
    }
}

fn type_name(v: &Value) -> &'static str {
    v.type_str()
}

fn type_error(key: &str, expected: &str, found: &Value) -> Error {
    Error::config(key, format!("expected {expected}, found {}", type_name(found)))
}

fn as_float(v: &Value, key: &str) -> Result<f64> {
    match *v {
        Value::Float(f) => Ok(f),
        Value::Integer(i) => Ok(i as f64),
        ref other => Err(type_error(key, "a number", other)),
    }
}

fn float_array(v: &Value, key: &str) -> Result<Vec<f64>> {
    match v {
        Value::Array(items) => items.iter().map(|x| as_float(x, key)).collect(),
        other => Err(type_error(key, "an array of numbers", other)),
    }
}

/// Parses and validates a config document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut doc: Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::config("<document>", e.message().to_string()))?;
    let mut section = |name: &'static str| -> Result<Section> {
        match doc.remove(name) {
            None => Ok(Section {
                name,
                table: Table::new(),
            }),
            Some(Value::Table(table)) => Ok(Section { name, table }),
            Some(other) => Err(type_error(name, "a section", &other)),
        }
    };
    let mut target = section("target")?;
    let mut kernel = section("kernel")?;
    let mut sampler = section("sampler")?;
    let mut run = section("run")?;
    if let Some(k) = doc.keys().next() {
        return Err(Error::config(k.clone(), "unknown section or top-level key"));
    }

    let preset = match run.string("preset")?.as_deref() {
        None => None,
        Some("fig1") => Some(ExperimentConfig::fig1(0, "")),
        Some(other) => return Err(Error::config("run.preset", format!("unknown preset `{other}`"))),
    };

    let target_cfg = match target.string("kind")? {
        Some(kind) => parse_target(&mut target, &kind)?,
        None => match &preset {
            Some(p) => p.target.clone(),
            None => return Err(Error::config("target.kind", "missing required key")),
        },
    };
    target.finish()?;

    let kernel_cfg = parse_kernel(&mut kernel, preset.as_ref().map(|p| p.kernel))?;
    kernel.finish()?;

    let nu = match sampler.take("nu") {
        None => preset.as_ref().map_or(NuSchedule::Constant(1.0), |p| p.nu.clone()),
        Some(Value::Array(items)) => {
            NuSchedule::Sequence(items.iter().map(|x| as_float(x, "sampler.nu")).collect::<Result<_>>()?)
        }
        Some(v) => NuSchedule::Constant(as_float(&v, "sampler.nu")?),
    };
    nu.validate().map_err(|e| Error::config("sampler.nu", e.to_string()))?;
    let step = parse_step(&mut sampler, preset.as_ref().map(|p| p.step))?;
    let solver = parse_solver(&mut sampler)?;
    sampler.finish()?;

    let defaults = preset.clone().unwrap_or_else(|| ExperimentConfig {
        target: target_cfg.clone(),
        kernel: kernel_cfg,
        nu: nu.clone(),
        step,
        solver,
        particles: 0,
        iters: 0,
        replicates: 1,
        seed: 0,
        output: PathBuf::new(),
        stride: 1,
        init_mean: vec![0.0],
        init_std: vec![1.0],
        h3: H3Policy::PerReplicate,
        wall_clock: false,
    });
    let particles = match run.count("particles")? {
        Some(v) => v,
        None if preset.is_some() => defaults.particles,
        None => run.required("particles", None)?,
    };
    let iters = match run.count("iters")? {
        Some(v) => v,
        None if preset.is_some() => defaults.iters,
        None => run.required("iters", None)?,
    };
    let seed = match run.take("seed") {
        Some(Value::Integer(i)) => i as u64,
        Some(other) => return Err(type_error("run.seed", "an integer", &other)),
        None => run.required("seed", None)?,
    };
    let output = run.string("output")?;
    let output = PathBuf::from(run.required("output", output)?);
    let replicates = run.count("replicates")?.unwrap_or(defaults.replicates);
    let stride = run.count("stride")?.unwrap_or(defaults.stride);
    let init_mean = run.floats("init_mean")?.unwrap_or(defaults.init_mean);
    let init_std = run.floats("init_std")?.unwrap_or(defaults.init_std);
    let h3 = match run.string("h3")?.as_deref() {
        None | Some("per_replicate") => {
            if run.table.contains_key("h3_omega") || run.table.contains_key("h3_phase") {
                return Err(Error::config("run.h3", "h3_omega/h3_phase require h3 = \"fixed\""));
            }
            H3Policy::PerReplicate
        }
        Some("fixed") => {
            let omega = run.float("h3_omega")?;
            let phase = run.float("h3_phase")?;
            H3Policy::Fixed {
                omega: run.required("h3_omega", omega)?,
                phase: run.required("h3_phase", phase)?,
            }
        }
        Some(other) => {
            return Err(Error::config(
                "run.h3",
                format!("expected \"per_replicate\" or \"fixed\", got `{other}`"),
            ))
        }
    };
    let wall_clock = run.boolean("wall_clock")?.unwrap_or(false);
    run.finish()?;

    let cfg = ExperimentConfig {
        target: target_cfg,
        kernel: kernel_cfg,
        nu,
        step,
        solver,
        particles,
        iters,
        replicates,
        seed,
        output,
        stride,
        init_mean,
        init_std,
        h3,
        wall_clock,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn parse_target(s: &mut Section, kind: &str) -> Result<TargetConfig> {
    match kind {
        "gaussian" => {
            let mean = s.floats("mean")?;
            let mean = s.required("mean", mean)?;
            let covariance = match s.take("covariance") {
                None => return Err(Error::config("target.covariance", "missing required key")),
                Some(Value::Array(rows)) => rows
                    .iter()
                    .map(|r| float_array(r, "target.covariance"))
                    .collect::<Result<Vec<_>>>()?,
                Some(other) => return Err(type_error("target.covariance", "an array of rows", &other)),
            };
            if mean.is_empty() {
                return Err(Error::config("target.mean", "must be non-empty"));
            }
            if covariance.len() != mean.len() || covariance.iter().any(|r| r.len() != mean.len()) {
                return Err(Error::config(
                    "target.covariance",
                    format!("expected a {0}x{0} matrix", mean.len()),
                ));
            }
            Ok(TargetConfig::Gaussian { mean, covariance })
        }
        "mixture" => {
            let weights = s.floats("weights")?;
            let means = s.floats("means")?;
            let variances = s.floats("variances")?;
            Ok(TargetConfig::Mixture {
                weights: s.required("weights", weights)?,
                means: s.required("means", means)?,
                variances: s.required("variances", variances)?,
            })
        }
        other => Err(Error::config(
            "target.kind",
            format!("expected \"gaussian\" or \"mixture\", got `{other}`"),
        )),
    }
}

fn parse_kernel(s: &mut Section, preset: Option<KernelConfig>) -> Result<KernelConfig> {
    let kind = s.string("kind")?;
    let bandwidth = s.take("bandwidth");
    match (kind.as_deref(), bandwidth) {
        (None, None) => Ok(preset.unwrap_or(KernelConfig::GaussianMedian)),
        (Some("linear"), None) => Ok(KernelConfig::Linear),
        (Some("linear"), Some(_)) => Err(Error::config("kernel.bandwidth", "the linear kernel has no bandwidth")),
        (Some("gaussian"), None) => Ok(KernelConfig::GaussianMedian),
        (None | Some("gaussian"), Some(Value::String(b))) if b == "median" => Ok(KernelConfig::GaussianMedian),
        (None | Some("gaussian"), Some(Value::String(b))) if b == "median_once" => Ok(KernelConfig::GaussianMedianOnce),
        (None | Some("gaussian"), Some(Value::String(b))) => Err(Error::config(
            "kernel.bandwidth",
            format!("expected \"median\", \"median_once\" or a number, got `{b}`"),
        )),
        (None | Some("gaussian"), Some(v)) => {
            let bandwidth = as_float(&v, "kernel.bandwidth")?;
            if !(bandwidth > 0.0 && bandwidth.is_finite()) {
                return Err(Error::config(
                    "kernel.bandwidth",
                    format!("must be > 0, got {bandwidth}"),
                ));
            }
            Ok(KernelConfig::GaussianFixed { bandwidth })
        }
        (Some(other), _) => Err(Error::config(
            "kernel.kind",
            format!("expected \"gaussian\" or \"linear\", got `{other}`"),
        )),
    }
}

fn parse_step(s: &mut Section, preset: Option<StepSchedule>) -> Result<StepSchedule> {
    let base = preset.unwrap_or(StepSchedule::adagrad(DEFAULT_STEP_SIZE));
    let kind = s.string("step")?;
    let size = s.float("step_size")?;
    let fudge = s.float("adagrad_fudge")?;
    let kind = match kind.as_deref() {
        Some(k @ ("adagrad" | "constant")) => k,
        Some(other) => {
            return Err(Error::config(
                "sampler.step",
                format!("expected \"adagrad\" or \"constant\", got `{other}`"),
            ))
        }
        None if matches!(base, StepSchedule::Constant { .. }) => "constant",
        None => "adagrad",
    };
    let step = match (kind, base) {
        ("adagrad", StepSchedule::Adagrad { base, fudge: f }) => StepSchedule::Adagrad {
            base: size.unwrap_or(base),
            fudge: fudge.unwrap_or(f),
        },
        ("adagrad", StepSchedule::Constant { .. }) => StepSchedule::Adagrad {
            base: size.unwrap_or(DEFAULT_STEP_SIZE),
            fudge: fudge.unwrap_or(DEFAULT_ADAGRAD_FUDGE),
        },
        (_, base) => {
            if fudge.is_some() {
                return Err(Error::config(
                    "sampler.adagrad_fudge",
                    "only valid with step = \"adagrad\"",
                ));
            }
            let h = match (size, base) {
                (Some(h), _) => h,
                (None, StepSchedule::Constant { h }) => h,
                (None, _) => s.required("step_size", None)?,
            };
            StepSchedule::Constant { h }
        }
    };
    step.validate()
        .map_err(|_| Error::config("sampler.step_size", "step size and fudge must be positive and finite"))?;
    Ok(step)
}

fn parse_solver(s: &mut Section) -> Result<SolveConfig> {
    let kind = s.string("solver")?;
    let tol = s.float("cg_tol")?;
    let max_iter = s.count("cg_max_iter")?;
    let jacobi = s.boolean("cg_jacobi")?;
    match kind.as_deref() {
        None | Some("cholesky") => {
            if tol.is_some() || max_iter.is_some() || jacobi.is_some() {
                return Err(Error::config("sampler.solver", "cg_* keys require solver = \"cg\""));
            }
            Ok(SolveConfig::Cholesky)
        }
        Some("cg") => {
            let cfg = SolveConfig::Cg {
                tol: tol.unwrap_or(DEFAULT_CG_TOL),
                max_iter: max_iter.unwrap_or(DEFAULT_CG_MAX_ITER),
                jacobi_precondition: jacobi.unwrap_or(true),
            };
            cfg.validate()
                .map_err(|e| Error::config("sampler.cg_tol", e.to_string()))?;
            Ok(cfg)
        }
        Some(other) => Err(Error::config(
            "sampler.solver",
            format!("expected \"cholesky\" or \"cg\", got `{other}`"),
        )),
    }
}
