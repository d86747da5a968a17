//! Seeded trial batches: initialization, solving, metrics and aggregation.

use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fractional::{
    check_nontrivial_init, evaluate_f, solve_partial, SolveTrace, SolverConfig, StepsizeRule, TerminationReason,
};
use crate::models::{build_objective, effective_sparsity, project_sparse, LossModel, SquaredRatioModel};
use crate::problem_gen::{Family, GenSpec, GeneratedInstance, RNG_NAME};

pub use crate::fractional::bb_initial_stepsize;

/// `|x_hat - x_true|_2 / max{1, |x_true|_2}`.
pub fn recovery_error(x_hat: &DVector<f64>, x_true: &DVector<f64>) -> f64 {
    (x_hat - x_true).norm() / x_true.norm().max(1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitStrategy {
    /// Minimum-norm least-squares solution `A^+ b`.
    Pseudoinverse,
    /// `A^T (A A^T + mu I)^{-1} b`.
    RegularizedLeastSquares { mu: f64 },
    UserSupplied(DVector<f64>),
}

impl InitStrategy {
    pub fn label(&self) -> String {
        match self {
            InitStrategy::Pseudoinverse => "pseudoinverse".into(),
            InitStrategy::RegularizedLeastSquares { mu } => format!("ridge(mu={mu:e})"),
            InitStrategy::UserSupplied(_) => "user".into(),
        }
    }
}

/// How the raw initial point was modified to pass `F(x0) < lambda + q(-b)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitAdjustment {
    None,
    Projected,
    Rescaled,
    /// Kept only the given number of largest entries, then rescaled.
    Sparsified(usize),
    /// Replaced by the best single-column least-squares fit.
    SingleColumn,
}

impl std::fmt::Display for InitAdjustment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InitAdjustment::None => f.write_str("none"),
            InitAdjustment::Projected => f.write_str("projected"),
            InitAdjustment::Rescaled => f.write_str("rescaled"),
            InitAdjustment::Sparsified(k) => write!(f, "sparsified({k})"),
            InitAdjustment::SingleColumn => f.write_str("single-column"),
        }
    }
}

/// Solves `(M + mu I) y = rhs` for symmetric positive semidefinite `M`,
/// adding a small ridge when the factorization breaks down.
fn spd_solve(mut gram: DMatrix<f64>, rhs: &DVector<f64>, mu: f64) -> Result<DVector<f64>> {
    let n = gram.nrows();
    let trace = gram.trace().max(f64::MIN_POSITIVE);
    for i in 0..n {
        gram[(i, i)] += mu;
    }
    let mut ridge = 0.0;
    for _ in 0..8 {
        let mut m = gram.clone();
        if ridge > 0.0 {
            for i in 0..n {
                m[(i, i)] += ridge;
            }
        }
        if let Some(chol) = m.cholesky() {
            return Ok(chol.solve(rhs));
        }
        ridge = if ridge == 0.0 { 1e-14 * trace / n as f64 } else { ridge * 100.0 };
    }
    Err(Error::NoValidInitialPoint {
        attempts: 0,
        reason: "normal equations are numerically singular".into(),
    })
}

fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>, mu: f64) -> Result<DVector<f64>> {
    if a.nrows() <= a.ncols() {
        let gram = a * a.transpose();
        let y = spd_solve(gram, b, mu)?;
        Ok(a.tr_mul(&y))
    } else {
        let gram = a.tr_mul(a);
        spd_solve(gram, &a.tr_mul(b), mu)
    }
}

/// Raw initial point for a strategy, before validation.
pub fn raw_initial_point(model: &SquaredRatioModel, strategy: &InitStrategy) -> Result<DVector<f64>> {
    match strategy {
        InitStrategy::Pseudoinverse => least_squares(&model.a, &model.b, 0.0),
        InitStrategy::RegularizedLeastSquares { mu } => {
            if !(*mu > 0.0) {
                return Err(Error::InvalidArgument(format!("ridge parameter must be positive, got {mu}")));
            }
            least_squares(&model.a, &model.b, *mu)
        }
        InitStrategy::UserSupplied(x) => {
            if x.len() != model.ncols() {
                return Err(Error::DimensionMismatch(format!(
                    "initial point has length {}, model has {} unknowns",
                    x.len(),
                    model.ncols()
                )));
            }
            Ok(x.clone())
        }
    }
}

/// Best multiple of `x` along its ray, by objective value over a geometric
/// grid around the least-squares scale. Keeps `t = 1` as a candidate.
fn rescale(model: &SquaredRatioModel, x: &DVector<f64>) -> DVector<f64> {
    let ax = &model.a * x;
    let denom = ax.norm_squared();
    if denom == 0.0 {
        return x.clone();
    }
    let t_ls = ax.dot(&model.b) / denom;
    let mut t_max = f64::INFINITY;
    for i in 0..x.len() {
        let (lo, hi) = (model.bounds.lower()[i], model.bounds.upper()[i]);
        if x[i] > 0.0 {
            t_max = t_max.min(hi / x[i]);
        } else if x[i] < 0.0 {
            t_max = t_max.min(lo / x[i]);
        }
    }
    let mut candidates = vec![1.0f64.min(t_max)];
    if t_ls > 0.0 {
        for j in -12..=12 {
            candidates.push((t_ls * 2f64.powf(j as f64 / 2.0)).min(t_max));
        }
    }
    let reg = effective_sparsity(x).map(|s| model.lambda * s).unwrap_or(f64::INFINITY);
    let mut best = (f64::INFINITY, 1.0);
    for t in candidates {
        if !(t > 0.0) {
            continue;
        }
        let r = &ax * t - &model.b;
        let val = reg + model.loss.value(&r);
        if val < best.0 {
            best = (val, t);
        }
    }
    x * best.1
}

/// Best objective over `t e_j` with `t` the least-squares coefficient of
/// column `j`, clipped to the box. With quadratic loss and `A^T b != 0` this
/// always beats the origin limit.
fn best_single_column(model: &SquaredRatioModel) -> Option<DVector<f64>> {
    let n = model.ncols();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for j in 0..n {
        let col = model.a.column(j);
        let norm_sq = col.norm_squared();
        if norm_sq == 0.0 {
            continue;
        }
        let t = (col.dot(&model.b) / norm_sq).clamp(model.bounds.lower()[j], model.bounds.upper()[j]);
        if t == 0.0 {
            continue;
        }
        let mut x = DVector::zeros(n);
        x[j] = t;
        let val = model.objective(&x);
        if best.as_ref().is_none_or(|(b, _)| val < *b) {
            best = Some((val, x));
        }
    }
    best.map(|(_, x)| x)
}

/// Strategy point validated against `F(x0) < lambda + q(-b)`. Points that
/// fail are projected onto the box, rescaled, and then sparsified to their
/// `k` largest entries for `k = nnz/2, nnz/4, ..., 1` until one passes. The
/// last resort for computed strategies is the best single-column fit; a
/// user-supplied point is never replaced wholesale.
pub fn initial_point(model: &SquaredRatioModel, strategy: &InitStrategy) -> Result<(DVector<f64>, InitAdjustment)> {
    let obj = build_objective(model)?;
    let limit_q = model.loss.value(&(-&model.b));
    let valid = |x: &DVector<f64>| check_nontrivial_init(&obj, x, model.lambda, limit_q);

    let raw = raw_initial_point(model, strategy)?;
    if valid(&raw) {
        return Ok((raw, InitAdjustment::None));
    }
    let mut attempts = 1;
    let projected = model.bounds.project(&raw);
    attempts += 1;
    if valid(&projected) {
        return Ok((projected, InitAdjustment::Projected));
    }
    let scaled = rescale(model, &projected);
    attempts += 1;
    if valid(&scaled) {
        return Ok((scaled, InitAdjustment::Rescaled));
    }
    let mut k = projected.iter().filter(|v| **v != 0.0).count() / 2;
    while k > 0 {
        let sparse = rescale(model, &project_sparse(&projected, k));
        attempts += 1;
        if valid(&sparse) {
            return Ok((sparse, InitAdjustment::Sparsified(k)));
        }
        k /= 2;
    }
    let computed = !matches!(strategy, InitStrategy::UserSupplied(_));
    if let Some(single) = best_single_column(model).filter(|_| computed) {
        attempts += 1;
        if valid(&single) {
            return Ok((single, InitAdjustment::SingleColumn));
        }
    }
    Err(Error::NoValidInitialPoint {
        attempts,
        reason: format!(
            "objective at every candidate is at least lambda + q(-b) = {}",
            model.lambda + limit_q
        ),
    })
}

/// Model hyperparameter overrides applied after generation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelOverrides {
    pub lambda: Option<f64>,
    pub gamma: Option<f64>,
    pub outliers: Option<usize>,
}

impl ModelOverrides {
    pub fn apply(&self, model: &mut SquaredRatioModel) -> Result<()> {
        if let Some(lambda) = self.lambda {
            model.lambda = lambda;
        }
        match (&mut model.loss, self.gamma, self.outliers) {
            (LossModel::Lorentzian { gamma }, Some(g), _) => *gamma = g,
            (LossModel::RobustDistance { outlier_count }, _, Some(r)) => *outlier_count = r,
            (_, None, None) => {}
            (loss, g, r) => {
                return Err(Error::Config(format!(
                    "override gamma={g:?} outliers={r:?} does not apply to loss {loss:?}"
                )))
            }
        }
        model.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchConfig {
    pub family: Family,
    pub trials: usize,
    pub root_seed: u64,
    pub solver: SolverConfig,
    pub init: InitStrategy,
    pub overrides: ModelOverrides,
    pub jobs: usize,
}

impl BatchConfig {
    /// Benchmark protocol for a family: 20 trials, tolerance `1e-8` for the
    /// cosine family and `1e-6` otherwise, pseudoinverse start.
    pub fn protocol(family: Family) -> Self {
        let tol = match family {
            Family::GaussianDct { .. } => 1e-8,
            _ => 1e-6,
        };
        Self {
            family,
            trials: 20,
            root_seed: 0,
            solver: SolverConfig {
                rel_step_tol: tol,
                ..SolverConfig::default()
            },
            init: InitStrategy::Pseudoinverse,
            overrides: ModelOverrides::default(),
            jobs: 1,
        }
    }

    /// Whether this batch follows the reference initialization protocol.
    /// Only the robust family's pseudoinverse start does; the others replace
    /// an external l1 solver.
    pub fn protocol_label(&self) -> &'static str {
        match (&self.family, &self.init) {
            (Family::RobustCs { .. }, InitStrategy::Pseudoinverse) => "reference",
            _ => "protocol-modified",
        }
    }

    /// Short hash of every setting that influences results.
    pub fn fingerprint(&self) -> String {
        let text = format!(
            "{:?}|{}|{}|{:?}|{}|{:?}|{}",
            self.family,
            self.trials,
            self.root_seed,
            self.solver,
            self.init.label(),
            self.overrides,
            RNG_NAME
        );
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrialStatus {
    Ok,
    InitFailed,
    SolverFailed,
}

/// One row toward a results table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialReport {
    pub family: String,
    pub params: String,
    pub seed: u64,
    pub wall_time_s: f64,
    /// Extended objective `F` at the returned iterate.
    pub objective_final: f64,
    /// `|x|_1^2 / |x|_2^2` at the returned iterate.
    pub effective_sparsity: f64,
    pub rec_err: f64,
    pub iterations: usize,
    pub line_search_trials_total: usize,
    pub termination_reason: Option<TerminationReason>,
    pub criticality_residual: f64,
    pub init: String,
    pub init_adjustment: Option<InitAdjustment>,
    pub status: TrialStatus,
    pub error: Option<String>,
}

/// A trial together with the data needed for post-hoc checks.
#[derive(Debug, Clone)]
pub struct TrialRecord {
    pub report: TrialReport,
    pub trace: Option<SolveTrace>,
    pub x_final: Option<DVector<f64>>,
}

fn failed_report(config: &BatchConfig, seed: u64, status: TrialStatus, err: &Error) -> TrialReport {
    TrialReport {
        family: config.family.name().into(),
        params: config.family.params_label(),
        seed,
        wall_time_s: 0.0,
        objective_final: f64::NAN,
        effective_sparsity: f64::NAN,
        rec_err: f64::NAN,
        iterations: 0,
        line_search_trials_total: 0,
        termination_reason: None,
        criticality_residual: f64::NAN,
        init: config.init.label(),
        init_adjustment: None,
        status,
        error: Some(err.to_string()),
    }
}

/// Initializes and solves one generated instance.
pub fn run_instance(instance: &GeneratedInstance, config: &BatchConfig) -> TrialRecord {
    let seed = instance.spec.seed;
    let model = &instance.model;
    let (x0, adjustment) = match initial_point(model, &config.init) {
        Ok(v) => v,
        Err(err) => {
            return TrialRecord {
                report: failed_report(config, seed, TrialStatus::InitFailed, &err),
                trace: None,
                x_final: None,
            }
        }
    };
    let obj = match build_objective(model) {
        Ok(obj) => obj,
        Err(err) => {
            return TrialRecord {
                report: failed_report(config, seed, TrialStatus::InitFailed, &err),
                trace: None,
                x_final: None,
            }
        }
    };
    let start = Instant::now();
    let result = solve_partial(&obj, x0, &config.solver, StepsizeRule::BarzilaiBorwein);
    let elapsed = start.elapsed().as_secs_f64();
    let (outcome, failure) = match result {
        Ok(v) => v,
        Err(err) => {
            return TrialRecord {
                report: failed_report(config, seed, TrialStatus::InitFailed, &err),
                trace: None,
                x_final: None,
            }
        }
    };
    let status = if failure.is_some() {
        TrialStatus::SolverFailed
    } else {
        TrialStatus::Ok
    };
    let report = TrialReport {
        family: config.family.name().into(),
        params: config.family.params_label(),
        seed,
        wall_time_s: elapsed,
        objective_final: evaluate_f(&obj, &outcome.x),
        effective_sparsity: effective_sparsity(&outcome.x).unwrap_or(f64::NAN),
        rec_err: recovery_error(&outcome.x, &instance.x_true),
        iterations: outcome.trace.iterations.len(),
        line_search_trials_total: outcome.trace.line_search_trials_total(),
        termination_reason: Some(outcome.trace.termination_reason),
        criticality_residual: outcome.trace.final_residual,
        init: config.init.label(),
        init_adjustment: Some(adjustment),
        status,
        error: failure.map(|e| e.to_string()),
    };
    TrialRecord {
        report,
        trace: Some(outcome.trace),
        x_final: Some(outcome.x),
    }
}

/// Generates and runs the trial with the given seed.
pub fn run_trial(config: &BatchConfig, seed: u64) -> TrialRecord {
    let generated = GenSpec::new(config.family, seed)
        .generate()
        .and_then(|mut inst| config.overrides.apply(&mut inst.model).map(|_| inst));
    match generated {
        Ok(inst) => run_instance(&inst, config),
        Err(err) => TrialRecord {
            report: failed_report(config, seed, TrialStatus::InitFailed, &err),
            trace: None,
            x_final: None,
        },
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchSummary {
    pub family: String,
    pub params: String,
    pub requested: usize,
    pub completed: usize,
    pub failed: usize,
    pub time_mean: f64,
    pub time_std: f64,
    pub obj_mean: f64,
    pub obj_std: f64,
    pub sparsity_mean: f64,
    pub sparsity_std: f64,
    pub rec_err_mean: f64,
    pub rec_err_std: f64,
    pub protocol: String,
    pub fingerprint: String,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn summarize(config: &BatchConfig, reports: &[TrialReport]) -> BatchSummary {
    let ok: Vec<&TrialReport> = reports.iter().filter(|r| r.status == TrialStatus::Ok).collect();
    let col = |f: fn(&TrialReport) -> f64| ok.iter().map(|r| f(r)).collect::<Vec<_>>();
    let (time_mean, time_std) = mean_std(&col(|r| r.wall_time_s));
    let (obj_mean, obj_std) = mean_std(&col(|r| r.objective_final));
    let (sparsity_mean, sparsity_std) = mean_std(&col(|r| r.effective_sparsity));
    let (rec_err_mean, rec_err_std) = mean_std(&col(|r| r.rec_err));
    BatchSummary {
        family: config.family.name().into(),
        params: config.family.params_label(),
        requested: config.trials,
        completed: ok.len(),
        failed: reports.len() - ok.len(),
        time_mean,
        time_std,
        obj_mean,
        obj_std,
        sparsity_mean,
        sparsity_std,
        rec_err_mean,
        rec_err_std,
        protocol: config.protocol_label().into(),
        fingerprint: config.fingerprint(),
    }
}

#[derive(Debug, Clone)]
pub struct BatchResult {
    pub summary: BatchSummary,
    pub trials: Vec<TrialRecord>,
}

/// Runs trials with seeds `root_seed, root_seed + 1, ...` on `jobs` threads.
/// Trial results are independent of the thread count.
pub fn run_batch(config: &BatchConfig) -> Result<BatchResult> {
    config.family.validate()?;
    config.solver.validate()?;
    let seeds: Vec<u64> = (0..config.trials as u64).map(|t| config.root_seed.wrapping_add(t)).collect();
    let trials: Vec<TrialRecord> = if config.jobs <= 1 {
        seeds
            .iter()
            .map(|s| {
                let rec = run_trial(config, *s);
                log::info!("trial seed={} status={:?}", s, rec.report.status);
                rec
            })
            .collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.jobs)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        pool.install(|| seeds.par_iter().map(|s| run_trial(config, *s)).collect())
    };
    let reports: Vec<TrialReport> = trials.iter().map(|t| t.report.clone()).collect();
    Ok(BatchResult {
        summary: summarize(config, &reports),
        trials,
    })
}

pub const TRIAL_COLUMNS: [&str; 12] = [
    "seed",
    "time_s",
    "obj",
    "rec_err",
    "iters",
    "residual",
    "termination",
    "sparsity",
    "ls_trials",
    "init",
    "init_adjustment",
    "status",
];

fn fmt_opt<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map(|v| v.to_string()).unwrap_or_default()
}

fn status_str(s: TrialStatus) -> &'static str {
    match s {
        TrialStatus::Ok => "ok",
        TrialStatus::InitFailed => "init-failed",
        TrialStatus::SolverFailed => "solver-failed",
    }
}

/// Per-trial CSV row; floats use shortest round-trip formatting.
pub fn trial_row(r: &TrialReport) -> Vec<String> {
    vec![
        r.seed.to_string(),
        format!("{:e}", r.wall_time_s),
        format!("{:e}", r.objective_final),
        format!("{:e}", r.rec_err),
        r.iterations.to_string(),
        format!("{:e}", r.criticality_residual),
        fmt_opt(&r.termination_reason),
        format!("{:e}", r.effective_sparsity),
        r.line_search_trials_total.to_string(),
        r.init.clone(),
        fmt_opt(&r.init_adjustment),
        status_str(r.status).into(),
    ]
}

pub fn write_trials_csv<W: Write>(out: W, reports: &[TrialReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRIAL_COLUMNS)?;
    for r in reports {
        w.write_record(trial_row(r))?;
    }
    w.flush()?;
    Ok(())
}

pub const SUMMARY_COLUMNS: [&str; 15] = [
    "family",
    "params",
    "trials",
    "completed",
    "failed",
    "Time",
    "Time_std",
    "Obj",
    "Obj_std",
    "Sparsity",
    "Sparsity_std",
    "RecErr",
    "RecErr_std",
    "protocol",
    "fingerprint",
];

pub fn summary_row(s: &BatchSummary) -> Vec<String> {
    vec![
        s.family.clone(),
        s.params.clone(),
        s.requested.to_string(),
        s.completed.to_string(),
        s.failed.to_string(),
        format!("{:.3}", s.time_mean),
        format!("{:.3}", s.time_std),
        format!("{:.3e}", s.obj_mean),
        format!("{:.3e}", s.obj_std),
        format!("{:.3e}", s.sparsity_mean),
        format!("{:.3e}", s.sparsity_std),
        format!("{:.3e}", s.rec_err_mean),
        format!("{:.3e}", s.rec_err_std),
        s.protocol.clone(),
        s.fingerprint.clone(),
    ]
}

pub fn write_summary_csv<W: Write>(out: W, summaries: &[BatchSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_COLUMNS)?;
    for s in summaries {
        w.write_record(summary_row(s))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::BoxBounds;
    use crate::problem_gen::gen_robust_instance;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn recovery_error_values() {
        let x = dv(&[1.0, -2.0, 0.5]);
        assert_eq!(recovery_error(&x, &x), 0.0);
        assert_eq!(recovery_error(&dv(&[1.0, 0.0]), &dv(&[0.0, 0.0])), 1.0);
        // |(3,4) - (0,0.5)|... hand arithmetic: diff (1,-1) over |(2,2)| = sqrt2/sqrt8 = 0.5
        assert!((recovery_error(&dv(&[3.0, 1.0]), &dv(&[2.0, 2.0])) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn pseudoinverse_on_square_system_recovers_signal() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 4.0]);
        let x = dv(&[1.0, -2.0, 0.5]);
        let b = &a * &x;
        let model =
            SquaredRatioModel::new(a, b, 0.01, BoxBounds::unbounded(3), LossModel::Quadratic).unwrap();
        let raw = raw_initial_point(&model, &InitStrategy::Pseudoinverse).unwrap();
        assert!((raw - x).norm() < 1e-12);
    }

    #[test]
    fn user_supplied_origin_is_rejected() {
        let model = SquaredRatioModel::new(
            DMatrix::identity(2, 3),
            dv(&[1.0, 1.0]),
            1.0,
            BoxBounds::unbounded(3),
            LossModel::Quadratic,
        )
        .unwrap();
        let err = initial_point(&model, &InitStrategy::UserSupplied(DVector::zeros(3))).unwrap_err();
        assert!(matches!(err, Error::NoValidInitialPoint { .. }));
    }

    #[test]
    fn least_squares_start_passes_threshold() {
        // b = (10, 0, ...), quadratic loss, lambda = 1: F(x0) <= |x0|_0 + residual < 1 + 50.
        let model = SquaredRatioModel::new(
            DMatrix::identity(3, 5),
            dv(&[10.0, 0.0, 0.0]),
            1.0,
            BoxBounds::unbounded(5),
            LossModel::Quadratic,
        )
        .unwrap();
        let (x0, adj) = initial_point(&model, &InitStrategy::Pseudoinverse).unwrap();
        assert_eq!(adj, InitAdjustment::None);
        assert!(model.objective(&x0) < model.origin_limit());
    }

    #[test]
    fn dense_start_is_sparsified_when_needed() {
        // lambda large enough that the dense least-squares point fails the threshold.
        let a = DMatrix::from_fn(2, 6, |i, j| if j % 2 == i { 1.0 } else { 0.3 });
        let model = SquaredRatioModel::new(
            a,
            dv(&[1.0, 0.2]),
            5.0,
            BoxBounds::unbounded(6),
            LossModel::Quadratic,
        )
        .unwrap();
        let raw = raw_initial_point(&model, &InitStrategy::Pseudoinverse).unwrap();
        assert!(model.objective(&raw) >= model.origin_limit());
        let (x0, adj) = initial_point(&model, &InitStrategy::Pseudoinverse).unwrap();
        assert!(matches!(adj, InitAdjustment::Sparsified(_)));
        assert!(model.objective(&x0) < model.origin_limit());
    }

    #[test]
    fn single_column_rung() {
        // Rescaling keeps the ray of (-1, 0), which points away from b; a
        // user start is not replaced.
        let model = SquaredRatioModel::new(
            DMatrix::identity(2, 2),
            dv(&[1.0, 0.0]),
            0.1,
            BoxBounds::unbounded(2),
            LossModel::Quadratic,
        )
        .unwrap();
        let wrong = InitStrategy::UserSupplied(dv(&[-1.0, 0.0]));
        assert!(initial_point(&model, &wrong).is_err());
        let pinv = raw_initial_point(&model, &InitStrategy::Pseudoinverse).unwrap();
        assert_eq!(pinv, dv(&[1.0, 0.0]));
        let neg = SquaredRatioModel {
            b: dv(&[-1.0, 0.0]),
            ..model.clone()
        };
        assert_eq!(best_single_column(&neg), Some(dv(&[-1.0, 0.0])));
    }

    #[test]
    fn computed_start_always_found_for_quadratic_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(38);
        let mut single = 0;
        for _ in 0..300 {
            let a = DMatrix::from_fn(4, 6, |_, _| rng.random_range(-1.0..1.0));
            let b = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
            let lambda = rng.random_range(0.01..2.0);
            let model = SquaredRatioModel::new(a, b, lambda, BoxBounds::unbounded(6), LossModel::Quadratic).unwrap();
            let (x0, adj) = initial_point(&model, &InitStrategy::Pseudoinverse).unwrap();
            assert!(model.objective(&x0) < model.origin_limit());
            single += (adj == InitAdjustment::SingleColumn) as usize;
        }
        assert!(single > 0);
    }

    #[test]
    fn projection_repairs_out_of_box_start() {
        let bounds = BoxBounds::new(dv(&[-1.0, -1.0]), dv(&[1.0, 1.0])).unwrap();
        let model =
            SquaredRatioModel::new(DMatrix::identity(2, 2), dv(&[3.0, 0.0]), 0.1, bounds, LossModel::Quadratic)
                .unwrap();
        let (x0, adj) = initial_point(&model, &InitStrategy::UserSupplied(dv(&[5.0, 0.0]))).unwrap();
        assert_eq!(adj, InitAdjustment::Projected);
        assert_eq!(x0, dv(&[1.0, 0.0]));
    }

    #[test]
    fn robust_instance_start_passes_threshold() {
        let inst = gen_robust_instance(1, 3).unwrap();
        let (x0, adj) = initial_point(&inst.model, &InitStrategy::Pseudoinverse).unwrap();
        assert_eq!(adj, InitAdjustment::None);
        assert!(inst.model.objective(&x0) < inst.model.origin_limit());
    }

    #[test]
    fn single_trial_summary_equals_trial() {
        let config = BatchConfig {
            trials: 1,
            root_seed: 4,
            ..BatchConfig::protocol(Family::GaussianDct {
                sparsity: 8,
                coherence: 5.0,
                dynamic_range: 2.0,
            })
        };
        let res = run_batch(&config).unwrap();
        let r = &res.trials[0].report;
        assert_eq!(r.status, TrialStatus::Ok);
        assert_eq!(res.summary.obj_mean, r.objective_final);
        assert_eq!(res.summary.rec_err_mean, r.rec_err);
        assert_eq!(res.summary.completed, 1);
    }

    #[test]
    fn batch_rows_are_deterministic() {
        let config = BatchConfig {
            trials: 2,
            root_seed: 11,
            ..BatchConfig::protocol(Family::GaussianDct {
                sparsity: 8,
                coherence: 5.0,
                dynamic_range: 2.0,
            })
        };
        let a = run_batch(&config).unwrap();
        let b = run_batch(&BatchConfig { jobs: 2, ..config.clone() }).unwrap();
        for (x, y) in a.trials.iter().zip(b.trials.iter()) {
            let (mut rx, mut ry) = (trial_row(&x.report), trial_row(&y.report));
            rx.remove(1);
            ry.remove(1);
            assert_eq!(rx, ry);
        }
    }

    #[test]
    fn overrides_apply_to_matching_loss_only() {
        let mut model = gen_robust_instance(1, 0).unwrap().model;
        ModelOverrides {
            lambda: Some(0.5),
            gamma: None,
            outliers: Some(7),
        }
        .apply(&mut model)
        .unwrap();
        assert_eq!(model.lambda, 0.5);
        assert_eq!(model.loss, LossModel::RobustDistance { outlier_count: 7 });
        let bad = ModelOverrides {
            gamma: Some(1.0),
            ..ModelOverrides::default()
        };
        assert!(bad.apply(&mut model).is_err());
    }

    #[test]
    fn csv_layout() {
        let config = BatchConfig::protocol(Family::RobustCs { scale: 1 });
        let report = failed_report(&config, 3, TrialStatus::InitFailed, &Error::Checksum);
        let mut buf = Vec::new();
        write_trials_csv(&mut buf, std::slice::from_ref(&report)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("seed,time_s,obj,rec_err,iters,residual,termination"));
        let s = summarize(&config, &[report]);
        assert_eq!(s.failed, 1);
        assert_eq!(s.completed, 0);
    }
}
