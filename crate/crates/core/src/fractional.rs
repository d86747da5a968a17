//! Proximal line-search method for fractional programs of the form
//!
//! ```text
//! minimize  f(x)^2 / g(x) + h1(x) - h2(x)   over  x in C, g(x) != 0
//! ```
//!
//! with `f` convex and prox-friendly on the box `C`, `g` and `h1` smooth, and
//! `h2` convex. Each iteration linearizes the ratio at `c_k = f(x_k)/g(x_k)`,
//! takes a prox-gradient step on `2 c_k f + indicator(C)`, and backtracks on a
//! potential that majorizes the extended objective. The conjugate of `h2` is
//! never evaluated.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Oracle bundle describing one fractional program.
///
/// Implementations must keep `f_value` and `g_value` nonnegative and return
/// an element of the convex subdifferential from `h2_subgrad`.
pub trait FractionalObjective {
    fn dim(&self) -> usize;

    fn f_value(&self, x: &DVector<f64>) -> f64;
    fn g_value(&self, x: &DVector<f64>) -> f64;
    fn g_grad(&self, x: &DVector<f64>) -> DVector<f64>;
    fn h1_value(&self, x: &DVector<f64>) -> f64;
    fn h1_grad(&self, x: &DVector<f64>) -> DVector<f64>;
    fn h2_value(&self, x: &DVector<f64>) -> f64;
    fn h2_subgrad(&self, x: &DVector<f64>) -> DVector<f64>;

    /// `prox` of `tau * f + indicator(C)` evaluated at `v`.
    fn prox_scaled_f_box(&self, v: &DVector<f64>, tau: f64) -> DVector<f64>;

    /// Membership in the closed convex set `C`.
    fn in_box(&self, x: &DVector<f64>) -> bool;

    /// Smooth and concave parts at a single point. Override when the four
    /// quantities share work, e.g. a residual `Ax - b`.
    fn local_model(&self, x: &DVector<f64>) -> LocalModel {
        LocalModel {
            h1_value: self.h1_value(x),
            h1_grad: self.h1_grad(x),
            h2_value: self.h2_value(x),
            h2_subgrad: self.h2_subgrad(x),
        }
    }
}

impl<T: FractionalObjective + ?Sized> FractionalObjective for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn f_value(&self, x: &DVector<f64>) -> f64 {
        (**self).f_value(x)
    }
    fn g_value(&self, x: &DVector<f64>) -> f64 {
        (**self).g_value(x)
    }
    fn g_grad(&self, x: &DVector<f64>) -> DVector<f64> {
        (**self).g_grad(x)
    }
    fn h1_value(&self, x: &DVector<f64>) -> f64 {
        (**self).h1_value(x)
    }
    fn h1_grad(&self, x: &DVector<f64>) -> DVector<f64> {
        (**self).h1_grad(x)
    }
    fn h2_value(&self, x: &DVector<f64>) -> f64 {
        (**self).h2_value(x)
    }
    fn h2_subgrad(&self, x: &DVector<f64>) -> DVector<f64> {
        (**self).h2_subgrad(x)
    }
    fn prox_scaled_f_box(&self, v: &DVector<f64>, tau: f64) -> DVector<f64> {
        (**self).prox_scaled_f_box(v, tau)
    }
    fn in_box(&self, x: &DVector<f64>) -> bool {
        (**self).in_box(x)
    }
    fn local_model(&self, x: &DVector<f64>) -> LocalModel {
        (**self).local_model(x)
    }
}

#[derive(Debug, Clone)]
pub struct LocalModel {
    pub h1_value: f64,
    pub h1_grad: DVector<f64>,
    pub h2_value: f64,
    pub h2_subgrad: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub alpha_min: f64,
    pub alpha_max: f64,
    /// Sufficient-descent constant.
    pub sigma: f64,
    /// Backtracking factor in (0, 1).
    pub shrink_factor: f64,
    pub rel_step_tol: f64,
    pub max_outer_iters: usize,
    /// Stepsizes below this abort the line search.
    pub alpha_floor: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            alpha_min: 1e-4,
            alpha_max: 1e4,
            sigma: 1e-3,
            shrink_factor: 0.5,
            rel_step_tol: 1e-6,
            max_outer_iters: 100_000,
            alpha_floor: 1e-20,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha_min > 0.0
            && self.alpha_min < self.alpha_max
            && self.shrink_factor > 0.0
            && self.shrink_factor < 1.0
            && self.sigma > 0.0
            && self.alpha_floor > 0.0
            && self.alpha_floor < self.alpha_min
            && self.rel_step_tol >= 0.0
            && self.max_outer_iters > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("inconsistent solver parameters: {self:?}")))
        }
    }
}

/// Everything the method needs at the current iterate.
#[derive(Debug, Clone)]
pub struct IterateState {
    pub x: DVector<f64>,
    /// Subgradient of `h2` at `x`, fixed for the whole line search.
    pub z: DVector<f64>,
    /// Ratio coefficient `f(x)/g(x)`.
    pub c: f64,
    pub f_value: f64,
    pub h1_grad: DVector<f64>,
    pub g_grad: DVector<f64>,
    pub h2_value: f64,
    pub iter_index: usize,
}

impl IterateState {
    /// Builds the state at `x`; fails when `x` is outside `C ∩ Ω`.
    pub fn at<O: FractionalObjective + ?Sized>(obj: &O, x: DVector<f64>, iter_index: usize) -> Result<Self> {
        if x.len() != obj.dim() {
            return Err(Error::DimensionMismatch(format!(
                "point has length {}, objective has dimension {}",
                x.len(),
                obj.dim()
            )));
        }
        if !obj.in_box(&x) {
            return Err(Error::InvalidInitialPoint("point lies outside the box".into()));
        }
        let g = obj.g_value(&x);
        if !(g > 0.0) {
            return Err(Error::InvalidInitialPoint("g vanishes at the point".into()));
        }
        let f = obj.f_value(&x);
        let local = obj.local_model(&x);
        let c = f / g;
        let f_value = f * f / g + local.h1_value - local.h2_value;
        if !f_value.is_finite() {
            return Err(Error::InvalidInitialPoint("objective is not finite".into()));
        }
        Ok(Self {
            g_grad: obj.g_grad(&x),
            x,
            z: local.h2_subgrad,
            c,
            f_value,
            h1_grad: local.h1_grad,
            h2_value: local.h2_value,
            iter_index,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminationReason {
    StepTolerance,
    MaxIters,
    LineSearchFailure,
}

impl TerminationReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::StepTolerance => "step-tolerance",
            Self::MaxIters => "max-iters",
            Self::LineSearchFailure => "line-search-failure",
        }
    }
}

impl std::fmt::Display for TerminationReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// Objective at the accepted point.
    pub f_value: f64,
    pub alpha: f64,
    pub step_norm: f64,
    pub line_search_trials: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveTrace {
    /// Objective at the initial point.
    pub initial_f_value: f64,
    pub iterations: Vec<IterationRecord>,
    pub final_residual: f64,
    pub termination_reason: TerminationReason,
}

impl SolveTrace {
    pub fn line_search_trials_total(&self) -> usize {
        self.iterations.iter().map(|r| r.line_search_trials).sum()
    }

    /// Objective values including the starting point.
    pub fn f_values(&self) -> impl Iterator<Item = f64> + '_ {
        std::iter::once(self.initial_f_value).chain(self.iterations.iter().map(|r| r.f_value))
    }

    /// Counts iterations violating
    /// `F(x_{k+1}) + sigma/2 |x_{k+1} - x_k|^2 <= F(x_k) + slack (1 + |F(x_k)|)`.
    pub fn descent_violations(&self, sigma: f64, slack: f64) -> usize {
        let mut prev = self.initial_f_value;
        let mut count = 0;
        for rec in &self.iterations {
            let lhs = rec.f_value + 0.5 * sigma * rec.step_norm * rec.step_norm;
            if lhs > prev + slack * (1.0 + prev.abs()) {
                count += 1;
            }
            prev = rec.f_value;
        }
        count
    }
}

/// Initial trial stepsize for each outer iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepsizeRule {
    /// Same trial stepsize every iteration, clamped to `[alpha_min, alpha_max]`.
    Fixed(f64),
    /// Secant ratio on the gradient of `h1`, falling back to 1.
    BarzilaiBorwein,
}

/// `max{alpha_min, min{alpha_max, |dx|^2 / |<dx, dgrad>|}}`, or 1 when the
/// inner product vanishes.
pub fn bb_initial_stepsize(
    x_k: &DVector<f64>,
    x_prev: &DVector<f64>,
    grad_k: &DVector<f64>,
    grad_prev: &DVector<f64>,
    config: &SolverConfig,
) -> f64 {
    let dx = x_k - x_prev;
    let dg = grad_k - grad_prev;
    let inner = dx.dot(&dg).abs();
    if inner == 0.0 || !inner.is_finite() {
        return 1.0;
    }
    let ratio = dx.norm_squared() / inner;
    ratio.min(config.alpha_max).max(config.alpha_min)
}

/// Extended objective: `f^2/g + h1 - h2` on `C ∩ Ω`, `+inf` elsewhere.
pub fn evaluate_f<O: FractionalObjective + ?Sized>(obj: &O, x: &DVector<f64>) -> f64 {
    if !obj.in_box(x) {
        return f64::INFINITY;
    }
    let g = obj.g_value(x);
    if g == 0.0 {
        return f64::INFINITY;
    }
    let f = obj.f_value(x);
    f * f / g + obj.h1_value(x) - obj.h2_value(x)
}

/// Potential `H(x_hat, z, f(x_hat)/g(x_hat))` evaluated without the conjugate
/// of `h2`: `f^2/g (x_hat) + h1(x_hat) - h2(x_prev) - <x_hat - x_prev, z>`,
/// valid for `z` in the subdifferential of `h2` at `x_prev`.
pub fn surrogate_h<O: FractionalObjective + ?Sized>(
    obj: &O,
    x_hat: &DVector<f64>,
    x_prev: &DVector<f64>,
    z: &DVector<f64>,
) -> Result<f64> {
    let g = obj.g_value(x_hat);
    if g == 0.0 {
        return Err(Error::InvalidArgument("g vanishes at the candidate".into()));
    }
    let f = obj.f_value(x_hat);
    Ok(surrogate_from_parts(
        f * f / g,
        obj.h1_value(x_hat),
        obj.h2_value(x_prev),
        x_hat,
        x_prev,
        z,
    ))
}

fn surrogate_from_parts(
    ratio: f64,
    h1_hat: f64,
    h2_prev: f64,
    x_hat: &DVector<f64>,
    x_prev: &DVector<f64>,
    z: &DVector<f64>,
) -> f64 {
    let mut inner = 0.0;
    for ((a, b), zi) in x_hat.iter().zip(x_prev.iter()).zip(z.iter()) {
        inner += (a - b) * zi;
    }
    ratio + h1_hat - h2_prev - inner
}

/// `prox_{2 alpha c f + ι_C}(x - alpha (∇h1(x) - c^2 ∇g(x) - z))`.
pub fn prox_gradient_candidate<O: FractionalObjective + ?Sized>(
    obj: &O,
    state: &IterateState,
    alpha: f64,
) -> DVector<f64> {
    let c2 = state.c * state.c;
    let mut v = state.x.clone();
    for i in 0..v.len() {
        v[i] -= alpha * (state.h1_grad[i] - c2 * state.g_grad[i] - state.z[i]);
    }
    obj.prox_scaled_f_box(&v, 2.0 * alpha * state.c)
}

/// Result of one backtracking line search.
#[derive(Debug, Clone)]
pub struct LineSearchOutcome {
    pub next: IterateState,
    pub alpha: f64,
    pub trials: usize,
    pub step_norm: f64,
}

/// Relative slack on the descent test, absorbing round-off near critical points.
const DESCENT_SLACK: f64 = 1e-12;

/// Shrinks the trial stepsize until the candidate lies in `Ω` and
/// `H(candidate) + sigma/2 |candidate - x|^2 <= F(x)`.
pub fn line_search_step<O: FractionalObjective + ?Sized>(
    obj: &O,
    state: &IterateState,
    alpha_init: f64,
    config: &SolverConfig,
) -> Result<LineSearchOutcome> {
    let mut alpha = alpha_init;
    let mut trials = 0;
    let bound = state.f_value + DESCENT_SLACK * (1.0 + state.f_value.abs());
    loop {
        trials += 1;
        let cand = prox_gradient_candidate(obj, state, alpha);
        let g = obj.g_value(&cand);
        if g > 0.0 {
            let f = obj.f_value(&cand);
            let h = surrogate_from_parts(
                f * f / g,
                obj.h1_value(&cand),
                state.h2_value,
                &cand,
                &state.x,
                &state.z,
            );
            let step_norm = (&cand - &state.x).norm();
            if h + 0.5 * config.sigma * step_norm * step_norm <= bound {
                let next = IterateState::at_unchecked(obj, cand, state.iter_index + 1);
                return Ok(LineSearchOutcome {
                    next,
                    alpha,
                    trials,
                    step_norm,
                });
            }
        }
        alpha *= config.shrink_factor;
        if alpha < config.alpha_floor {
            return Err(Error::LineSearchFailure {
                iteration: state.iter_index,
                alpha,
                trials,
            });
        }
    }
}

impl IterateState {
    // Candidates come out of the prox, so they are in the box and have g > 0.
    fn at_unchecked<O: FractionalObjective + ?Sized>(obj: &O, x: DVector<f64>, iter_index: usize) -> Self {
        let g = obj.g_value(&x);
        let f = obj.f_value(&x);
        let local = obj.local_model(&x);
        let c = f / g;
        Self {
            g_grad: obj.g_grad(&x),
            f_value: f * f / g + local.h1_value - local.h2_value,
            x,
            z: local.h2_subgrad,
            c,
            h1_grad: local.h1_grad,
            h2_value: local.h2_value,
            iter_index,
        }
    }
}

/// Output of [`solve`].
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub x: DVector<f64>,
    pub f_value: f64,
    pub trace: SolveTrace,
}

/// Runs the method from `x0` until the relative step test
/// `|x_k - x_{k-1}| <= tol * max{|x_k|, 1}` holds or the iteration cap is hit.
///
/// A line-search failure is returned as an error; use [`solve_partial`] to
/// keep the trace in that case.
pub fn solve<O: FractionalObjective + ?Sized>(
    obj: &O,
    x0: DVector<f64>,
    config: &SolverConfig,
    rule: StepsizeRule,
) -> Result<SolveOutcome> {
    let (outcome, failure) = solve_partial(obj, x0, config, rule)?;
    match failure {
        Some(err) => Err(err),
        None => Ok(outcome),
    }
}

/// Like [`solve`], but a line-search failure still returns the last accepted
/// iterate and its trace alongside the error.
pub fn solve_partial<O: FractionalObjective + ?Sized>(
    obj: &O,
    x0: DVector<f64>,
    config: &SolverConfig,
    rule: StepsizeRule,
) -> Result<(SolveOutcome, Option<Error>)> {
    config.validate()?;
    let mut state = IterateState::at(obj, x0, 0)?;
    let mut trace = SolveTrace {
        initial_f_value: state.f_value,
        iterations: Vec::new(),
        final_residual: f64::NAN,
        termination_reason: TerminationReason::MaxIters,
    };
    let mut prev: Option<(DVector<f64>, DVector<f64>)> = None;
    let mut last_alpha = 1.0_f64.min(config.alpha_max).max(config.alpha_min);
    let mut failure = None;

    for _ in 0..config.max_outer_iters {
        let alpha_init = match (rule, &prev) {
            (StepsizeRule::Fixed(a), _) => a.min(config.alpha_max).max(config.alpha_min),
            (StepsizeRule::BarzilaiBorwein, Some((x_prev, grad_prev))) => {
                bb_initial_stepsize(&state.x, x_prev, &state.h1_grad, grad_prev, config)
            }
            (StepsizeRule::BarzilaiBorwein, None) => 1.0,
        };
        let step = match line_search_step(obj, &state, alpha_init, config) {
            Ok(step) => step,
            Err(err) => {
                trace.termination_reason = TerminationReason::LineSearchFailure;
                failure = Some(err);
                break;
            }
        };
        trace.iterations.push(IterationRecord {
            f_value: step.next.f_value,
            alpha: step.alpha,
            step_norm: step.step_norm,
            line_search_trials: step.trials,
        });
        last_alpha = step.alpha;
        let done = step.step_norm <= config.rel_step_tol * step.next.x.norm().max(1.0);
        let old = std::mem::replace(&mut state, step.next);
        prev = Some((old.x, old.h1_grad));
        if done {
            trace.termination_reason = TerminationReason::StepTolerance;
            break;
        }
    }

    trace.final_residual = residual_at_state(obj, &state, last_alpha);
    Ok((
        SolveOutcome {
            f_value: state.f_value,
            x: state.x,
            trace,
        },
        failure,
    ))
}

fn residual_at_state<O: FractionalObjective + ?Sized>(obj: &O, state: &IterateState, alpha: f64) -> f64 {
    (prox_gradient_candidate(obj, state, alpha) - &state.x).norm()
}

/// Distance between `x` and its prox-gradient image at stepsize `alpha`;
/// zero exactly at critical points.
pub fn criticality_residual<O: FractionalObjective + ?Sized>(obj: &O, x: &DVector<f64>, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!("stepsize must be positive, got {alpha}")));
    }
    if obj.g_value(x) == 0.0 {
        return Err(Error::InvalidArgument("g vanishes at the point".into()));
    }
    let state = IterateState::at(obj, x.clone(), 0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(residual_at_state(obj, &state, alpha))
}

/// `F(x0) < lambda + q(-b)`: the initial point beats the limit of the
/// objective at the origin, which keeps the level set away from zero.
pub fn check_nontrivial_init<O: FractionalObjective + ?Sized>(
    obj: &O,
    x0: &DVector<f64>,
    lambda: f64,
    q_at_minus_b: f64,
) -> bool {
    evaluate_f(obj, x0) < lambda + q_at_minus_b
}
