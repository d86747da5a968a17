//! Quick property checks run by `sparse-ratio verify`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fractional::{solve, FractionalObjective, SolverConfig, StepsizeRule};
use crate::harness::{initial_point, InitStrategy};
use crate::models::{build_objective, prox_l1_box, BoxBounds, LossModel, SquaredRatioModel};
use crate::problem_gen::{Family, GenSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| scale * rng.random_range(-1.0..1.0))
}

/// Minimizer of `t|u| + (u - v)^2 / 2` on `[lo, hi]` by ternary search.
fn scalar_prox_search(v: f64, t: f64, lo: f64, hi: f64) -> f64 {
    let phi = |u: f64| t * u.abs() + 0.5 * (u - v) * (u - v);
    let (mut a, mut b) = (lo.max(v - t - 1.0), hi.min(v + t + 1.0));
    if a > b {
        return if v < lo { lo } else { hi };
    }
    for _ in 0..200 {
        let m1 = a + (b - a) / 3.0;
        let m2 = b - (b - a) / 3.0;
        if phi(m1) <= phi(m2) {
            b = m2;
        } else {
            a = m1;
        }
    }
    0.5 * (a + b)
}

pub fn prox_oracle(cases: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let n = rng.random_range(1..=5);
        let v = uniform_vec(&mut rng, n, 3.0);
        let tau = rng.random_range(0.0..2.0);
        let lower = DVector::from_fn(n, |_, _| -rng.random_range(0.0..3.0));
        let upper = DVector::from_fn(n, |_, _| rng.random_range(0.0..3.0));
        let bounds = BoxBounds::new(lower.clone(), upper.clone()).expect("0 is inside");
        let got = prox_l1_box(&v, tau, &bounds);
        for i in 0..n {
            worst = worst.max((got[i] - scalar_prox_search(v[i], tau, lower[i], upper[i])).abs());
        }
    }
    Check {
        name: "prox oracle",
        passed: worst <= 1e-6,
        detail: format!("{cases} cases, max deviation {worst:.2e}"),
    }
}

fn random_model(rng: &mut ChaCha8Rng, m: usize, n: usize, loss: LossModel) -> SquaredRatioModel {
    let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
    let b = uniform_vec(rng, m, 1.0);
    SquaredRatioModel::new(a, b, 0.5, BoxBounds::unbounded(n), loss).expect("valid model")
}

pub fn gradient_check(instances: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let losses = [
        LossModel::Quadratic,
        LossModel::Lorentzian { gamma: 0.02 },
        LossModel::RobustDistance { outlier_count: 2 },
    ];
    let h = 1e-6;
    let mut worst = 0.0f64;
    for loss in losses {
        for _ in 0..instances {
            let model = random_model(&mut rng, 8, 20, loss);
            let obj = build_objective(&model).expect("valid model");
            let x = uniform_vec(&mut rng, 20, 1.0);
            let grad = obj.h1_grad(&x);
            let fd = DVector::from_fn(20, |i, _| {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                (obj.h1_value(&xp) - obj.h1_value(&xm)) / (2.0 * h)
            });
            worst = worst.max((&grad - &fd).norm() / grad.norm().max(1e-12));
        }
    }
    Check {
        name: "h1 gradients",
        passed: worst < 1e-5,
        detail: format!("{} instances, max relative error {worst:.2e}", 3 * instances),
    }
}

pub fn subgradient_check(pairs: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = random_model(&mut rng, 12, 30, LossModel::RobustDistance { outlier_count: 3 });
    let obj = build_objective(&model).expect("valid model");
    let mut violations = 0;
    for _ in 0..pairs {
        let x = uniform_vec(&mut rng, 30, 2.0);
        let y = uniform_vec(&mut rng, 30, 2.0);
        let gap = obj.h2_value(&y) - obj.h2_value(&x) - obj.h2_subgrad(&x).dot(&(&y - &x));
        if gap < -1e-10 {
            violations += 1;
        }
    }
    Check {
        name: "h2 subgradient",
        passed: violations == 0,
        detail: format!("{pairs} pairs, {violations} violations"),
    }
}

/// Solves a few small cosine-family instances and checks sufficient descent
/// and the final criticality residual.
pub fn solver_checks(instances: usize, seed: u64) -> Vec<Check> {
    let config = SolverConfig {
        rel_step_tol: 1e-8,
        ..SolverConfig::default()
    };
    let family = Family::GaussianDct {
        sparsity: 8,
        coherence: 5.0,
        dynamic_range: 2.0,
    };
    let mut violations = 0;
    let mut iterations = 0;
    let mut worst_residual = 0.0f64;
    let mut failures = Vec::new();
    for t in 0..instances as u64 {
        let outcome = GenSpec::new(family, seed + t).generate().and_then(|inst| {
            let (x0, _) = initial_point(&inst.model, &InitStrategy::Pseudoinverse)?;
            let obj = build_objective(&inst.model)?;
            solve(&obj, x0, &config, StepsizeRule::BarzilaiBorwein)
        });
        match outcome {
            Ok(out) => {
                violations += out.trace.descent_violations(config.sigma, 1e-10);
                iterations += out.trace.iterations.len();
                worst_residual = worst_residual.max(out.trace.final_residual / (1.0 + out.x.norm()));
            }
            Err(e) => failures.push(format!("seed {}: {e}", seed + t)),
        }
    }
    let failed = if failures.is_empty() {
        String::new()
    } else {
        format!(", failures: {}", failures.join("; "))
    };
    vec![
        Check {
            name: "sufficient descent",
            passed: violations == 0 && failures.is_empty(),
            detail: format!("{iterations} iterations, {violations} violations{failed}"),
        },
        Check {
            name: "criticality",
            passed: worst_residual <= 1e-4 && failures.is_empty(),
            detail: format!("max residual/(1+|x|) {worst_residual:.2e}{failed}"),
        },
    ]
}

pub fn run_all(seed: u64) -> Vec<Check> {
    let mut checks = vec![
        prox_oracle(1000, seed),
        gradient_check(20, seed),
        subgradient_check(10_000, seed),
    ];
    checks.extend(solver_checks(3, seed));
    checks
}
