//! Squared L1/L2 regularized recovery models.
//!
//! `minimize lambda |x|_1^2 / |x|_2^2 + q(Ax - b)` over a box, with `q` one
//! of three losses written as a difference `q1 - q2` of a smooth and a convex
//! function. Mapped onto the fractional form via `f = sqrt(lambda) |x|_1`,
//! `g = |x|_2^2`, `h1 = q1(Ax - b)` and `h2 = q2(Ax - b)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::sync::Mutex;

use crate::error::{Error, Result};
use crate::fractional::{FractionalObjective, LocalModel};

/// Closed hyperrectangle `lower <= x <= upper` containing the origin.
/// Infinite bounds are allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxBounds {
    lower: DVector<f64>,
    upper: DVector<f64>,
}

impl BoxBounds {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch(format!(
                "box bounds have lengths {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (l, u)) in lower.iter().zip(upper.iter()).enumerate() {
            if l.is_nan() || u.is_nan() || *l > 0.0 || *u < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "box [{l}, {u}] at coordinate {i} must contain 0"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn unbounded(n: usize) -> Self {
        Self {
            lower: DVector::from_element(n, f64::NEG_INFINITY),
            upper: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    pub fn is_unbounded(&self) -> bool {
        self.lower.iter().all(|l| *l == f64::NEG_INFINITY) && self.upper.iter().all(|u| *u == f64::INFINITY)
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.len() == self.len()
            && x
                .iter()
                .zip(self.lower.iter().zip(self.upper.iter()))
                .all(|(v, (l, u))| v >= l && v <= u)
    }

    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(x.len(), |i, _| x[i].min(self.upper[i]).max(self.lower[i]))
    }
}

/// `prox` of `tau |.|_1 + indicator(box)`: soft-threshold by `tau`, then
/// clamp as `max{min{., upper}, lower}`.
pub fn prox_l1_box(v: &DVector<f64>, tau: f64, bounds: &BoxBounds) -> DVector<f64> {
    DVector::from_fn(v.len(), |i, _| {
        let vi = v[i];
        let shrunk = (vi.abs() - tau).max(0.0);
        let s = if vi > 0.0 {
            shrunk
        } else if vi < 0.0 {
            -shrunk
        } else {
            0.0
        };
        s.min(bounds.upper[i]).max(bounds.lower[i])
    })
}

/// `sqrt(lambda) |x|_1 / |x|_2^2`.
pub fn ratio_coefficient(x: &DVector<f64>, lambda: f64) -> Result<f64> {
    let g = x.norm_squared();
    if g == 0.0 {
        return Err(Error::InvalidArgument("ratio coefficient undefined at the origin".into()));
    }
    Ok(lambda.sqrt() * x.lp_norm(1) / g)
}

/// `|x|_1^2 / |x|_2^2`, a continuous lower bound on the number of nonzeros.
pub fn effective_sparsity(x: &DVector<f64>) -> Result<f64> {
    let g = x.norm_squared();
    if g == 0.0 {
        return Err(Error::InvalidArgument("effective sparsity undefined at the origin".into()));
    }
    let l1 = x.lp_norm(1);
    Ok(l1 * l1 / g)
}

/// `(1/2 |y|^2, y)`.
pub fn quadratic_loss(y: &DVector<f64>) -> (f64, DVector<f64>) {
    (0.5 * y.norm_squared(), y.clone())
}

/// Lorentzian loss `sum log(1 + y_i^2 / gamma^2)` and its gradient.
pub fn lorentzian_loss(y: &DVector<f64>, gamma: f64) -> Result<(f64, DVector<f64>)> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidArgument(format!("Lorentzian scale must be positive, got {gamma}")));
    }
    Ok(lorentzian_unchecked(y, gamma))
}

fn lorentzian_unchecked(y: &DVector<f64>, gamma: f64) -> (f64, DVector<f64>) {
    let g2 = gamma * gamma;
    let mut value = 0.0;
    let grad = DVector::from_fn(y.len(), |i, _| {
        let yi = y[i];
        value += (yi * yi / g2).ln_1p();
        2.0 * yi / (g2 + yi * yi)
    });
    (value, grad)
}

/// Indices of the `count` largest-magnitude entries, ties broken toward the
/// smaller index.
fn top_indices(y: &DVector<f64>, count: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..y.len()).collect();
    let count = count.min(y.len());
    if count == 0 {
        return Vec::new();
    }
    let cmp = |a: &usize, b: &usize| y[*b].abs().total_cmp(&y[*a].abs()).then(a.cmp(b));
    if count < idx.len() {
        idx.select_nth_unstable_by(count - 1, cmp);
        idx.truncate(count);
    }
    idx
}

/// Projection onto vectors with at most `count` nonzeros: keeps the largest
/// magnitudes (smaller index first on ties) and zeros the rest.
pub fn project_sparse(y: &DVector<f64>, count: usize) -> DVector<f64> {
    let mut out = DVector::zeros(y.len());
    for i in top_indices(y, count) {
        out[i] = y[i];
    }
    out
}

/// Parts of `1/2 dist^2(y, S_r)` written as `q1 - q2`.
#[derive(Debug, Clone)]
pub struct RobustParts {
    pub q1_value: f64,
    pub q1_grad: DVector<f64>,
    pub q2_value: f64,
    pub q2_subgrad: DVector<f64>,
}

/// `q1 = 1/2 |y|^2` and `q2 = 1/2 |T_r(y)|^2` with subgradient `T_r(y)`.
pub fn robust_distance_loss(y: &DVector<f64>, outlier_count: usize) -> RobustParts {
    let t = project_sparse(y, outlier_count);
    RobustParts {
        q1_value: 0.5 * y.norm_squared(),
        q1_grad: y.clone(),
        q2_value: 0.5 * t.norm_squared(),
        q2_subgrad: t,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LossModel {
    Quadratic,
    Lorentzian { gamma: f64 },
    RobustDistance { outlier_count: usize },
}

impl LossModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            LossModel::Lorentzian { gamma } if !(*gamma > 0.0) => {
                Err(Error::InvalidArgument(format!("Lorentzian scale must be positive, got {gamma}")))
            }
            _ => Ok(()),
        }
    }

    /// `q(y) = q1(y) - q2(y)`.
    pub fn value(&self, y: &DVector<f64>) -> f64 {
        match *self {
            LossModel::Quadratic => 0.5 * y.norm_squared(),
            LossModel::Lorentzian { gamma } => lorentzian_unchecked(y, gamma).0,
            LossModel::RobustDistance { outlier_count } => {
                let t = project_sparse(y, outlier_count);
                0.5 * (y - t).norm_squared()
            }
        }
    }

    pub fn q1_value(&self, y: &DVector<f64>) -> f64 {
        match *self {
            LossModel::Quadratic | LossModel::RobustDistance { .. } => 0.5 * y.norm_squared(),
            LossModel::Lorentzian { gamma } => lorentzian_unchecked(y, gamma).0,
        }
    }

    pub fn q1(&self, y: &DVector<f64>) -> (f64, DVector<f64>) {
        match *self {
            LossModel::Quadratic | LossModel::RobustDistance { .. } => quadratic_loss(y),
            LossModel::Lorentzian { gamma } => lorentzian_unchecked(y, gamma),
        }
    }

    /// `q2` and one of its subgradients; identically zero for the smooth losses.
    pub fn q2(&self, y: &DVector<f64>) -> (f64, DVector<f64>) {
        match *self {
            LossModel::RobustDistance { outlier_count } => {
                let t = project_sparse(y, outlier_count);
                (0.5 * t.norm_squared(), t)
            }
            _ => (0.0, DVector::zeros(y.len())),
        }
    }

    pub fn has_concave_part(&self) -> bool {
        matches!(self, LossModel::RobustDistance { .. })
    }
}

/// `lambda |x|_1^2/|x|_2^2 + q(Ax - b)` over a box.
#[derive(Debug, Clone)]
pub struct SquaredRatioModel {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub lambda: f64,
    pub bounds: BoxBounds,
    pub loss: LossModel,
}

impl SquaredRatioModel {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, lambda: f64, bounds: BoxBounds, loss: LossModel) -> Result<Self> {
        let model = Self {
            a,
            b,
            lambda,
            bounds,
            loss,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.a.nrows() != self.b.len() {
            return Err(Error::DimensionMismatch(format!(
                "matrix has {} rows but measurement has length {}",
                self.a.nrows(),
                self.b.len()
            )));
        }
        if self.a.ncols() != self.bounds.len() {
            return Err(Error::DimensionMismatch(format!(
                "matrix has {} columns but box has dimension {}",
                self.a.ncols(),
                self.bounds.len()
            )));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::InvalidArgument(format!("lambda must be positive, got {}", self.lambda)));
        }
        if let LossModel::RobustDistance { outlier_count } = self.loss {
            if outlier_count > self.b.len() {
                return Err(Error::InvalidArgument(format!(
                    "outlier count {outlier_count} exceeds {} measurements",
                    self.b.len()
                )));
            }
        }
        self.loss.validate()
    }

    pub fn nrows(&self) -> usize {
        self.a.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.a.ncols()
    }

    pub fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut r = self.b.clone();
        r.gemv(1.0, &self.a, x, -1.0);
        r
    }

    /// Direct evaluation of `lambda |x|_1^2/|x|_2^2 + q(Ax - b)`, `+inf` at
    /// the origin or outside the box.
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        if !self.bounds.contains(x) {
            return f64::INFINITY;
        }
        match effective_sparsity(x) {
            Ok(s) => self.lambda * s + self.loss.value(&self.residual(x)),
            Err(_) => f64::INFINITY,
        }
    }

    /// `lambda + q(-b)`, the limit of the objective at the origin.
    pub fn origin_limit(&self) -> f64 {
        self.lambda + self.loss.value(&(-&self.b))
    }

    /// Slack of the specialized acceptance test
    /// `lambda |x̂|_1^2/|x̂|_2^2 + q1(Ax̂ - b) - <x̂ - x, z> + sigma/2 |x̂ - x|^2
    ///   <= lambda |x|_1^2/|x|_2^2 + q1(Ax - b)`,
    /// returned as right side minus left side.
    pub fn acceptance_slack(&self, x_hat: &DVector<f64>, x: &DVector<f64>, z: &DVector<f64>, sigma: f64) -> Result<f64> {
        let d = x_hat - x;
        let lhs = self.lambda * effective_sparsity(x_hat)?
            + self.loss.q1_value(&self.residual(x_hat))
            - d.dot(z)
            + 0.5 * sigma * d.norm_squared();
        let rhs = self.lambda * effective_sparsity(x)? + self.loss.q1_value(&self.residual(x));
        Ok(rhs - lhs)
    }
}

/// Fractional-program view of a [`SquaredRatioModel`].
///
/// Remembers the last residual it computed, so the point accepted by a line
/// search does not pay for `Ax` again at the next iteration.
#[derive(Debug)]
pub struct SquaredRatioObjective<'a> {
    model: &'a SquaredRatioModel,
    sqrt_lambda: f64,
    last_residual: Mutex<Option<(DVector<f64>, DVector<f64>)>>,
}

impl<'a> SquaredRatioObjective<'a> {
    pub fn model(&self) -> &'a SquaredRatioModel {
        self.model
    }

    fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut cache = self.last_residual.lock().unwrap_or_else(|e| e.into_inner());
        if let Some((cx, r)) = cache.as_ref() {
            if cx == x {
                return r.clone();
            }
        }
        let r = self.model.residual(x);
        *cache = Some((x.clone(), r.clone()));
        r
    }
}

pub fn build_objective(model: &SquaredRatioModel) -> Result<SquaredRatioObjective<'_>> {
    model.validate()?;
    Ok(SquaredRatioObjective {
        model,
        sqrt_lambda: model.lambda.sqrt(),
        last_residual: Mutex::new(None),
    })
}

impl FractionalObjective for SquaredRatioObjective<'_> {
    fn dim(&self) -> usize {
        self.model.ncols()
    }

    fn f_value(&self, x: &DVector<f64>) -> f64 {
        self.sqrt_lambda * x.lp_norm(1)
    }

    fn g_value(&self, x: &DVector<f64>) -> f64 {
        x.norm_squared()
    }

    fn g_grad(&self, x: &DVector<f64>) -> DVector<f64> {
        x * 2.0
    }

    fn h1_value(&self, x: &DVector<f64>) -> f64 {
        self.model.loss.q1_value(&self.residual(x))
    }

    fn h1_grad(&self, x: &DVector<f64>) -> DVector<f64> {
        let (_, grad) = self.model.loss.q1(&self.residual(x));
        self.model.a.tr_mul(&grad)
    }

    fn h2_value(&self, x: &DVector<f64>) -> f64 {
        if !self.model.loss.has_concave_part() {
            return 0.0;
        }
        self.model.loss.q2(&self.residual(x)).0
    }

    fn h2_subgrad(&self, x: &DVector<f64>) -> DVector<f64> {
        if !self.model.loss.has_concave_part() {
            return DVector::zeros(self.dim());
        }
        let (_, sub) = self.model.loss.q2(&self.residual(x));
        self.model.a.tr_mul(&sub)
    }

    /// The threshold applied is `tau * sqrt(lambda)`.
    fn prox_scaled_f_box(&self, v: &DVector<f64>, tau: f64) -> DVector<f64> {
        prox_l1_box(v, tau * self.sqrt_lambda, &self.model.bounds)
    }

    fn in_box(&self, x: &DVector<f64>) -> bool {
        self.model.bounds.contains(x)
    }

    fn local_model(&self, x: &DVector<f64>) -> LocalModel {
        let r = self.residual(x);
        let (h1_value, q1_grad) = self.model.loss.q1(&r);
        if self.model.loss.has_concave_part() {
            let (h2_value, q2_sub) = self.model.loss.q2(&r);
            let z = self.model.a.tr_mul(&q2_sub);
            let h1_grad = self.model.a.tr_mul(&q1_grad);
            LocalModel {
                h1_value,
                h1_grad,
                h2_value,
                h2_subgrad: z,
            }
        } else {
            LocalModel {
                h1_value,
                h1_grad: self.model.a.tr_mul(&q1_grad),
                h2_value: 0.0,
                h2_subgrad: DVector::zeros(self.dim()),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fractional::{evaluate_f, surrogate_h};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
        DVector::from_fn(n, |_, _| scale * (2.0 * rng.random::<f64>() - 1.0))
    }

    fn central_diff(fun: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>, h: f64) -> DVector<f64> {
        DVector::from_fn(x.len(), |i, _| {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            (fun(&xp) - fun(&xm)) / (2.0 * h)
        })
    }

    fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        (a - b).norm() / b.norm().max(1e-12)
    }

    #[test]
    fn ratio_coefficient_values() {
        assert_eq!(ratio_coefficient(&dv(&[0.0, 1.0, 0.0]), 1.0).unwrap(), 1.0);
        assert_eq!(ratio_coefficient(&dv(&[1.0, 1.0]), 4.0).unwrap(), 2.0);
        assert!(ratio_coefficient(&dv(&[0.0, 0.0]), 1.0).is_err());
    }

    #[test]
    fn ratio_coefficient_is_inverse_homogeneous() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let x = random_vec(&mut rng, 7, 3.0);
            let t = 0.1 + 10.0 * rng.random::<f64>();
            let c = ratio_coefficient(&x, 0.7).unwrap();
            let ct = ratio_coefficient(&(&x * t), 0.7).unwrap();
            assert!((ct - c / t).abs() <= 1e-12 * c / t);
        }
    }

    #[test]
    fn prox_soft_threshold_and_projection() {
        let unb = BoxBounds::unbounded(2);
        assert_eq!(prox_l1_box(&dv(&[3.0, -1.0]), 2.0, &unb), dv(&[1.0, 0.0]));
        let unit = BoxBounds::new(DVector::zeros(3), DVector::from_element(3, 1.0)).unwrap();
        let v = dv(&[-2.0, 0.4, 7.0]);
        assert_eq!(prox_l1_box(&v, 0.0, &unit), dv(&[0.0, 0.4, 1.0]));
    }

    #[test]
    fn infinite_bounds_pass_through() {
        let unb = BoxBounds::unbounded(3);
        let v = dv(&[1e300, -1e300, 5.5]);
        assert_eq!(prox_l1_box(&v, 0.0, &unb), v);
    }

    #[test]
    fn box_must_contain_origin() {
        assert!(BoxBounds::new(dv(&[0.5]), dv(&[1.0])).is_err());
        assert!(BoxBounds::new(dv(&[-1.0]), dv(&[-0.5])).is_err());
        assert!(BoxBounds::new(dv(&[-1.0, 0.0]), dv(&[1.0])).is_err());
        assert!(BoxBounds::new(dv(&[f64::NEG_INFINITY]), dv(&[0.0])).is_ok());
    }

    /// Ternary search on the convex scalar subproblem over the box.
    fn scalar_prox_oracle(v: f64, tau: f64, lo: f64, hi: f64) -> f64 {
        let obj = |u: f64| tau * u.abs() + 0.5 * (u - v) * (u - v);
        let mut a = lo.max(-v.abs() - 1.0);
        let mut b = hi.min(v.abs() + 1.0);
        for _ in 0..200 {
            let m1 = a + (b - a) / 3.0;
            let m2 = b - (b - a) / 3.0;
            if obj(m1) <= obj(m2) {
                b = m2;
            } else {
                a = m1;
            }
        }
        0.5 * (a + b)
    }

    #[test]
    fn prox_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let n = rng.random_range(1..=5);
            let v = random_vec(&mut rng, n, 4.0);
            let tau = 3.0 * rng.random::<f64>();
            let lo = DVector::from_fn(n, |_, _| {
                if rng.random::<f64>() < 0.3 { f64::NEG_INFINITY } else { -3.0 * rng.random::<f64>() }
            });
            let hi = DVector::from_fn(n, |_, _| {
                if rng.random::<f64>() < 0.3 { f64::INFINITY } else { 3.0 * rng.random::<f64>() }
            });
            let bounds = BoxBounds::new(lo.clone(), hi.clone()).unwrap();
            let p = prox_l1_box(&v, tau, &bounds);
            for i in 0..n {
                assert_abs_diff_eq!(p[i], scalar_prox_oracle(v[i], tau, lo[i], hi[i]), epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn quadratic_loss_values() {
        let (v, g) = quadratic_loss(&DVector::zeros(2));
        assert_eq!(v, 0.0);
        assert_eq!(g, DVector::zeros(2));
        let (v, g) = quadratic_loss(&dv(&[3.0, 4.0]));
        assert_eq!(v, 12.5);
        assert_eq!(g, dv(&[3.0, 4.0]));
        let y = dv(&[0.3, -1.2, 2.0]);
        let fd = central_diff(|y| quadratic_loss(y).0, &y, 1e-6);
        assert!(rel_err(&quadratic_loss(&y).1, &fd) < 1e-6);
    }

    #[test]
    fn lorentzian_values_and_gradient() {
        assert_eq!(lorentzian_loss(&DVector::zeros(3), 0.5).unwrap().0, 0.0);
        for gamma in [0.02, 1.0, 7.5] {
            let (v, _) = lorentzian_loss(&dv(&[gamma]), gamma).unwrap();
            assert_abs_diff_eq!(v, std::f64::consts::LN_2, epsilon = 1e-15);
        }
        assert!(lorentzian_loss(&dv(&[1.0]), 0.0).is_err());
        assert!(lorentzian_loss(&dv(&[1.0]), -1.0).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let y = random_vec(&mut rng, 7, 0.1);
            let (_, g) = lorentzian_loss(&y, 0.02).unwrap();
            let fd = central_diff(|y| lorentzian_loss(y, 0.02).unwrap().0, &y, 1e-6);
            assert!(rel_err(&g, &fd) < 1e-5);
        }
    }

    #[test]
    fn lorentzian_keeps_precision_for_tiny_residuals() {
        let (v, _) = lorentzian_loss(&dv(&[1e-12]), 1.0).unwrap();
        assert_abs_diff_eq!(v, 1e-24, epsilon = 1e-36);
    }

    #[test]
    fn sparse_projection_examples() {
        assert_eq!(project_sparse(&dv(&[5.0, -7.0, 1.0]), 1), dv(&[0.0, -7.0, 0.0]));
        let y = dv(&[1.0, -2.0, 3.0]);
        assert_eq!(project_sparse(&y, 3), y);
        assert_eq!(project_sparse(&y, 0), DVector::zeros(3));
        // ties go to the smaller index
        assert_eq!(project_sparse(&dv(&[2.0, -2.0, 2.0]), 2), dv(&[2.0, -2.0, 0.0]));
    }

    #[test]
    fn sparse_projection_is_best_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let y = random_vec(&mut rng, 6, 5.0);
            let got = 0.5 * (&y - project_sparse(&y, 2)).norm_squared();
            let mut best = f64::INFINITY;
            for i in 0..6 {
                for j in (i + 1)..6 {
                    let mut z = y.clone();
                    z[i] = 0.0;
                    z[j] = 0.0;
                    best = best.min(0.5 * z.norm_squared());
                }
            }
            assert_abs_diff_eq!(got, best, epsilon = 1e-12);
        }
    }

    #[test]
    fn robust_loss_parts() {
        let y = dv(&[1.0, -3.0, 0.5, 2.0]);
        let p = robust_distance_loss(&y, 0);
        let (qv, qg) = quadratic_loss(&y);
        assert_eq!(p.q1_value, qv);
        assert_eq!(p.q1_grad, qg);
        assert_eq!(p.q2_value, 0.0);
        assert_eq!(p.q2_subgrad, DVector::zeros(4));

        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..20 {
            let y = random_vec(&mut rng, 9, 3.0);
            let p = robust_distance_loss(&y, 3);
            let direct = 0.5 * (&y - project_sparse(&y, 3)).norm_squared();
            assert_abs_diff_eq!(p.q1_value - p.q2_value, direct, epsilon = 1e-12);
            for _ in 0..500 {
                let w = random_vec(&mut rng, 9, 3.0);
                let q2w = 0.5 * project_sparse(&w, 3).norm_squared();
                assert!(q2w >= p.q2_value + p.q2_subgrad.dot(&(&w - &y)) - 1e-10);
            }
        }
    }

    #[test]
    fn robust_loss_zero_iff_sparse_enough() {
        let loss = LossModel::RobustDistance { outlier_count: 2 };
        assert_eq!(loss.value(&dv(&[0.0, 4.0, 0.0, -1.0])), 0.0);
        assert!(loss.value(&dv(&[0.1, 4.0, 0.0, -1.0])) > 0.0);
    }

    #[test]
    fn effective_sparsity_values() {
        assert_eq!(effective_sparsity(&dv(&[1.0, 0.0, 0.0])).unwrap(), 1.0);
        assert_eq!(effective_sparsity(&dv(&[1.0, 1.0, 1.0, 0.0, 0.0])).unwrap(), 3.0);
        assert_eq!(effective_sparsity(&dv(&[-2.0, 2.0, 0.0, 2.0])).unwrap(), 3.0);
        assert!(effective_sparsity(&DVector::zeros(2)).is_err());
    }

    fn random_model(rng: &mut ChaCha8Rng, m: usize, n: usize, loss: LossModel) -> SquaredRatioModel {
        let a = DMatrix::from_fn(m, n, |_, _| 2.0 * rng.random::<f64>() - 1.0);
        let b = random_vec(rng, m, 0.05);
        SquaredRatioModel::new(a, b, 0.3, BoxBounds::unbounded(n), loss).unwrap()
    }

    #[test]
    fn objective_on_identity_quadratic() {
        let model = SquaredRatioModel::new(
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            1.0,
            BoxBounds::unbounded(2),
            LossModel::Quadratic,
        )
        .unwrap();
        let obj = build_objective(&model).unwrap();
        assert_eq!(evaluate_f(&obj, &dv(&[1.0, 1.0])), 3.0);
        assert_eq!(model.objective(&dv(&[1.0, 1.0])), 3.0);

        let model = SquaredRatioModel::new(
            DMatrix::identity(2, 2),
            dv(&[1.0, 1.0]),
            1.0,
            BoxBounds::unbounded(2),
            LossModel::Quadratic,
        )
        .unwrap();
        assert_eq!(evaluate_f(&build_objective(&model).unwrap(), &dv(&[1.0, 1.0])), 2.0);
    }

    #[test]
    fn smooth_losses_have_no_concave_part() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for loss in [LossModel::Quadratic, LossModel::Lorentzian { gamma: 0.5 }] {
            let model = random_model(&mut rng, 4, 6, loss);
            let obj = build_objective(&model).unwrap();
            let x = random_vec(&mut rng, 6, 1.0);
            assert_eq!(obj.h2_subgrad(&x), DVector::zeros(6));
            assert_eq!(obj.h2_value(&x), 0.0);
        }
    }

    #[test]
    fn h1_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for loss in [
            LossModel::Quadratic,
            LossModel::Lorentzian { gamma: 0.02 },
            LossModel::RobustDistance { outlier_count: 2 },
        ] {
            for _ in 0..5 {
                let model = random_model(&mut rng, 8, 20, loss);
                let obj = build_objective(&model).unwrap();
                let x = random_vec(&mut rng, 20, 0.01);
                let fd = central_diff(|x| obj.h1_value(x), &x, 1e-6);
                assert!(rel_err(&obj.h1_grad(&x), &fd) < 1e-5);
                let lm = obj.local_model(&x);
                assert_eq!(lm.h1_grad, obj.h1_grad(&x));
                assert_eq!(lm.h2_subgrad, obj.h2_subgrad(&x));
            }
        }
    }

    #[test]
    fn surrogate_majorizes_objective_for_robust_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let model = random_model(&mut rng, 5, 5, LossModel::RobustDistance { outlier_count: 2 });
        let obj = build_objective(&model).unwrap();
        for _ in 0..200 {
            let x = random_vec(&mut rng, 5, 1.0);
            let x_hat = random_vec(&mut rng, 5, 1.0);
            let z = obj.h2_subgrad(&x);
            let h = surrogate_h(&obj, &x_hat, &x, &z).unwrap();
            let f = evaluate_f(&obj, &x_hat);
            assert!(h >= f - 1e-12 * (1.0 + f.abs()));
        }
    }

    #[test]
    fn specialized_acceptance_test_matches_surrogate_test() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for _ in 0..50 {
            let model = random_model(&mut rng, 6, 10, LossModel::RobustDistance { outlier_count: 2 });
            let obj = build_objective(&model).unwrap();
            let x = random_vec(&mut rng, 10, 1.0);
            let x_hat = random_vec(&mut rng, 10, 1.0);
            let z = obj.h2_subgrad(&x);
            let sigma = 1e-3;
            let generic =
                evaluate_f(&obj, &x) - surrogate_h(&obj, &x_hat, &x, &z).unwrap() - 0.5 * sigma * (&x_hat - &x).norm_squared();
            let special = model.acceptance_slack(&x_hat, &x, &z, sigma).unwrap();
            assert!((generic - special).abs() <= 1e-12 * (1.0 + generic.abs()));
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let err = SquaredRatioModel::new(
            DMatrix::zeros(3, 4),
            DVector::zeros(2),
            1.0,
            BoxBounds::unbounded(4),
            LossModel::Quadratic,
        );
        assert!(matches!(err, Err(Error::DimensionMismatch(_))));
        let err = SquaredRatioModel::new(
            DMatrix::zeros(3, 4),
            DVector::zeros(3),
            1.0,
            BoxBounds::unbounded(5),
            LossModel::Quadratic,
        );
        assert!(matches!(err, Err(Error::DimensionMismatch(_))));
    }

    proptest! {
        #[test]
        fn prox_is_nonexpansive(
            v in proptest::collection::vec(-10.0f64..10.0, 4),
            w in proptest::collection::vec(-10.0f64..10.0, 4),
            tau in 0.0f64..5.0,
            lo in -3.0f64..0.0,
            hi in 0.0f64..3.0,
        ) {
            let bounds = BoxBounds::new(DVector::from_element(4, lo), DVector::from_element(4, hi)).unwrap();
            let v = DVector::from_vec(v);
            let w = DVector::from_vec(w);
            let d = (prox_l1_box(&v, tau, &bounds) - prox_l1_box(&w, tau, &bounds)).norm();
            prop_assert!(d <= (&v - &w).norm() + 1e-12);
            prop_assert!(bounds.contains(&prox_l1_box(&v, tau, &bounds)));
        }

        #[test]
        fn effective_sparsity_between_one_and_support_size(
            v in proptest::collection::vec(prop_oneof![Just(0.0), -5.0f64..5.0], 1..12)
        ) {
            let x = DVector::from_vec(v);
            let nnz = x.iter().filter(|v| **v != 0.0).count();
            prop_assume!(nnz > 0);
            let s = effective_sparsity(&x).unwrap();
            prop_assert!(s >= 1.0 - 1e-12);
            prop_assert!(s <= nnz as f64 + 1e-12);
        }

        #[test]
        fn robust_loss_is_nonnegative(v in proptest::collection::vec(-5.0f64..5.0, 1..10), r in 0usize..10) {
            let y = DVector::from_vec(v);
            let r = r.min(y.len());
            let p = robust_distance_loss(&y, r);
            prop_assert!(p.q1_value - p.q2_value >= -1e-12);
        }
    }
}
