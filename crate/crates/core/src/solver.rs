//! Weighted-L1 penalized minimization of smooth convex objectives.
//!
//! Every estimator in this crate reduces to
//!
//! ```text
//! minimize  f(beta) + lambda * sum_j w_j |beta_j|
//! ```
//!
//! with `f` smooth and convex. Weights follow a three-way convention:
//! `w_j = 0` leaves a coordinate unpenalized, a finite positive `w_j` scales
//! its penalty, and `w_j = +inf` pins it to exactly zero. Pinned coordinates
//! are removed from the problem before optimization and re-inserted as zeros.
//!
//! The solver is an accelerated proximal gradient method (FISTA) with
//! backtracking, adaptive momentum restart and a monotone safeguard. A fit is
//! certified by its KKT residual, not by an iteration count.

use ndarray::{Array1, ArrayView1};

use crate::error::{Error, Result};

/// A smooth convex function of a real vector.
///
/// Implementations must be pure: concurrent evaluations from several
/// threads are allowed.
pub trait SmoothObjective: Sync {
    fn dim(&self) -> usize;

    fn value(&self, x: ArrayView1<f64>) -> f64;

    fn gradient(&self, x: ArrayView1<f64>) -> Array1<f64>;

    fn value_and_gradient(&self, x: ArrayView1<f64>) -> (f64, Array1<f64>) {
        (self.value(x), self.gradient(x))
    }

    /// Linear predictor `A x` when the objective has the form `h(A x)`.
    /// The solver then updates predictors by linear combination instead of
    /// recomputing products.
    fn predictor(&self, _x: ArrayView1<f64>) -> Option<Array1<f64>> {
        None
    }

    /// Value at `x` given its predictor `eta`.
    fn value_at(&self, x: ArrayView1<f64>, _eta: ArrayView1<f64>) -> f64 {
        self.value(x)
    }

    /// Value and gradient at `x` given its predictor `eta`.
    fn value_and_gradient_at(&self, x: ArrayView1<f64>, _eta: ArrayView1<f64>) -> (f64, Array1<f64>) {
        self.value_and_gradient(x)
    }
}

impl<T: SmoothObjective + ?Sized> SmoothObjective for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn value(&self, x: ArrayView1<f64>) -> f64 {
        (**self).value(x)
    }
    fn gradient(&self, x: ArrayView1<f64>) -> Array1<f64> {
        (**self).gradient(x)
    }
    fn value_and_gradient(&self, x: ArrayView1<f64>) -> (f64, Array1<f64>) {
        (**self).value_and_gradient(x)
    }
    fn predictor(&self, x: ArrayView1<f64>) -> Option<Array1<f64>> {
        (**self).predictor(x)
    }
    fn value_at(&self, x: ArrayView1<f64>, eta: ArrayView1<f64>) -> f64 {
        (**self).value_at(x, eta)
    }
    fn value_and_gradient_at(&self, x: ArrayView1<f64>, eta: ArrayView1<f64>) -> (f64, Array1<f64>) {
        (**self).value_and_gradient_at(x, eta)
    }
}

/// Per-coordinate penalty weights in `[0, +inf]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PenaltyWeights(Vec<f64>);

impl PenaltyWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| w.is_nan() || *w < 0.0) {
            return Err(Error::InvalidArgument(
                "penalty weights must lie in [0, +inf]".into(),
            ));
        }
        if !weights.iter().any(|w| w.is_finite()) {
            return Err(Error::InvalidArgument(
                "at least one penalty weight must be finite".into(),
            ));
        }
        Ok(Self(weights))
    }

    pub fn uniform(dim: usize, weight: f64) -> Result<Self> {
        Self::new(vec![weight; dim])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, j: usize) -> f64 {
        self.0[j]
    }

    /// Finite and strictly positive weight.
    pub fn is_penalized(&self, j: usize) -> bool {
        let w = self.0[j];
        w.is_finite() && w > 0.0
    }

    pub fn is_free(&self, j: usize) -> bool {
        self.0[j] == 0.0
    }

    pub fn is_pinned(&self, j: usize) -> bool {
        self.0[j].is_infinite()
    }

    /// `sum_j w_j |beta_j|`, skipping pinned coordinates.
    pub fn penalty(&self, beta: ArrayView1<f64>) -> f64 {
        self.0
            .iter()
            .zip(beta.iter())
            .filter(|(w, _)| w.is_finite())
            .map(|(w, b)| w * b.abs())
            .sum()
    }
}

#[derive(Clone, Debug)]
pub struct SolverOptions {
    /// Target KKT residual.
    pub tol: f64,
    pub max_iter: usize,
    /// How often (in iterations) the KKT residual is recomputed when momentum
    /// is active.
    pub check_every: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 50_000,
            check_every: 5,
        }
    }
}

impl SolverOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub coefficients: Array1<f64>,
    /// Penalized objective `f(beta) + lambda * penalty(beta)`.
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Proximal operator of `t * |.|`.
pub fn soft_threshold(z: f64, t: f64) -> f64 {
    debug_assert!(t >= 0.0);
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Largest violation of the subgradient optimality conditions of
/// `f + lambda * sum_j w_j |beta_j|` given `grad = grad f(beta)`.
///
/// Pinned coordinates carry no condition.
pub fn kkt_residual(
    grad: ArrayView1<f64>,
    beta: ArrayView1<f64>,
    weights: &PenaltyWeights,
    lambda: f64,
) -> f64 {
    let mut worst = 0.0_f64;
    for j in 0..grad.len() {
        let w = weights.get(j);
        if w.is_infinite() {
            continue;
        }
        let thr = lambda * w;
        let g = grad[j];
        let r = if beta[j] != 0.0 {
            (g + thr * beta[j].signum()).abs()
        } else {
            (g.abs() - thr).max(0.0)
        };
        worst = worst.max(r);
    }
    worst
}

/// View of an objective in which only the `active` coordinates vary; the
/// rest are held at zero.
struct Restricted<'a> {
    inner: &'a dyn SmoothObjective,
    active: Vec<usize>,
}

impl Restricted<'_> {
    fn embed(&self, x: ArrayView1<f64>) -> Array1<f64> {
        let mut full = Array1::zeros(self.inner.dim());
        for (i, &j) in self.active.iter().enumerate() {
            full[j] = x[i];
        }
        full
    }

    fn project(&self, full: ArrayView1<f64>) -> Array1<f64> {
        self.active.iter().map(|&j| full[j]).collect()
    }
}

impl SmoothObjective for Restricted<'_> {
    fn dim(&self) -> usize {
        self.active.len()
    }
    fn value(&self, x: ArrayView1<f64>) -> f64 {
        self.inner.value(self.embed(x).view())
    }
    fn gradient(&self, x: ArrayView1<f64>) -> Array1<f64> {
        self.project(self.inner.gradient(self.embed(x).view()).view())
    }
    fn value_and_gradient(&self, x: ArrayView1<f64>) -> (f64, Array1<f64>) {
        let (v, g) = self.inner.value_and_gradient(self.embed(x).view());
        (v, self.project(g.view()))
    }
    fn predictor(&self, x: ArrayView1<f64>) -> Option<Array1<f64>> {
        self.inner.predictor(self.embed(x).view())
    }
    fn value_at(&self, x: ArrayView1<f64>, eta: ArrayView1<f64>) -> f64 {
        self.inner.value_at(self.embed(x).view(), eta)
    }
    fn value_and_gradient_at(&self, x: ArrayView1<f64>, eta: ArrayView1<f64>) -> (f64, Array1<f64>) {
        let (v, g) = self.inner.value_and_gradient_at(self.embed(x).view(), eta);
        (v, self.project(g.view()))
    }
}

/// Minimizes `obj(beta) + lambda * sum_j w_j |beta_j|`.
///
/// Returns a report with `converged = false` when the iteration budget runs
/// out; a non-finite gradient is a hard error.
pub fn solve_l1(
    obj: &dyn SmoothObjective,
    weights: &PenaltyWeights,
    lambda: f64,
    init: Option<ArrayView1<f64>>,
    opts: &SolverOptions,
) -> Result<SolveReport> {
    let dim = obj.dim();
    if weights.len() != dim {
        return Err(Error::Dimension(format!(
            "objective has dimension {dim} but {} weights were given",
            weights.len()
        )));
    }
    if let Some(x0) = init {
        if x0.len() != dim {
            return Err(Error::Dimension(format!(
                "initial point has length {} but objective has dimension {dim}",
                x0.len()
            )));
        }
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument("tol must be positive".into()));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(
            "lambda must be finite and non-negative".into(),
        ));
    }

    let active: Vec<usize> = (0..dim).filter(|&j| !weights.is_pinned(j)).collect();
    if active.len() == dim {
        return solve_finite(obj, weights, lambda, init, opts);
    }

    let restricted = Restricted {
        inner: obj,
        active,
    };
    let sub_weights =
        PenaltyWeights::new(restricted.active.iter().map(|&j| weights.get(j)).collect())?;
    let sub_init = init.map(|x0| restricted.project(x0));
    let sub = solve_finite(
        &restricted,
        &sub_weights,
        lambda,
        sub_init.as_ref().map(|x| x.view()),
        opts,
    )?;
    Ok(SolveReport {
        coefficients: restricted.embed(sub.coefficients.view()),
        ..sub
    })
}

/// Restricted optimum of the unpenalized coordinates with every penalized
/// coordinate held at zero, together with the smallest `lambda` for which
/// that point is optimal.
pub fn null_fit(
    obj: &dyn SmoothObjective,
    weights: &PenaltyWeights,
    opts: &SolverOptions,
) -> Result<(Array1<f64>, f64)> {
    let dim = obj.dim();
    if weights.len() != dim {
        return Err(Error::Dimension(format!(
            "objective has dimension {dim} but {} weights were given",
            weights.len()
        )));
    }
    let penalized: Vec<usize> = (0..dim).filter(|&j| weights.is_penalized(j)).collect();
    if penalized.is_empty() {
        return Err(Error::InvalidArgument(
            "lambda_max needs at least one finite positive weight".into(),
        ));
    }
    let has_free = (0..dim).any(|j| weights.is_free(j));
    let base = if has_free {
        let null_weights = PenaltyWeights::new(
            (0..dim)
                .map(|j| if weights.is_free(j) { 0.0 } else { f64::INFINITY })
                .collect(),
        )?;
        let report = solve_l1(obj, &null_weights, 0.0, None, opts)?;
        if !report.converged {
            return Err(Error::NotConverged {
                iterations: report.iterations,
                kkt_residual: report.kkt_residual,
            });
        }
        report.coefficients
    } else {
        Array1::zeros(dim)
    };
    let grad = obj.gradient(base.view());
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { iteration: 0 });
    }
    let lmax = penalized
        .iter()
        .map(|&j| grad[j].abs() / weights.get(j))
        .fold(0.0, f64::max);
    Ok((base, lmax))
}

/// Smallest `lambda` at which every penalized coordinate is zero at the
/// optimum.
pub fn lambda_max(
    obj: &dyn SmoothObjective,
    weights: &PenaltyWeights,
    opts: &SolverOptions,
) -> Result<f64> {
    null_fit(obj, weights, opts).map(|(_, l)| l)
}

fn prox_step(
    y: &Array1<f64>,
    grad: &Array1<f64>,
    step: f64,
    weights: &PenaltyWeights,
    lambda: f64,
) -> Array1<f64> {
    let mut z = Array1::zeros(y.len());
    for j in 0..y.len() {
        let v = y[j] - step * grad[j];
        let t = step * lambda * weights.get(j);
        z[j] = if t > 0.0 { soft_threshold(v, t) } else { v };
    }
    z
}

fn check_finite(grad: &Array1<f64>, iteration: usize) -> Result<()> {
    if grad.iter().all(|g| g.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteGradient { iteration })
    }
}

/// FISTA on a problem whose weights are all finite.
fn solve_finite(
    obj: &dyn SmoothObjective,
    weights: &PenaltyWeights,
    lambda: f64,
    init: Option<ArrayView1<f64>>,
    opts: &SolverOptions,
) -> Result<SolveReport> {
    let dim = obj.dim();
    let has_penalized = (0..dim).any(|j| weights.is_penalized(j));
    let starts_at_null = init.is_none_or(|x0| {
        (0..dim).all(|j| !weights.is_penalized(j) || x0[j] == 0.0)
    });

    let mut x: Array1<f64> = match init {
        Some(x0) => x0.to_owned(),
        None => Array1::zeros(dim),
    };

    // Above lambda_max the null fit is the exact answer; below it, it is a
    // better starting point than the origin.
    if has_penalized && lambda > 0.0 && starts_at_null {
        let (base, lmax) = null_fit(obj, weights, opts)?;
        if lambda >= lmax {
            let (f, g) = obj.value_and_gradient(base.view());
            check_finite(&g, 0)?;
            let kkt = kkt_residual(g.view(), base.view(), weights, lambda);
            return Ok(SolveReport {
                objective: f + lambda * weights.penalty(base.view()),
                kkt_residual: kkt,
                converged: kkt <= opts.tol,
                iterations: 0,
                coefficients: base,
            });
        }
        x = base;
    }

    let penalized_value = |f: f64, z: &Array1<f64>| f + lambda * weights.penalty(z.view());
    let slack = |a: f64, b: f64| 16.0 * f64::EPSILON * (a.abs() + b.abs() + 1.0);

    // Predictors are carried along with iterates when the objective exposes
    // them, so extrapolated points cost no extra forward product.
    let eta_of = |z: &Array1<f64>| obj.predictor(z.view());
    let value = |z: &Array1<f64>, e: &Option<Array1<f64>>| match e {
        Some(e) => obj.value_at(z.view(), e.view()),
        None => obj.value(z.view()),
    };
    let value_grad = |z: &Array1<f64>, e: &Option<Array1<f64>>| match e {
        Some(e) => obj.value_and_gradient_at(z.view(), e.view()),
        None => obj.value_and_gradient(z.view()),
    };

    let mut eta_x = eta_of(&x);
    let (mut fx, mut gx) = value_grad(&x, &eta_x);
    check_finite(&gx, 0)?;
    let mut big_fx = penalized_value(fx, &x);
    let mut kkt = kkt_residual(gx.view(), x.view(), weights, lambda);
    if kkt <= opts.tol {
        return Ok(SolveReport {
            coefficients: x,
            objective: big_fx,
            kkt_residual: kkt,
            iterations: 0,
            converged: true,
        });
    }

    let mut lipschitz = initial_lipschitz(obj, &x, &gx);
    let mut y = x.clone();
    let (mut fy, mut gy) = (fx, gx.clone());
    let mut gx_fresh = true;
    let mut theta = 1.0_f64;

    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        iterations += 1;

        if iterations % 8 == 0 {
            lipschitz *= 0.7;
        }
        let (z, eta_z, fz) = loop {
            let z = prox_step(&y, &gy, 1.0 / lipschitz, weights, lambda);
            let eta_z = eta_of(&z);
            let fz = value(&z, &eta_z);
            let d = &z - &y;
            let model = fy + gy.dot(&d) + 0.5 * lipschitz * d.dot(&d);
            if fz.is_finite() && fz <= model + slack(fy, fz) {
                break (z, eta_z, fz);
            }
            lipschitz *= 2.0;
            if lipschitz > 1e300 {
                return Err(Error::Degenerate(
                    "step size underflow in line search".into(),
                ));
            }
        };

        let big_fz = penalized_value(fz, &z);
        if big_fz > big_fx + slack(big_fx, big_fz) {
            if theta > 1.0 {
                // Momentum overshot: restart from the last accepted iterate.
                theta = 1.0;
                y = x.clone();
                if !gx_fresh {
                    gx = value_grad(&x, &eta_x).1;
                    check_finite(&gx, iterations)?;
                }
                fy = fx;
                gy = gx.clone();
                gx_fresh = true;
                continue;
            }
            // A plain proximal step failed to descend: rounding floor.
            break;
        }

        // Gradient-based adaptive restart.
        let restart = (&y - &z).dot(&(&z - &x)) > 0.0;
        let theta_next = if restart {
            1.0
        } else {
            0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt())
        };
        let momentum = if restart { 0.0 } else { (theta - 1.0) / theta_next };
        theta = theta_next;

        let x_prev = std::mem::replace(&mut x, z);
        let eta_prev = std::mem::replace(&mut eta_x, eta_z);
        fx = fz;
        big_fx = big_fz;
        gx_fresh = false;

        if momentum == 0.0 {
            y = x.clone();
            let (f, g) = value_grad(&y, &eta_x);
            check_finite(&g, iterations)?;
            fy = f;
            gy = g;
            gx = gy.clone();
            gx_fresh = true;
        } else {
            y = &x + &((&x - &x_prev) * momentum);
            let eta_y = match (&eta_x, &eta_prev) {
                (Some(e), Some(p)) => Some(e + &((e - p) * momentum)),
                _ => None,
            };
            let (f, g) = value_grad(&y, &eta_y);
            check_finite(&g, iterations)?;
            fy = f;
            gy = g;
        }

        if gx_fresh || iterations % opts.check_every == 0 {
            if !gx_fresh {
                gx = value_grad(&x, &eta_x).1;
                check_finite(&gx, iterations)?;
                gx_fresh = true;
            }
            kkt = kkt_residual(gx.view(), x.view(), weights, lambda);
            if kkt <= opts.tol {
                converged = true;
                break;
            }
        }
    }

    if !converged {
        if !gx_fresh {
            gx = value_grad(&x, &eta_x).1;
            check_finite(&gx, iterations)?;
        }
        kkt = kkt_residual(gx.view(), x.view(), weights, lambda);
        converged = kkt <= opts.tol;
    }

    Ok(SolveReport {
        objective: big_fx,
        kkt_residual: kkt,
        iterations,
        converged,
        coefficients: x,
    })
}

/// Secant estimate of the local curvature along the gradient direction.
fn initial_lipschitz(obj: &dyn SmoothObjective, x: &Array1<f64>, g: &Array1<f64>) -> f64 {
    let gnorm = g.dot(g).sqrt();
    if gnorm == 0.0 {
        return 1.0;
    }
    let h = 1e-4 * (1.0 + x.dot(x).sqrt()) / gnorm;
    let probe = x - &(g * h);
    let g2 = obj.gradient(probe.view());
    let dg = &g2 - g;
    let est = dg.dot(&dg).sqrt() / (h * gnorm);
    if est.is_finite() && est > 0.0 {
        est
    } else {
        1.0
    }
}
