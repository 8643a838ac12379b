//! Penalized multinomial logistic regression for unmatched case-control data.
//!
//! Categories are 0-based here; the last category (`K - 1`) holds the
//! controls. Three estimators are provided:
//!
//! * **SparseRef**: one category is the reference (its coefficients are 0)
//!   and the others get a plain lasso penalty.
//! * **SparseSym**: all `K` coefficient vectors are estimated under the
//!   symmetric softmax with a lasso penalty on each; the penalty resolves the
//!   shift non-identifiability by forcing the per-covariate median to zero.
//! * **DataSharedRef**: reference formulation with `delta_k = mu + gamma_k`
//!   and penalty `|mu|_1 + sum_k |gamma_k|_1`, solved on an augmented
//!   stacked design. It is equivalent to SparseSym via
//!   `mu = -beta_K`, `gamma_k = beta_k`.
//!
//! The negative log-likelihood is averaged over observations, so `lambda`
//! values are not comparable with the conditional-logit module.

use std::sync::Arc;

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::design::{BlockDesign, RowGroup};
use crate::error::{Error, Result};
use crate::solver::{
    null_fit, solve_l1, PenaltyWeights, SmoothObjective, SolveReport, SolverOptions,
};
use crate::ZERO_EPS;

/// Covariates and a categorical outcome; category `k - 1` are the controls.
#[derive(Clone, Debug, PartialEq)]
pub struct UnmatchedDataset {
    x: Array2<f64>,
    y: Vec<usize>,
    k: usize,
    with_intercept: bool,
}

impl UnmatchedDataset {
    pub fn new(x: Array2<f64>, y: Vec<usize>, k: usize, with_intercept: bool) -> Result<Self> {
        Self::build(x, y, k, with_intercept, true)
    }

    /// Like [`UnmatchedDataset::new`] but allows categories with no
    /// observation (held-out folds, test sets).
    pub fn new_unchecked_coverage(
        x: Array2<f64>,
        y: Vec<usize>,
        k: usize,
        with_intercept: bool,
    ) -> Result<Self> {
        Self::build(x, y, k, with_intercept, false)
    }

    fn build(
        x: Array2<f64>,
        y: Vec<usize>,
        k: usize,
        with_intercept: bool,
        require_all: bool,
    ) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidData("at least two categories are required".into()));
        }
        if x.nrows() != y.len() {
            return Err(Error::Dimension(format!(
                "{} covariate rows but {} outcomes",
                x.nrows(),
                y.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("covariates must be finite".into()));
        }
        if let Some(bad) = y.iter().find(|&&c| c >= k) {
            return Err(Error::InvalidData(format!(
                "outcome {} outside 1..={k}",
                bad + 1
            )));
        }
        if require_all {
            let counts = category_counts(&y, k);
            if let Some(c) = counts.iter().position(|&n| n == 0) {
                return Err(Error::InvalidData(format!(
                    "category {} has no observation",
                    c + 1
                )));
            }
        }
        Ok(Self {
            x,
            y,
            k,
            with_intercept,
        })
    }

    pub fn x(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn y(&self) -> &[usize] {
        &self.y
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_categories(&self) -> usize {
        self.k
    }

    pub fn with_intercept(&self) -> bool {
        self.with_intercept
    }

    /// Width of one coefficient block: `p`, plus one with an intercept.
    pub fn block_width(&self) -> usize {
        self.p() + usize::from(self.with_intercept)
    }

    /// `[1 | X]` with an intercept, `X` otherwise.
    pub fn design_matrix(&self) -> Array2<f64> {
        if self.with_intercept {
            concatenate![Axis(1), Array2::ones((self.n(), 1)), self.x]
        } else {
            self.x.clone()
        }
    }

    pub fn category_counts(&self) -> Vec<usize> {
        category_counts(&self.y, self.k)
    }

    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let x = self.x.select(Axis(0), rows);
        let y = rows.iter().map(|&i| self.y[i]).collect();
        Self::new(x, y, self.k, self.with_intercept)
    }

    pub fn subset_unchecked(&self, rows: &[usize]) -> Result<Self> {
        let x = self.x.select(Axis(0), rows);
        let y = rows.iter().map(|&i| self.y[i]).collect();
        Self::new_unchecked_coverage(x, y, self.k, self.with_intercept)
    }
}

fn category_counts(y: &[usize], k: usize) -> Vec<usize> {
    let mut counts = vec![0; k];
    for &c in y {
        counts[c] += 1;
    }
    counts
}

/// Softmax probabilities `p_l = exp(x.u_l) / sum_k exp(x.u_k)` for the rows
/// `u_1..u_K` of `u`.
pub fn multinom_prob(x: ArrayView1<f64>, u: ArrayView2<f64>) -> Result<Array1<f64>> {
    if u.ncols() != x.len() {
        return Err(Error::Dimension(format!(
            "x has length {} but coefficient vectors have length {}",
            x.len(),
            u.ncols()
        )));
    }
    Ok(softmax(u.dot(&x).view()))
}

fn softmax(eta: ArrayView1<f64>) -> Array1<f64> {
    let m = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = eta.mapv(|t| (t - m).exp());
    let z = e.sum();
    e / z
}

fn log_sum_exp(eta: ArrayView1<f64>) -> f64 {
    let m = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + eta.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

fn check_coef(d: &UnmatchedDataset, coef: ArrayView2<f64>, rows: usize) -> Result<()> {
    if coef.dim() != (rows, d.block_width()) {
        return Err(Error::Dimension(format!(
            "coefficients are {:?}, expected ({rows}, {})",
            coef.dim(),
            d.block_width()
        )));
    }
    Ok(())
}

/// Reference-formulation negative log-likelihood, `-(1/n) sum_i log p_{y_i}`
/// with the last category as reference. `deltas` is `(K-1) x width`, the
/// intercept first when the dataset has one.
pub fn multinom_nll_ref(d: &UnmatchedDataset, deltas: ArrayView2<f64>) -> Result<f64> {
    check_coef(d, deltas, d.k - 1)?;
    let xd = d.design_matrix();
    let mut total = 0.0;
    let mut eta = Array1::<f64>::zeros(d.k);
    for (i, row) in xd.rows().into_iter().enumerate() {
        eta.slice_mut(s![..d.k - 1]).assign(&deltas.dot(&row));
        eta[d.k - 1] = 0.0;
        total += log_sum_exp(eta.view()) - eta[d.y[i]];
    }
    Ok(total / d.n() as f64)
}

pub fn multinom_nll_ref_gradient(d: &UnmatchedDataset, deltas: ArrayView2<f64>) -> Result<Array2<f64>> {
    check_coef(d, deltas, d.k - 1)?;
    let xd = d.design_matrix();
    let mut grad = Array2::<f64>::zeros(deltas.dim());
    let mut eta = Array1::<f64>::zeros(d.k);
    for (i, row) in xd.rows().into_iter().enumerate() {
        eta.slice_mut(s![..d.k - 1]).assign(&deltas.dot(&row));
        eta[d.k - 1] = 0.0;
        let mut prob = softmax(eta.view());
        prob[d.y[i]] -= 1.0;
        for c in 0..d.k - 1 {
            grad.row_mut(c).scaled_add(prob[c], &row);
        }
    }
    Ok(grad / d.n() as f64)
}

/// Same quantity as [`multinom_nll_ref`], evaluated through the stacked
/// layout: indicator vector `Y` of length `n(K-1)`, block-diagonal `X_stack`,
/// and `J = (I_n, ..., I_n)`:
///
/// ```text
/// -(1/n) [ Y' X_stack delta - 1' log(1 + J exp(X_stack delta)) ]
/// ```
pub fn multinom_nll_ref_stacked(d: &UnmatchedDataset, deltas: ArrayView2<f64>) -> Result<f64> {
    check_coef(d, deltas, d.k - 1)?;
    let n = d.n();
    let km1 = d.k - 1;
    let xd = d.design_matrix();
    let w = d.block_width();
    let mut x_stack = Array2::<f64>::zeros((n * km1, km1 * w));
    let mut y_stack = Array1::<f64>::zeros(n * km1);
    for c in 0..km1 {
        x_stack
            .slice_mut(s![c * n..(c + 1) * n, c * w..(c + 1) * w])
            .assign(&xd);
        for i in 0..n {
            if d.y[i] == c {
                y_stack[c * n + i] = 1.0;
            }
        }
    }
    let delta_stack: Array1<f64> = deltas.iter().copied().collect();
    let eta = x_stack.dot(&delta_stack);
    let exp_eta = eta.mapv(f64::exp);
    let mut j_exp = Array1::<f64>::zeros(n);
    for c in 0..km1 {
        j_exp += &exp_eta.slice(s![c * n..(c + 1) * n]);
    }
    let loglik = y_stack.dot(&eta) - j_exp.mapv(|v| (1.0 + v).ln()).sum();
    Ok(-loglik / n as f64)
}

/// Symmetric-formulation negative log-likelihood with `betas` of shape
/// `K x width`.
pub fn multinom_nll_sym(d: &UnmatchedDataset, betas: ArrayView2<f64>) -> Result<f64> {
    check_coef(d, betas, d.k)?;
    let xd = d.design_matrix();
    let eta = xd.dot(&betas.t());
    let total: f64 = eta
        .rows()
        .into_iter()
        .zip(&d.y)
        .map(|(e, &c)| log_sum_exp(e) - e[c])
        .sum();
    Ok(total / d.n() as f64)
}

pub fn multinom_nll_sym_gradient(d: &UnmatchedDataset, betas: ArrayView2<f64>) -> Result<Array2<f64>> {
    check_coef(d, betas, d.k)?;
    let xd = d.design_matrix();
    let eta = xd.dot(&betas.t());
    let mut resid = Array2::<f64>::zeros((d.n(), d.k));
    for (i, e) in eta.rows().into_iter().enumerate() {
        let mut prob = softmax(e);
        prob[d.y[i]] -= 1.0;
        resid.row_mut(i).assign(&prob);
    }
    Ok(resid.t().dot(&xd) / d.n() as f64)
}

/// Softmax loss over the row groups of a block design: group `g` holds the
/// linear predictor of column `g` for every observation. With
/// `implicit_zero`, an extra column fixed at 0 is appended (reference
/// formulation).
#[derive(Clone, Debug)]
pub struct SoftmaxObjective {
    design: BlockDesign,
    /// Column of the observed outcome; `n_groups` denotes the implicit zero
    /// column.
    labels: Vec<usize>,
    implicit_zero: bool,
}

impl SoftmaxObjective {
    fn new(design: BlockDesign, labels: Vec<usize>, implicit_zero: bool) -> Self {
        Self {
            design,
            labels,
            implicit_zero,
        }
    }

    pub fn n_obs(&self) -> usize {
        self.labels.len()
    }

    /// Loss and optionally gradient from the linear predictor.
    fn eval(&self, eta: ArrayView1<f64>, want_grad: bool) -> (f64, Option<Array1<f64>>) {
        let n = self.labels.len();
        let g = self.design.n_groups();
        debug_assert_eq!(eta.len(), g * n);
        let cols = g + usize::from(self.implicit_zero);
        let mut value = 0.0;
        let mut resid = if want_grad { Array1::zeros(g * n) } else { Array1::zeros(0) };
        let mut row = vec![0.0; cols];
        let inv_n = 1.0 / n as f64;
        for i in 0..n {
            for (c, r) in row.iter_mut().enumerate().take(g) {
                *r = eta[c * n + i];
            }
            if self.implicit_zero {
                row[g] = 0.0;
            }
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            let label = self.labels[i];
            let eta_label = if label < g { eta[label * n + i] } else { 0.0 };
            value += m + z.ln() - eta_label;
            if want_grad {
                for c in 0..g {
                    let indicator = if label == c { 1.0 } else { 0.0 };
                    resid[c * n + i] = (row[c] / z - indicator) * inv_n;
                }
            }
        }
        let grad = want_grad.then(|| self.design.apply_transpose(resid.view()));
        (value * inv_n, grad)
    }
}

impl SmoothObjective for SoftmaxObjective {
    fn dim(&self) -> usize {
        self.design.ncols()
    }
    fn value(&self, x: ArrayView1<f64>) -> f64 {
        self.eval(self.design.apply(x).view(), false).0
    }
    fn gradient(&self, x: ArrayView1<f64>) -> Array1<f64> {
        self.eval(self.design.apply(x).view(), true).1.unwrap()
    }
    fn value_and_gradient(&self, x: ArrayView1<f64>) -> (f64, Array1<f64>) {
        let (v, g) = self.eval(self.design.apply(x).view(), true);
        (v, g.unwrap())
    }
    fn predictor(&self, x: ArrayView1<f64>) -> Option<Array1<f64>> {
        Some(self.design.apply(x))
    }
    fn value_at(&self, _x: ArrayView1<f64>, eta: ArrayView1<f64>) -> f64 {
        self.eval(eta, false).0
    }
    fn value_and_gradient_at(&self, _x: ArrayView1<f64>, eta: ArrayView1<f64>) -> (f64, Array1<f64>) {
        let (v, g) = self.eval(eta, true);
        (v, g.unwrap())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Formulation {
    /// Reference category, 0-based.
    SparseRef { reference: usize },
    SparseSym,
    /// Reference is the last category (controls).
    DataSharedRef,
}

impl Formulation {
    pub fn name(&self) -> &'static str {
        match self {
            Formulation::SparseRef { .. } => "sparse-ref",
            Formulation::SparseSym => "sparse-sym",
            Formulation::DataSharedRef => "datashared-ref",
        }
    }
}

#[derive(Clone, Debug)]
pub struct MultinomFit {
    pub formulation: Formulation,
    pub n_categories: usize,
    /// SparseRef: `(K-1) x p` deltas of the non-reference categories in
    /// increasing category order. SparseSym: `K x p` betas. DataSharedRef:
    /// `(K-1) x p` gammas.
    pub coefficients: Array2<f64>,
    /// DataSharedRef only.
    pub mu: Option<Array1<f64>>,
    /// Per-row intercepts matching `coefficients`; SparseSym intercepts sum
    /// to zero.
    pub intercepts: Option<Array1<f64>>,
    /// DataSharedRef only.
    pub shared_intercept: Option<f64>,
    pub lambda: f64,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl MultinomFit {
    pub fn p(&self) -> usize {
        self.coefficients.ncols()
    }

    /// Symmetric representation `(K x p betas, K intercepts)`; for reference
    /// formulations the reference row is zero.
    pub fn full_coefficients(&self) -> (Array2<f64>, Array1<f64>) {
        let k = self.n_categories;
        let p = self.p();
        match self.formulation {
            Formulation::SparseSym => (
                self.coefficients.clone(),
                self.intercepts.clone().unwrap_or_else(|| Array1::zeros(k)),
            ),
            Formulation::SparseRef { reference } => {
                let mut b = Array2::zeros((k, p));
                let mut b0 = Array1::zeros(k);
                let mut row = 0;
                for c in 0..k {
                    if c == reference {
                        continue;
                    }
                    b.row_mut(c).assign(&self.coefficients.row(row));
                    if let Some(ic) = &self.intercepts {
                        b0[c] = ic[row];
                    }
                    row += 1;
                }
                (b, b0)
            }
            Formulation::DataSharedRef => {
                let mu = self.mu.as_ref().expect("data-shared fit carries mu");
                let mut b = Array2::zeros((k, p));
                let mut b0 = Array1::zeros(k);
                for c in 0..k - 1 {
                    b.row_mut(c).assign(&(&self.coefficients.row(c) + mu));
                    if let Some(ic) = &self.intercepts {
                        b0[c] = ic[c] + self.shared_intercept.unwrap_or(0.0);
                    }
                }
                (b, b0)
            }
        }
    }

    /// `(K-1) x p` coefficients relative to the last category (controls):
    /// `delta_k = beta_k - beta_K`.
    pub fn delta_vs_last(&self) -> Array2<f64> {
        let (b, _) = self.full_coefficients();
        let k = self.n_categories;
        let last = b.row(k - 1).to_owned();
        let mut out = b.slice(s![..k - 1, ..]).to_owned();
        for mut row in out.rows_mut() {
            row -= &last;
        }
        out
    }

    /// Intercepts relative to the last category.
    pub fn intercepts_vs_last(&self) -> Array1<f64> {
        let (_, b0) = self.full_coefficients();
        let k = self.n_categories;
        b0.slice(s![..k - 1]).mapv(|v| v - b0[k - 1])
    }

    /// `n x K` fitted probabilities.
    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.p() {
            return Err(Error::Dimension(format!(
                "x has {} columns, fit has {}",
                x.ncols(),
                self.p()
            )));
        }
        let (b, b0) = self.full_coefficients();
        let mut eta = x.dot(&b.t());
        eta += &b0.insert_axis(Axis(0));
        let mut out = Array2::zeros(eta.dim());
        for (i, row) in eta.rows().into_iter().enumerate() {
            out.row_mut(i).assign(&softmax(row));
        }
        Ok(out)
    }

    /// Penalized coefficients with |value| > 1e-8, counted in the fitted
    /// parameterization.
    pub fn support_size(&self) -> usize {
        let nz = |v: &f64| v.abs() > ZERO_EPS;
        self.coefficients.iter().filter(|v| nz(v)).count()
            + self.mu.as_ref().map_or(0, |m| m.iter().filter(|v| nz(v)).count())
    }
}

/// One multinomial formulation on one dataset, reduced to a weighted lasso.
///
/// Raw coordinates are laid out by column block of width `p (+1)`, the
/// intercept first in each block.
#[derive(Clone, Debug)]
pub struct MultinomProblem {
    formulation: Formulation,
    objective: SoftmaxObjective,
    weights: PenaltyWeights,
    k: usize,
    p: usize,
    with_intercept: bool,
}

impl MultinomProblem {
    pub fn new(d: &UnmatchedDataset, formulation: Formulation) -> Result<Self> {
        let k = d.k;
        let w = d.block_width();
        let base = vec![Arc::new(d.design_matrix())];
        let (design, labels, implicit_zero, n_blocks) = match formulation {
            Formulation::SparseRef { reference } => {
                if reference >= k {
                    return Err(Error::InvalidArgument(format!(
                        "reference category {} out of range (have {k})",
                        reference + 1
                    )));
                }
                let groups = (0..k - 1)
                    .map(|g| RowGroup {
                        base: 0,
                        terms: vec![(g, 1.0)],
                    })
                    .collect();
                let labels = d
                    .y
                    .iter()
                    .map(|&c| match c.cmp(&reference) {
                        std::cmp::Ordering::Less => c,
                        std::cmp::Ordering::Equal => k - 1,
                        std::cmp::Ordering::Greater => c - 1,
                    })
                    .collect();
                (BlockDesign::new(base, groups, k - 1)?, labels, true, k - 1)
            }
            Formulation::SparseSym => {
                let groups = (0..k)
                    .map(|g| RowGroup {
                        base: 0,
                        terms: vec![(g, 1.0)],
                    })
                    .collect();
                (BlockDesign::new(base, groups, k)?, d.y.clone(), false, k)
            }
            Formulation::DataSharedRef => {
                let groups = (0..k - 1)
                    .map(|g| RowGroup {
                        base: 0,
                        terms: vec![(0, 1.0), (g + 1, 1.0)],
                    })
                    .collect();
                (BlockDesign::new(base, groups, k)?, d.y.clone(), true, k)
            }
        };
        let mut weights = Vec::with_capacity(n_blocks * w);
        for _ in 0..n_blocks {
            if d.with_intercept {
                weights.push(0.0);
            }
            weights.extend(std::iter::repeat_n(1.0, d.p()));
        }
        Ok(Self {
            formulation,
            objective: SoftmaxObjective::new(design, labels, implicit_zero),
            weights: PenaltyWeights::new(weights)?,
            k,
            p: d.p(),
            with_intercept: d.with_intercept,
        })
    }

    pub fn formulation(&self) -> Formulation {
        self.formulation
    }

    pub fn objective(&self) -> &SoftmaxObjective {
        &self.objective
    }

    pub fn weights(&self) -> &PenaltyWeights {
        &self.weights
    }

    fn width(&self) -> usize {
        self.p + usize::from(self.with_intercept)
    }

    pub fn lambda_max(&self, opts: &SolverOptions) -> Result<f64> {
        null_fit(&self.objective, &self.weights, opts).map(|(_, l)| l)
    }

    fn split_blocks(&self, raw: &Array1<f64>) -> (Array2<f64>, Option<Array1<f64>>) {
        let w = self.width();
        let blocks = raw.len() / w;
        let m = raw.view().into_shape_with_order((blocks, w)).unwrap();
        if self.with_intercept {
            (m.slice(s![.., 1..]).to_owned(), Some(m.column(0).to_owned()))
        } else {
            (m.to_owned(), None)
        }
    }

    pub fn encode(&self, fit: &MultinomFit) -> Array1<f64> {
        let mut raw = Vec::new();
        let mut push = |icpt: Option<f64>, row: ArrayView1<f64>| {
            if self.with_intercept {
                raw.push(icpt.unwrap_or(0.0));
            }
            raw.extend(row.iter().copied());
        };
        if let Formulation::DataSharedRef = self.formulation {
            let mu = fit.mu.as_ref().expect("data-shared fit carries mu");
            push(fit.shared_intercept, mu.view());
        }
        for (r, row) in fit.coefficients.rows().into_iter().enumerate() {
            push(fit.intercepts.as_ref().map(|ic| ic[r]), row);
        }
        Array1::from(raw)
    }

    pub fn decode(&self, report: &SolveReport, lambda: f64) -> MultinomFit {
        let (mut coefficients, mut intercepts) = self.split_blocks(&report.coefficients);
        let mut mu = None;
        let mut shared_intercept = None;
        match self.formulation {
            Formulation::DataSharedRef => {
                mu = Some(coefficients.row(0).to_owned());
                shared_intercept = intercepts.as_ref().map(|ic| ic[0]);
                coefficients = coefficients.slice(s![1.., ..]).to_owned();
                intercepts = intercepts.map(|ic| ic.slice(s![1..]).to_owned());
            }
            Formulation::SparseSym => {
                if let Some(ic) = intercepts.as_mut() {
                    center_exact(ic);
                }
            }
            Formulation::SparseRef { .. } => {}
        }
        MultinomFit {
            formulation: self.formulation,
            n_categories: self.k,
            coefficients,
            mu,
            intercepts,
            shared_intercept,
            lambda,
            objective: report.objective,
            kkt_residual: report.kkt_residual,
            iterations: report.iterations,
            converged: report.converged,
        }
    }

    pub fn solve(
        &self,
        lambda: f64,
        init: Option<ArrayView1<f64>>,
        opts: &SolverOptions,
    ) -> Result<(SolveReport, MultinomFit)> {
        let report = solve_l1(&self.objective, &self.weights, lambda, init, opts)?;
        let fit = self.decode(&report, lambda);
        Ok((report, fit))
    }
}

/// Shifts to zero mean, then pins the last entry so the left-to-right sum is
/// exactly zero.
fn center_exact(v: &mut Array1<f64>) {
    let n = v.len();
    let mean = v.sum() / n as f64;
    v.mapv_inplace(|x| x - mean);
    let head: f64 = v.iter().take(n - 1).sum();
    v[n - 1] = -head;
}

fn fit_converged(
    problem: &MultinomProblem,
    lambda: f64,
    init: Option<&MultinomFit>,
    opts: &SolverOptions,
) -> Result<MultinomFit> {
    let raw = init.map(|f| problem.encode(f));
    let (report, fit) = problem.solve(lambda, raw.as_ref().map(|r| r.view()), opts)?;
    if !report.converged {
        return Err(Error::NotConverged {
            iterations: report.iterations,
            kkt_residual: report.kkt_residual,
        });
    }
    Ok(fit)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(
            "lambda must be finite and non-negative".into(),
        ));
    }
    Ok(())
}

pub fn fit_multinom_sparse_ref(
    d: &UnmatchedDataset,
    lambda: f64,
    reference: usize,
    init: Option<&MultinomFit>,
    opts: &SolverOptions,
) -> Result<MultinomFit> {
    check_lambda(lambda)?;
    let problem = MultinomProblem::new(d, Formulation::SparseRef { reference })?;
    fit_converged(&problem, lambda, init, opts)
}

/// Rejects `lambda = 0`: the symmetric parameterization has no unique
/// unpenalized optimum.
pub fn fit_multinom_sparse_sym(
    d: &UnmatchedDataset,
    lambda: f64,
    init: Option<&MultinomFit>,
    opts: &SolverOptions,
) -> Result<MultinomFit> {
    check_lambda(lambda)?;
    if lambda == 0.0 {
        return Err(Error::Unidentifiable);
    }
    let problem = MultinomProblem::new(d, Formulation::SparseSym)?;
    fit_converged(&problem, lambda, init, opts)
}

pub fn fit_multinom_datashared_ref(
    d: &UnmatchedDataset,
    lambda: f64,
    init: Option<&MultinomFit>,
    opts: &SolverOptions,
) -> Result<MultinomFit> {
    check_lambda(lambda)?;
    if lambda == 0.0 {
        return Err(Error::InvalidArgument(
            "the data-shared decomposition needs lambda > 0".into(),
        ));
    }
    let problem = MultinomProblem::new(d, Formulation::DataSharedRef)?;
    fit_converged(&problem, lambda, init, opts)
}

/// Closed interval of medians: `[lower, upper]` middle order statistics.
pub fn median_interval(values: &[f64]) -> (f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        (v[n / 2], v[n / 2])
    } else {
        (v[n / 2 - 1], v[n / 2])
    }
}

/// Distance from `target` to the median interval of `values`; zero when
/// `target` minimizes `sum_i |values_i - m|`.
pub fn median_gap(values: &[f64], target: f64) -> f64 {
    let (lo, hi) = median_interval(values);
    if target < lo {
        lo - target
    } else if target > hi {
        target - hi
    } else {
        0.0
    }
}

/// Largest per-covariate distance between 0 and the median interval of the
/// columns of `betas`.
pub fn median_zero_violation(betas: ArrayView2<f64>) -> f64 {
    betas
        .columns()
        .into_iter()
        .map(|c| median_gap(&c.to_vec(), 0.0))
        .fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ComplexityMode {
    /// `|beta_r|_0 + sum_{k != r} |beta_k - beta_r|_0`
    WithRefNorm,
    /// `sum_k |beta_k - beta_r|_0`
    DifferencesOnly,
}

/// Number of nonzero parameters when category `r` (0-based row of `coeffs`)
/// serves as the reference.
pub fn complexity(coeffs: ArrayView2<f64>, r: usize, mode: ComplexityMode) -> Result<usize> {
    if r >= coeffs.nrows() {
        return Err(Error::InvalidArgument(format!(
            "reference row {} out of range (have {})",
            r + 1,
            coeffs.nrows()
        )));
    }
    let reference = coeffs.row(r);
    let diffs: usize = coeffs
        .rows()
        .into_iter()
        .enumerate()
        .filter(|(k, _)| *k != r)
        .map(|(_, row)| {
            row.iter()
                .zip(reference.iter())
                .filter(|(a, b)| (*a - *b).abs() > ZERO_EPS)
                .count()
        })
        .sum();
    Ok(match mode {
        ComplexityMode::DifferencesOnly => diffs,
        ComplexityMode::WithRefNorm => {
            diffs + reference.iter().filter(|v| v.abs() > ZERO_EPS).count()
        }
    })
}

/// Outcome of checking that a SparseRef fit with the controls as reference
/// also solves the symmetric problem with the fused penalty
/// `|beta_K|_1 + sum_{k<K} |beta_k - beta_K|_1`.
#[derive(Clone, Debug)]
pub struct FusedIdentityReport {
    /// Largest `|F(beta) - G(mu, delta)|` over the random points.
    pub max_objective_gap: f64,
    /// KKT residual of the fused criterion at `(delta_1, .., delta_{K-1}, 0)`.
    pub embedded_kkt_residual: f64,
    /// Smallest `F(embedded + nu) - F(embedded)` over sampled shared shifts.
    pub min_shift_increase: f64,
    pub points: usize,
}

fn l1_rows(m: ArrayView2<f64>) -> f64 {
    m.iter().map(|v| v.abs()).sum()
}

fn split_intercept(
    d: &UnmatchedDataset,
    full: ArrayView2<f64>,
) -> (Array2<f64>, Option<Array1<f64>>) {
    if d.with_intercept {
        (full.slice(s![.., 1..]).to_owned(), Some(full.column(0).to_owned()))
    } else {
        (full.to_owned(), None)
    }
}

/// Fused symmetric criterion (minimization form); `betas` is `K x width`.
pub fn fused_sym_objective(d: &UnmatchedDataset, betas: ArrayView2<f64>, lambda: f64) -> Result<f64> {
    let nll = multinom_nll_sym(d, betas)?;
    let (b, _) = split_intercept(d, betas);
    let k = d.k;
    let last = b.row(k - 1).to_owned();
    let mut pen: f64 = last.iter().map(|v| v.abs()).sum();
    for c in 0..k - 1 {
        pen += (&b.row(c) - &last).iter().map(|v| v.abs()).sum::<f64>();
    }
    Ok(nll + lambda * pen)
}

/// `-L(delta) + lambda (|mu|_1 + sum_k |delta_k|_1)` with `deltas` of shape
/// `(K-1) x width`.
pub fn shared_ref_objective(
    d: &UnmatchedDataset,
    mu: ArrayView1<f64>,
    deltas: ArrayView2<f64>,
    lambda: f64,
) -> Result<f64> {
    let nll = multinom_nll_ref(d, deltas)?;
    let (dd, _) = split_intercept(d, deltas);
    Ok(nll + lambda * (mu.iter().map(|v| v.abs()).sum::<f64>() + l1_rows(dd.view())))
}

pub fn verify_fused_ref_identity(
    d: &UnmatchedDataset,
    fit: &MultinomFit,
    n_points: usize,
    seed: u64,
) -> Result<FusedIdentityReport> {
    let k = d.k;
    if fit.formulation != (Formulation::SparseRef { reference: k - 1 }) {
        return Err(Error::InvalidArgument(
            "fused identity check needs a SparseRef fit with the last category as reference".into(),
        ));
    }
    let lambda = fit.lambda;
    let w = d.block_width();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Algebraic identity on random points.
    let mut max_gap = 0.0_f64;
    for _ in 0..n_points {
        let betas = Array2::from_shape_fn((k, w), |_| rng.sample::<f64, _>(StandardNormal) * 0.5);
        let f = fused_sym_objective(d, betas.view(), lambda)?;
        let last = betas.row(k - 1).to_owned();
        let mut deltas = betas.slice(s![..k - 1, ..]).to_owned();
        for mut row in deltas.rows_mut() {
            row -= &last;
        }
        let mu_full = -&last;
        let mu = if d.with_intercept {
            mu_full.slice(s![1..]).to_owned()
        } else {
            mu_full
        };
        let g = shared_ref_objective(d, mu.view(), deltas.view(), lambda)?;
        max_gap = max_gap.max((f - g).abs());
    }

    // Embedded solution (delta_1, .., delta_{K-1}, 0).
    let mut embedded = Array2::<f64>::zeros((k, w));
    for c in 0..k - 1 {
        let mut row = embedded.row_mut(c);
        if d.with_intercept {
            row[0] = fit.intercepts.as_ref().map_or(0.0, |ic| ic[c]);
            row.slice_mut(s![1..]).assign(&fit.coefficients.row(c));
        } else {
            row.assign(&fit.coefficients.row(c));
        }
    }
    let grad = multinom_nll_sym_gradient(d, embedded.view())?;
    let offset = usize::from(d.with_intercept);
    let mut kkt = 0.0_f64;
    if d.with_intercept {
        for c in 0..k {
            kkt = kkt.max(grad[[c, 0]].abs());
        }
    }
    for j in offset..w {
        let mut sub_sum = 0.0;
        for c in 0..k - 1 {
            let g = grad[[c, j]];
            let v = embedded[[c, j]];
            let (s, r) = if v != 0.0 {
                (v.signum(), (g + lambda * v.signum()).abs())
            } else if lambda > 0.0 {
                ((-g / lambda).clamp(-1.0, 1.0), (g.abs() - lambda).max(0.0))
            } else {
                (0.0, g.abs())
            };
            sub_sum += s;
            kkt = kkt.max(r);
        }
        let gk = grad[[k - 1, j]];
        kkt = kkt.max(((gk - lambda * sub_sum).abs() - lambda).max(0.0));
    }

    // Shared shifts never improve the fused objective at the optimum.
    let base = fused_sym_objective(d, embedded.view(), lambda)?;
    let mut min_increase = f64::INFINITY;
    for _ in 0..n_points {
        let mut shifted = embedded.clone();
        for j in offset..w {
            let nu: f64 = rng.sample::<f64, _>(StandardNormal) * 0.1;
            for c in 0..k {
                shifted[[c, j]] += nu;
            }
        }
        let f = fused_sym_objective(d, shifted.view(), lambda)?;
        min_increase = min_increase.min(f - base);
    }

    Ok(FusedIdentityReport {
        max_objective_gap: max_gap,
        embedded_kkt_residual: kkt,
        min_shift_increase: min_increase,
        points: n_points,
    })
}
