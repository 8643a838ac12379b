//! Regularization paths and model selection (BIC with a lasso-OLS hybrid
//! refit, and V-fold cross-validation followed by the same refit).

use std::collections::HashMap;

use ndarray::{Array1, ArrayView1};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cond_logit::{MatchedDataset, MatchedProblem, SharedFit, Strategy};
use crate::error::{Error, Result};
use crate::multinom::{Formulation, MultinomFit, MultinomProblem, UnmatchedDataset};
use crate::solver::{solve_l1, PenaltyWeights, SmoothObjective, SolveReport, SolverOptions};
use crate::ZERO_EPS;

/// A penalized problem on one dataset, seen through its raw solver
/// coordinates.
pub trait Problem: Sync {
    type Fit: Clone + Send + Sync;

    fn objective(&self) -> &dyn SmoothObjective;
    fn weights(&self) -> &PenaltyWeights;
    fn encode(&self, fit: &Self::Fit) -> Array1<f64>;
    fn decode(&self, report: &SolveReport, lambda: f64) -> Result<Self::Fit>;
    /// Sum of per-observation negative log-likelihoods at raw coordinates.
    fn total_nll(&self, raw: ArrayView1<f64>) -> f64;
    /// Sample size entering the BIC penalty: pairs (matched) or
    /// observations (unmatched).
    fn sample_size(&self) -> usize;
}

impl Problem for MatchedProblem {
    type Fit = SharedFit;

    fn objective(&self) -> &dyn SmoothObjective {
        MatchedProblem::objective(self)
    }
    fn weights(&self) -> &PenaltyWeights {
        MatchedProblem::weights(self)
    }
    fn encode(&self, fit: &SharedFit) -> Array1<f64> {
        MatchedProblem::encode(self, fit)
    }
    fn decode(&self, report: &SolveReport, lambda: f64) -> Result<SharedFit> {
        MatchedProblem::decode(self, report, lambda)
    }
    fn total_nll(&self, raw: ArrayView1<f64>) -> f64 {
        MatchedProblem::objective(self).value(raw)
    }
    fn sample_size(&self) -> usize {
        MatchedProblem::objective(self).design().nrows()
    }
}

impl Problem for MultinomProblem {
    type Fit = MultinomFit;

    fn objective(&self) -> &dyn SmoothObjective {
        MultinomProblem::objective(self)
    }
    fn weights(&self) -> &PenaltyWeights {
        MultinomProblem::weights(self)
    }
    fn encode(&self, fit: &MultinomFit) -> Array1<f64> {
        MultinomProblem::encode(self, fit)
    }
    fn decode(&self, report: &SolveReport, lambda: f64) -> Result<MultinomFit> {
        Ok(MultinomProblem::decode(self, report, lambda))
    }
    fn total_nll(&self, raw: ArrayView1<f64>) -> f64 {
        let obj = MultinomProblem::objective(self);
        obj.value(raw) * obj.n_obs() as f64
    }
    fn sample_size(&self) -> usize {
        MultinomProblem::objective(self).n_obs()
    }
}

/// A model family: how to build its problem on a dataset and how to split
/// that dataset into cross-validation folds.
pub trait Model: Sync {
    type Data: Sync;
    type Problem: Problem;

    fn problem(&self, data: &Self::Data) -> Result<Self::Problem>;
    /// `(train, validation)` pairs, fold `v` holding out its share of every
    /// stratum or category.
    fn folds(&self, data: &Self::Data, folds: usize, seed: u64)
        -> Result<Vec<(Self::Data, Self::Data)>>;
}

#[derive(Clone, Debug)]
pub struct MatchedModel(pub Strategy);

#[derive(Clone, Copy, Debug)]
pub struct MultinomModel(pub Formulation);

/// Shuffles each group and deals its members round-robin into `folds`
/// buckets.
fn deal(groups: &[Vec<usize>], folds: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<Vec<usize>>> {
    let mut out = vec![vec![Vec::new(); groups.len()]; folds];
    for (g, members) in groups.iter().enumerate() {
        let mut m = members.clone();
        m.shuffle(rng);
        for (i, idx) in m.into_iter().enumerate() {
            out[i % folds][g].push(idx);
        }
    }
    out
}

fn check_folds(folds: usize) -> Result<()> {
    if folds < 2 {
        return Err(Error::InvalidArgument("at least two folds are required".into()));
    }
    Ok(())
}

/// Runs `attempt` with the fold seed, then once more with a derived seed.
fn with_retry<T>(seed: u64, attempt: impl Fn(u64) -> Result<T>) -> Result<T> {
    attempt(seed).or_else(|_| attempt(seed ^ 0x9e37_79b9_7f4a_7c15))
}

impl Model for MatchedModel {
    type Data = MatchedDataset;
    type Problem = MatchedProblem;

    fn problem(&self, data: &MatchedDataset) -> Result<MatchedProblem> {
        MatchedProblem::new(data, self.0.clone())
    }

    fn folds(
        &self,
        data: &MatchedDataset,
        folds: usize,
        seed: u64,
    ) -> Result<Vec<(MatchedDataset, MatchedDataset)>> {
        check_folds(folds)?;
        let groups: Vec<Vec<usize>> = data
            .strata()
            .iter()
            .map(|s| (0..s.n_pairs()).collect())
            .collect();
        with_retry(seed, |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dealt = deal(&groups, folds, &mut rng);
            (0..folds)
                .map(|v| {
                    let train: Vec<Vec<usize>> = (0..groups.len())
                        .map(|g| {
                            let mut idx: Vec<usize> = (0..folds)
                                .filter(|&u| u != v)
                                .flat_map(|u| dealt[u][g].iter().copied())
                                .collect();
                            idx.sort_unstable();
                            idx
                        })
                        .collect();
                    let mut valid = dealt[v].clone();
                    valid.iter_mut().for_each(|x| x.sort_unstable());
                    Ok((data.subset(&train)?, data.subset(&valid)?))
                })
                .collect()
        })
        .map_err(|e| Error::InvalidData(format!("cannot form {folds} stratified folds: {e}")))
    }
}

impl Model for MultinomModel {
    type Data = UnmatchedDataset;
    type Problem = MultinomProblem;

    fn problem(&self, data: &UnmatchedDataset) -> Result<MultinomProblem> {
        MultinomProblem::new(data, self.0)
    }

    fn folds(
        &self,
        data: &UnmatchedDataset,
        folds: usize,
        seed: u64,
    ) -> Result<Vec<(UnmatchedDataset, UnmatchedDataset)>> {
        check_folds(folds)?;
        let mut groups = vec![Vec::new(); data.n_categories()];
        for (i, &c) in data.y().iter().enumerate() {
            groups[c].push(i);
        }
        with_retry(seed, |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dealt = deal(&groups, folds, &mut rng);
            (0..folds)
                .map(|v| {
                    let mut train: Vec<usize> = (0..folds)
                        .filter(|&u| u != v)
                        .flat_map(|u| dealt[u].iter().flatten().copied())
                        .collect();
                    train.sort_unstable();
                    let mut valid: Vec<usize> = dealt[v].iter().flatten().copied().collect();
                    valid.sort_unstable();
                    Ok((data.subset(&train)?, data.subset_unchecked(&valid)?))
                })
                .collect()
        })
        .map_err(|e| Error::InvalidData(format!("cannot form {folds} stratified folds: {e}")))
    }
}

/// Geometric grid from `lambda_1` down to `lambda_1 * ratio`.
#[derive(Clone, Debug, PartialEq)]
pub struct LambdaGrid {
    values: Vec<f64>,
    anchor: f64,
    ratio: f64,
}

impl LambdaGrid {
    pub fn new(anchor: f64, ratio: f64, count: usize) -> Result<Self> {
        if count < 2 {
            return Err(Error::InvalidArgument("grid needs at least two points".into()));
        }
        if !(anchor > 0.0) || !anchor.is_finite() {
            return Err(Error::Degenerate(format!(
                "lambda_max is {anchor}; no penalized coefficient responds to the data"
            )));
        }
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(Error::InvalidArgument("grid ratio must lie in (0, 1)".into()));
        }
        let step = ratio.ln() / (count - 1) as f64;
        let mut values: Vec<f64> = (0..count)
            .map(|i| anchor * (step * i as f64).exp())
            .collect();
        values[0] = anchor;
        values[count - 1] = anchor * ratio;
        Ok(Self {
            values,
            anchor,
            ratio,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn anchor(&self) -> f64 {
        self.anchor
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub const DEFAULT_GRID_COUNT: usize = 100;
pub const DEFAULT_GRID_RATIO: f64 = 1e-3;

pub fn lambda_grid<P: Problem + ?Sized>(
    problem: &P,
    count: usize,
    ratio: f64,
    opts: &SolverOptions,
) -> Result<LambdaGrid> {
    let lmax = crate::solver::lambda_max(problem.objective(), problem.weights(), opts)?;
    LambdaGrid::new(lmax, ratio, count)
}

/// Penalized raw coordinates with `|value| > 1e-8`.
pub fn raw_support(weights: &PenaltyWeights, raw: ArrayView1<f64>) -> Vec<usize> {
    (0..raw.len())
        .filter(|&j| weights.is_penalized(j) && raw[j].abs() > ZERO_EPS)
        .collect()
}

#[derive(Clone, Debug)]
pub struct PathPoint<F> {
    pub lambda: f64,
    pub fit: Option<F>,
    pub raw: Option<Array1<f64>>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub support_size: usize,
    pub error: Option<String>,
}

impl<F> PathPoint<F> {
    pub fn is_ok(&self) -> bool {
        self.converged && self.error.is_none()
    }
}

#[derive(Clone, Debug)]
pub struct PathResult<F> {
    pub grid: LambdaGrid,
    pub points: Vec<PathPoint<F>>,
    pub warm_started: bool,
}

/// Solves at every grid value. With `warm`, each point starts from the last
/// point that produced coefficients. Failures are recorded and the path
/// continues.
pub fn fit_path<P: Problem>(
    problem: &P,
    grid: &LambdaGrid,
    warm: bool,
    opts: &SolverOptions,
) -> PathResult<P::Fit> {
    fit_path_prefix(problem, grid, grid.len(), warm, opts)
}

fn fit_path_prefix<P: Problem>(
    problem: &P,
    grid: &LambdaGrid,
    upto: usize,
    warm: bool,
    opts: &SolverOptions,
) -> PathResult<P::Fit> {
    let mut last: Option<Array1<f64>> = None;
    let mut points = Vec::with_capacity(upto);
    for &lambda in &grid.values()[..upto] {
        let init = if warm { last.as_ref().map(|x| x.view()) } else { None };
        let point = match solve_l1(problem.objective(), problem.weights(), lambda, init, opts)
            .and_then(|report| problem.decode(&report, lambda).map(|fit| (report, fit)))
        {
            Ok((report, fit)) => {
                let support_size = raw_support(problem.weights(), report.coefficients.view()).len();
                last = Some(report.coefficients.clone());
                PathPoint {
                    lambda,
                    fit: Some(fit),
                    objective: report.objective,
                    kkt_residual: report.kkt_residual,
                    iterations: report.iterations,
                    converged: report.converged,
                    support_size,
                    error: (!report.converged).then(|| {
                        format!(
                            "not converged after {} iterations (KKT residual {:.3e})",
                            report.iterations, report.kkt_residual
                        )
                    }),
                    raw: Some(report.coefficients),
                }
            }
            Err(e) => {
                log::warn!("path point lambda={lambda:.6e} failed: {e}");
                PathPoint {
                    lambda,
                    fit: None,
                    raw: None,
                    objective: f64::NAN,
                    kkt_residual: f64::NAN,
                    iterations: 0,
                    converged: false,
                    support_size: 0,
                    error: Some(e.to_string()),
                }
            }
        };
        points.push(point);
    }
    PathResult {
        grid: grid.clone(),
        points,
        warm_started: warm,
    }
}

/// Objective plus `(ridge / 2) |x|^2`.
struct Ridge<'a> {
    inner: &'a dyn SmoothObjective,
    ridge: f64,
}

impl SmoothObjective for Ridge<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn value(&self, x: ArrayView1<f64>) -> f64 {
        self.inner.value(x) + 0.5 * self.ridge * x.dot(&x)
    }
    fn gradient(&self, x: ArrayView1<f64>) -> Array1<f64> {
        self.inner.gradient(x) + &(&x * self.ridge)
    }
    fn value_and_gradient(&self, x: ArrayView1<f64>) -> (f64, Array1<f64>) {
        let (v, g) = self.inner.value_and_gradient(x);
        (v + 0.5 * self.ridge * x.dot(&x), g + &(&x * self.ridge))
    }
}

pub const REFIT_RIDGE: f64 = 1e-6;
/// Iteration cap of the plain refit; well-posed refits converge far sooner,
/// and separated ones would otherwise spend the whole budget diverging.
pub const REFIT_PLAIN_MAX_ITER: usize = 5_000;
const DIVERGENCE_BOUND: f64 = 1e3;

#[derive(Clone, Debug)]
pub struct RefitResult {
    pub raw: Array1<f64>,
    /// Sum of per-observation negative log-likelihoods at `raw`.
    pub total_nll: f64,
    pub support: Vec<usize>,
    pub ridge_fallback: bool,
    pub converged: bool,
}

/// Unpenalized maximum-likelihood refit with the penalized coordinates
/// outside `support` held at zero. Unpenalized coordinates (intercepts) stay
/// free. Falls back to a small ridge penalty when the plain refit fails to
/// converge or runs off towards infinity.
pub fn hybrid_refit<P: Problem + ?Sized>(
    problem: &P,
    support: &[usize],
    init: Option<ArrayView1<f64>>,
    opts: &SolverOptions,
) -> Result<RefitResult> {
    let base = problem.weights();
    let dim = base.len();
    let mut on = vec![false; dim];
    for &j in support {
        if j >= dim {
            return Err(Error::Dimension(format!("support index {j} out of range")));
        }
        on[j] = true;
    }
    let w: Vec<f64> = (0..dim)
        .map(|j| {
            if base.is_pinned(j) || (base.is_penalized(j) && !on[j]) {
                f64::INFINITY
            } else {
                0.0
            }
        })
        .collect();
    let support: Vec<usize> = (0..dim).filter(|&j| on[j] && base.is_penalized(j)).collect();

    if w.iter().all(|v| v.is_infinite()) {
        let raw = Array1::zeros(dim);
        return Ok(RefitResult {
            total_nll: problem.total_nll(raw.view()),
            raw,
            support,
            ridge_fallback: false,
            converged: true,
        });
    }
    let weights = PenaltyWeights::new(w)?;
    let start = init.map(|x| {
        let mut x = x.to_owned();
        for j in 0..dim {
            if weights.is_pinned(j) {
                x[j] = 0.0;
            }
        }
        x
    });

    let plain_opts = SolverOptions {
        max_iter: opts.max_iter.min(REFIT_PLAIN_MAX_ITER),
        ..*opts
    };
    let plain = solve_l1(
        problem.objective(),
        &weights,
        0.0,
        start.as_ref().map(|x| x.view()),
        &plain_opts,
    );
    let diverged = |r: &SolveReport| r.coefficients.iter().any(|v| v.abs() > DIVERGENCE_BOUND);
    if let Ok(report) = &plain {
        if report.converged && !diverged(report) {
            return Ok(RefitResult {
                total_nll: problem.total_nll(report.coefficients.view()),
                raw: report.coefficients.clone(),
                support,
                ridge_fallback: false,
                converged: true,
            });
        }
    }

    log::debug!("refit on {} coordinates falls back to ridge", support.len());
    let ridge = Ridge {
        inner: problem.objective(),
        ridge: REFIT_RIDGE,
    };
    let report = solve_l1(&ridge, &weights, 0.0, start.as_ref().map(|x| x.view()), opts)?;
    Ok(RefitResult {
        total_nll: problem.total_nll(report.coefficients.view()),
        raw: report.coefficients,
        support,
        ridge_fallback: true,
        converged: report.converged,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Bic,
    Cv,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Bic => "bic",
            Method::Cv => "cv",
        }
    }
}

#[derive(Clone, Debug)]
pub struct SelectionResult<F> {
    pub method: Method,
    pub grid: LambdaGrid,
    pub chosen_index: usize,
    pub chosen_lambda: f64,
    /// BIC or mean validation NLL per grid point; `inf` where the point
    /// failed.
    pub criterion: Vec<f64>,
    pub support_sizes: Vec<usize>,
    /// Per-fold validation NLL totals (CV only).
    pub fold_curves: Vec<Vec<f64>>,
    /// Penalized fit at the chosen lambda.
    pub penalized_fit: F,
    /// Refit on the support of `penalized_fit`.
    pub final_fit: F,
    pub refit: RefitResult,
}

/// Index of the smallest finite value; ties go to the earliest index
/// (largest lambda).
pub fn argmin_first(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if v.is_finite() && best.is_none_or(|b| v < values[b]) {
            best = Some(i);
        }
    }
    best
}

pub fn bic_value(total_nll: f64, df: usize, n: usize) -> f64 {
    2.0 * total_nll + df as f64 * (n as f64).ln()
}

fn refit_fit<P: Problem>(problem: &P, refit: &RefitResult, lambda: f64) -> Result<P::Fit> {
    let report = SolveReport {
        coefficients: refit.raw.clone(),
        objective: problem.objective().value(refit.raw.view()),
        kkt_residual: 0.0,
        iterations: 0,
        converged: refit.converged,
    };
    problem.decode(&report, lambda)
}

/// BIC selection on a computed path. Refits are cached by support.
pub fn select_bic<P: Problem>(
    problem: &P,
    path: &PathResult<P::Fit>,
    opts: &SolverOptions,
) -> Result<SelectionResult<P::Fit>> {
    let n = problem.sample_size();
    let mut cache: HashMap<Vec<usize>, RefitResult> = HashMap::new();
    let mut criterion = Vec::with_capacity(path.points.len());
    let mut support_sizes = Vec::with_capacity(path.points.len());
    for point in &path.points {
        let (Some(raw), true) = (&point.raw, point.is_ok()) else {
            criterion.push(f64::INFINITY);
            support_sizes.push(point.support_size);
            continue;
        };
        let support = raw_support(problem.weights(), raw.view());
        support_sizes.push(support.len());
        if !cache.contains_key(&support) {
            let r = hybrid_refit(problem, &support, Some(raw.view()), opts)?;
            cache.insert(support.clone(), r);
        }
        let refit = &cache[&support];
        criterion.push(bic_value(refit.total_nll, support.len(), n));
    }
    let chosen = argmin_first(&criterion)
        .ok_or_else(|| Error::Degenerate("no path point produced a usable fit".into()))?;
    let point = &path.points[chosen];
    let support = raw_support(problem.weights(), point.raw.as_ref().unwrap().view());
    let refit = cache.remove(&support).unwrap();
    Ok(SelectionResult {
        method: Method::Bic,
        grid: path.grid.clone(),
        chosen_index: chosen,
        chosen_lambda: point.lambda,
        criterion,
        support_sizes,
        fold_curves: Vec::new(),
        penalized_fit: point.fit.clone().unwrap(),
        final_fit: refit_fit(problem, &refit, point.lambda)?,
        refit,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct CvOptions {
    pub folds: usize,
    pub seed: u64,
    pub grid_count: usize,
    pub grid_ratio: f64,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self {
            folds: 5,
            seed: 0,
            grid_count: DEFAULT_GRID_COUNT,
            grid_ratio: DEFAULT_GRID_RATIO,
        }
    }
}

/// Two-stage selection: V-fold CV picks the lambda minimizing the held-out
/// negative log-likelihood per observation, then the full-data fit at that
/// lambda is refit without penalty on its support.
pub fn select_cv<M: Model>(
    model: &M,
    data: &M::Data,
    cv: &CvOptions,
    opts: &SolverOptions,
) -> Result<SelectionResult<<M::Problem as Problem>::Fit>> {
    let full = model.problem(data)?;
    let grid = lambda_grid(&full, cv.grid_count, cv.grid_ratio, opts)?;
    let folds = model.folds(data, cv.folds, cv.seed)?;

    let mut fold_curves = Vec::with_capacity(folds.len());
    let mut held_out = 0usize;
    for (train, valid) in &folds {
        let train_problem = model.problem(train)?;
        let valid_problem = model.problem(valid)?;
        held_out += valid_problem.sample_size();
        let path = fit_path(&train_problem, &grid, true, opts);
        let curve: Vec<f64> = path
            .points
            .iter()
            .map(|pt| match (&pt.raw, pt.is_ok()) {
                (Some(raw), true) => valid_problem.total_nll(raw.view()),
                _ => f64::INFINITY,
            })
            .collect();
        fold_curves.push(curve);
    }
    let criterion: Vec<f64> = (0..grid.len())
        .map(|i| fold_curves.iter().map(|c| c[i]).sum::<f64>() / held_out as f64)
        .collect();
    let chosen = argmin_first(&criterion)
        .ok_or_else(|| Error::Degenerate("every cross-validation fit failed".into()))?;

    let path = fit_path_prefix(&full, &grid, chosen + 1, true, opts);
    let support_sizes = path.points.iter().map(|p| p.support_size).collect();
    let point = path.points.last().unwrap();
    let (Some(raw), Some(fit)) = (&point.raw, &point.fit) else {
        return Err(Error::Degenerate(format!(
            "full-data fit at the selected lambda failed: {}",
            point.error.clone().unwrap_or_default()
        )));
    };
    if !point.converged {
        return Err(Error::NotConverged {
            iterations: point.iterations,
            kkt_residual: point.kkt_residual,
        });
    }
    let support = raw_support(full.weights(), raw.view());
    let refit = hybrid_refit(&full, &support, Some(raw.view()), opts)?;
    Ok(SelectionResult {
        method: Method::Cv,
        chosen_index: chosen,
        chosen_lambda: grid.values()[chosen],
        criterion,
        support_sizes,
        fold_curves,
        penalized_fit: fit.clone(),
        final_fit: refit_fit(&full, &refit, grid.values()[chosen])?,
        refit,
        grid,
    })
}

/// Computes the default path on `data` and selects by BIC.
pub fn select_bic_model<M: Model>(
    model: &M,
    data: &M::Data,
    grid_count: usize,
    grid_ratio: f64,
    opts: &SolverOptions,
) -> Result<SelectionResult<<M::Problem as Problem>::Fit>> {
    let problem = model.problem(data)?;
    let grid = lambda_grid(&problem, grid_count, grid_ratio, opts)?;
    let path = fit_path(&problem, &grid, true, opts);
    select_bic(&problem, &path, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_examples() {
        let g = LambdaGrid::new(1.0, 0.01, 3).unwrap();
        assert_eq!(g.values()[0], 1.0);
        assert!((g.values()[1] - 0.1).abs() < 1e-15);
        assert_eq!(g.values()[2], 0.01);
        assert!(LambdaGrid::new(1.0, 1.0, 10).is_err());
        assert!(LambdaGrid::new(0.0, 0.1, 10).is_err());
        assert!(LambdaGrid::new(1.0, 0.1, 1).is_err());

        let g = LambdaGrid::new(2.5, DEFAULT_GRID_RATIO, DEFAULT_GRID_COUNT).unwrap();
        assert_eq!(g.len(), 100);
        assert!(g.values().windows(2).all(|w| w[0] > w[1]));
        assert!((g.values()[99] - 2.5e-3).abs() < 1e-18);
    }

    #[test]
    fn argmin_prefers_larger_lambda() {
        assert_eq!(argmin_first(&[3.0, 1.0, 1.0, 2.0]), Some(1));
        assert_eq!(argmin_first(&[f64::INFINITY, 2.0]), Some(1));
        assert_eq!(argmin_first(&[f64::INFINITY]), None);
    }

    #[test]
    fn bic_formula() {
        assert_eq!(bic_value(10.0, 0, 100), 20.0);
        assert!((bic_value(10.0, 3, 100) - (20.0 + 3.0 * 100f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn deal_is_balanced() {
        let groups = vec![(0..7).collect::<Vec<_>>(), (7..10).collect()];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = deal(&groups, 3, &mut rng);
        let sizes: Vec<usize> = d.iter().map(|f| f[0].len()).collect();
        assert_eq!(sizes, vec![3, 2, 2]);
        let mut all: Vec<usize> = d.iter().flat_map(|f| f.iter().flatten().copied()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }
}
