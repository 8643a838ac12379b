//! Stratified conditional logistic regression for 1:1 matched case-control
//! data with several case subtypes.
//!
//! Each stratum `k` holds the pairs whose case has subtype `k`. Within a pair
//! the case is always stored first, and the model is
//!
//! ```text
//! P(first member is the case | one case in the pair) = 1 / (1 + exp(delta_k . (x_case - x_control)))
//! ```
//!
//! so the negative conditional log-likelihood is
//! `sum_k sum_l log(1 + exp(delta_k . d_kl))` with `d_kl = x_case - x_control`.
//! It is not divided by the number of pairs, so useful values of `lambda`
//! grow with the sample size.
//!
//! Four estimation strategies are supported, all expressed as one weighted
//! lasso over a block-structured design:
//!
//! * `Indep`: one lasso per stratum (block-diagonal design).
//! * `Pooled`: all strata share one vector.
//! * `Ref(r)`: stratum `r` anchors the shared vector (`delta_r = mu`).
//! * `DataShared(tau)`: `delta_k = mu + gamma_k`, penalized by
//!   `lambda * (|mu|_1 + sum_k tau_k |gamma_k|_1)`.

use std::sync::Arc;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::design::{sigmoid, softplus, BlockDesign, RowGroup};
use crate::error::{Error, Result};
use crate::solver::{
    null_fit, solve_l1, PenaltyWeights, SmoothObjective, SolveReport, SolverOptions,
};

/// Pairs of one subtype: row `l` of `cases` is matched with row `l` of
/// `controls`.
#[derive(Clone, Debug, PartialEq)]
pub struct Stratum {
    pub cases: Array2<f64>,
    pub controls: Array2<f64>,
}

impl Stratum {
    pub fn n_pairs(&self) -> usize {
        self.cases.nrows()
    }

    pub fn select(&self, pairs: &[usize]) -> Stratum {
        Stratum {
            cases: self.cases.select(Axis(0), pairs),
            controls: self.controls.select(Axis(0), pairs),
        }
    }
}

/// 1:1 matched pairs partitioned into `K - 1` subtype strata.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchedDataset {
    p: usize,
    strata: Vec<Stratum>,
}

impl MatchedDataset {
    pub fn new(p: usize, strata: Vec<Stratum>) -> Result<Self> {
        if strata.is_empty() {
            return Err(Error::InvalidData("at least one stratum is required".into()));
        }
        for (k, s) in strata.iter().enumerate() {
            if s.cases.nrows() == 0 {
                return Err(Error::InvalidData(format!("stratum {} has no pairs", k + 1)));
            }
            if s.cases.dim() != s.controls.dim() {
                return Err(Error::Dimension(format!(
                    "stratum {}: {} cases vs {} controls",
                    k + 1,
                    s.cases.nrows(),
                    s.controls.nrows()
                )));
            }
            if s.cases.ncols() != p {
                return Err(Error::Dimension(format!(
                    "stratum {}: covariate vectors have length {}, expected {p}",
                    k + 1,
                    s.cases.ncols()
                )));
            }
            if s.cases.iter().chain(s.controls.iter()).any(|v| !v.is_finite()) {
                return Err(Error::InvalidData(format!(
                    "stratum {} contains non-finite covariates",
                    k + 1
                )));
            }
        }
        Ok(Self { p, strata })
    }

    /// Builds a dataset from `(stratum index, case, control)` triples,
    /// stratum indices being 0-based.
    pub fn from_pairs(
        p: usize,
        n_strata: usize,
        pairs: impl IntoIterator<Item = (usize, Vec<f64>, Vec<f64>)>,
    ) -> Result<Self> {
        let mut rows: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_strata];
        for (k, case, control) in pairs {
            if k >= n_strata {
                return Err(Error::InvalidData(format!(
                    "stratum index {k} out of range (have {n_strata})"
                )));
            }
            if case.len() != p || control.len() != p {
                return Err(Error::Dimension(format!(
                    "pair covariates must have length {p}"
                )));
            }
            members[k].push(rows.len());
            rows.push((case, control));
        }
        let strata = members
            .iter()
            .map(|idx| {
                let mut cases = Array2::zeros((idx.len(), p));
                let mut controls = Array2::zeros((idx.len(), p));
                for (r, &i) in idx.iter().enumerate() {
                    cases.row_mut(r).assign(&ArrayView1::from(&rows[i].0));
                    controls.row_mut(r).assign(&ArrayView1::from(&rows[i].1));
                }
                Stratum { cases, controls }
            })
            .collect();
        Self::new(p, strata)
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// `K - 1`.
    pub fn n_strata(&self) -> usize {
        self.strata.len()
    }

    pub fn n_pairs(&self) -> usize {
        self.strata.iter().map(Stratum::n_pairs).sum()
    }

    pub fn strata(&self) -> &[Stratum] {
        &self.strata
    }

    pub fn stratum(&self, k: usize) -> &Stratum {
        &self.strata[k]
    }

    /// Keeps the listed pairs of every stratum. Fails if a stratum would be
    /// left empty.
    pub fn subset(&self, pairs_per_stratum: &[Vec<usize>]) -> Result<Self> {
        if pairs_per_stratum.len() != self.strata.len() {
            return Err(Error::Dimension("one index list per stratum expected".into()));
        }
        let strata = self
            .strata
            .iter()
            .zip(pairs_per_stratum)
            .map(|(s, idx)| s.select(idx))
            .collect();
        Self::new(self.p, strata)
    }
}

/// Per-stratum difference matrices `Delta^(k)` (row `l` = case - control).
#[derive(Clone, Debug)]
pub struct DiffMatrix {
    blocks: Vec<Arc<Array2<f64>>>,
}

impl DiffMatrix {
    pub fn blocks(&self) -> &[Arc<Array2<f64>>] {
        &self.blocks
    }

    pub fn block(&self, k: usize) -> ArrayView2<'_, f64> {
        self.blocks[k].view()
    }

    pub fn n_strata(&self) -> usize {
        self.blocks.len()
    }

    pub fn p(&self) -> usize {
        self.blocks[0].ncols()
    }

    pub fn n_pairs(&self) -> usize {
        self.blocks.iter().map(|b| b.nrows()).sum()
    }

    /// The `m x (K-1)p` block-diagonal assembly.
    pub fn block_diagonal(&self) -> Array2<f64> {
        self.indep_design().to_dense()
    }

    fn indep_design(&self) -> BlockDesign {
        let groups = (0..self.blocks.len())
            .map(|k| RowGroup {
                base: k,
                terms: vec![(k, 1.0)],
            })
            .collect();
        BlockDesign::new(self.blocks.clone(), groups, self.blocks.len())
            .expect("difference blocks share a width")
    }

    fn pooled_design(&self) -> BlockDesign {
        let groups = (0..self.blocks.len())
            .map(|k| RowGroup {
                base: k,
                terms: vec![(0, 1.0)],
            })
            .collect();
        BlockDesign::new(self.blocks.clone(), groups, 1).expect("difference blocks share a width")
    }

    /// Shared block plus one block per stratum; `scales[k]` multiplies the
    /// stratum-specific block of stratum `k`.
    fn shared_design(&self, scales: &[f64]) -> BlockDesign {
        let groups = (0..self.blocks.len())
            .map(|k| RowGroup {
                base: k,
                terms: vec![(0, 1.0), (k + 1, scales[k])],
            })
            .collect();
        BlockDesign::new(self.blocks.clone(), groups, self.blocks.len() + 1)
            .expect("difference blocks share a width")
    }
}

pub fn build_diff_matrix(d: &MatchedDataset) -> Result<DiffMatrix> {
    let mut blocks = Vec::with_capacity(d.n_strata());
    for (k, s) in d.strata().iter().enumerate() {
        if s.cases.dim() != s.controls.dim() || s.cases.ncols() != d.p() {
            return Err(Error::Dimension(format!("stratum {} is malformed", k + 1)));
        }
        blocks.push(Arc::new(&s.cases - &s.controls));
    }
    Ok(DiffMatrix { blocks })
}

fn check_delta_len(diff: &DiffMatrix, delta: ArrayView1<f64>) -> Result<()> {
    let expected = diff.n_strata() * diff.p();
    if delta.len() != expected {
        return Err(Error::Dimension(format!(
            "stacked delta has length {}, expected {expected}",
            delta.len()
        )));
    }
    Ok(())
}

/// Negative conditional log-likelihood at the stacked `(delta_1, ..., delta_{K-1})`.
pub fn cond_nll(diff: &DiffMatrix, delta: ArrayView1<f64>) -> Result<f64> {
    check_delta_len(diff, delta)?;
    let p = diff.p();
    Ok(diff
        .blocks
        .iter()
        .enumerate()
        .map(|(k, b)| {
            let eta = b.dot(&delta.slice(s![k * p..(k + 1) * p]));
            eta.iter().map(|&t| softplus(t)).sum::<f64>()
        })
        .sum())
}

pub fn cond_nll_gradient(diff: &DiffMatrix, delta: ArrayView1<f64>) -> Result<Array1<f64>> {
    check_delta_len(diff, delta)?;
    let p = diff.p();
    let mut grad = Array1::zeros(delta.len());
    for (k, b) in diff.blocks.iter().enumerate() {
        let eta = b.dot(&delta.slice(s![k * p..(k + 1) * p]));
        let r = eta.mapv(sigmoid);
        grad.slice_mut(s![k * p..(k + 1) * p]).assign(&b.t().dot(&r));
    }
    Ok(grad)
}

/// The augmented design `[Delta^(k) | 0 .. Delta^(k)/tau_k .. 0]` of the
/// data-shared reparameterization, rows in stratum order.
pub fn augment_design(diff: &DiffMatrix, tau: &[f64]) -> Result<Array2<f64>> {
    Ok(augmented_block_design(diff, tau)?.to_dense())
}

fn augmented_block_design(diff: &DiffMatrix, tau: &[f64]) -> Result<BlockDesign> {
    if tau.len() != diff.n_strata() {
        return Err(Error::Dimension(format!(
            "tau has length {}, expected {}",
            tau.len(),
            diff.n_strata()
        )));
    }
    if tau.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
        return Err(Error::InvalidArgument(
            "augment_design needs finite positive tau".into(),
        ));
    }
    let scales: Vec<f64> = tau.iter().map(|t| 1.0 / t).collect();
    Ok(diff.shared_design(&scales))
}

/// Shared vector, deviations and per-stratum coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct SharedCoefficients {
    pub mu: Array1<f64>,
    /// `(K-1) x p`.
    pub gamma: Array2<f64>,
    /// `(K-1) x p`, `delta_k = mu + gamma_k`.
    pub delta: Array2<f64>,
}

/// Maps a solution on the augmented design back to `delta_k = mu + gamma_tilde_k / tau_k`.
///
/// An infinite `tau_k` yields `gamma_k = 0`.
pub fn recover_estimates(
    mu: ArrayView1<f64>,
    gamma_tilde: ArrayView2<f64>,
    tau: &[f64],
) -> Result<SharedCoefficients> {
    if gamma_tilde.nrows() != tau.len() || gamma_tilde.ncols() != mu.len() {
        return Err(Error::Dimension(
            "gamma_tilde must be (K-1) x p with one tau per row".into(),
        ));
    }
    let mut gamma = gamma_tilde.to_owned();
    for (mut row, &t) in gamma.rows_mut().into_iter().zip(tau) {
        if t.is_infinite() {
            row.fill(0.0);
        } else {
            row.mapv_inplace(|g| g / t);
        }
    }
    let delta = &gamma + &mu.insert_axis(Axis(0));
    Ok(SharedCoefficients {
        mu: mu.to_owned(),
        gamma,
        delta,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub enum Strategy {
    Indep,
    Pooled,
    /// Reference stratum, 0-based.
    Ref(usize),
    /// One sharing weight per stratum, each in `(0, +inf]`.
    DataShared(Vec<f64>),
}

impl Strategy {
    /// Data-shared strategy with `tau_k = 1` for every stratum.
    pub fn data_shared_unit(n_strata: usize) -> Self {
        Strategy::DataShared(vec![1.0; n_strata])
    }

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Indep => "indep",
            Strategy::Pooled => "pooled",
            Strategy::Ref(_) => "ref",
            Strategy::DataShared(_) => "datashared",
        }
    }

    /// Effective sharing weights: `Indep` reads as `mu` pinned to zero with
    /// unit weights on the deviations.
    pub fn effective_tau(&self, n_strata: usize) -> Vec<f64> {
        match self {
            Strategy::Indep => vec![1.0; n_strata],
            Strategy::Pooled => vec![f64::INFINITY; n_strata],
            Strategy::Ref(r) => (0..n_strata)
                .map(|k| if k == *r { f64::INFINITY } else { 1.0 })
                .collect(),
            Strategy::DataShared(tau) => tau.clone(),
        }
    }

    pub fn validate(&self, n_strata: usize) -> Result<()> {
        match self {
            Strategy::Ref(r) if *r >= n_strata => Err(Error::InvalidArgument(format!(
                "reference stratum {} out of range (have {n_strata} strata)",
                r + 1
            ))),
            Strategy::DataShared(tau) => {
                if tau.len() != n_strata {
                    return Err(Error::Dimension(format!(
                        "tau has length {}, expected {n_strata}",
                        tau.len()
                    )));
                }
                if tau.iter().any(|t| t.is_nan() || *t <= 0.0) {
                    return Err(Error::InvalidArgument("tau entries must be positive".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PenaltySpec {
    pub lambda: f64,
    pub strategy: Strategy,
}

#[derive(Clone, Debug)]
pub struct SharedFit {
    pub strategy: Strategy,
    pub mu: Array1<f64>,
    pub gamma: Array2<f64>,
    pub delta: Array2<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub lambda: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl SharedFit {
    /// Nonzero entries of `delta` (|value| > 1e-8).
    pub fn delta_support_size(&self) -> usize {
        self.delta.iter().filter(|v| v.abs() > crate::ZERO_EPS).count()
    }
}

/// Smooth part `sum_rows log(1 + exp(eta))` over a block design.
#[derive(Clone, Debug)]
pub struct CondLogitObjective {
    design: BlockDesign,
}

impl CondLogitObjective {
    pub fn new(design: BlockDesign) -> Self {
        Self { design }
    }

    /// Objective on an explicit `m x d` matrix.
    pub fn from_dense(matrix: Array2<f64>) -> Self {
        let design = BlockDesign::new(
            vec![Arc::new(matrix)],
            vec![RowGroup {
                base: 0,
                terms: vec![(0, 1.0)],
            }],
            1,
        )
        .expect("single base");
        Self { design }
    }

    pub fn design(&self) -> &BlockDesign {
        &self.design
    }
}

impl SmoothObjective for CondLogitObjective {
    fn dim(&self) -> usize {
        self.design.ncols()
    }

    fn value(&self, x: ArrayView1<f64>) -> f64 {
        self.value_at(x, self.design.apply(x).view())
    }

    fn gradient(&self, x: ArrayView1<f64>) -> Array1<f64> {
        self.value_and_gradient(x).1
    }

    fn value_and_gradient(&self, x: ArrayView1<f64>) -> (f64, Array1<f64>) {
        self.value_and_gradient_at(x, self.design.apply(x).view())
    }

    fn predictor(&self, x: ArrayView1<f64>) -> Option<Array1<f64>> {
        Some(self.design.apply(x))
    }

    fn value_at(&self, _x: ArrayView1<f64>, eta: ArrayView1<f64>) -> f64 {
        eta.iter().map(|&t| softplus(t)).sum()
    }

    fn value_and_gradient_at(&self, _x: ArrayView1<f64>, eta: ArrayView1<f64>) -> (f64, Array1<f64>) {
        let mut value = 0.0;
        let resid = eta.mapv(|t| {
            let e = (-t.abs()).exp();
            value += t.max(0.0) + e.ln_1p();
            if t >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) }
        });
        (value, self.design.apply_transpose(resid.view()))
    }
}

/// A matched dataset and a strategy, reduced to one weighted lasso problem.
///
/// Raw coefficients are laid out by column block: `delta_1..delta_{K-1}` for
/// `Indep`, `mu` for `Pooled`, and `(mu, gamma_tilde_1, ..)` otherwise.
#[derive(Clone, Debug)]
pub struct MatchedProblem {
    strategy: Strategy,
    objective: CondLogitObjective,
    weights: PenaltyWeights,
    tau: Vec<f64>,
    p: usize,
    n_strata: usize,
}

impl MatchedProblem {
    pub fn new(data: &MatchedDataset, strategy: Strategy) -> Result<Self> {
        strategy.validate(data.n_strata())?;
        let diff = build_diff_matrix(data)?;
        Self::from_diff(&diff, strategy)
    }

    pub fn from_diff(diff: &DiffMatrix, strategy: Strategy) -> Result<Self> {
        let n_strata = diff.n_strata();
        let p = diff.p();
        strategy.validate(n_strata)?;
        let tau = strategy.effective_tau(n_strata);
        let (design, weights) = match &strategy {
            Strategy::Indep => (diff.indep_design(), vec![1.0; n_strata * p]),
            Strategy::Pooled => (diff.pooled_design(), vec![1.0; p]),
            Strategy::Ref(_) | Strategy::DataShared(_) => {
                // Infinite tau: the block is pinned to zero, so its scale is
                // irrelevant.
                let finite: Vec<f64> = tau
                    .iter()
                    .map(|&t| if t.is_finite() { t } else { 1.0 })
                    .collect();
                let design = augmented_block_design(diff, &finite)?;
                let mut w = vec![1.0; p];
                for &t in &tau {
                    let wk = if t.is_finite() { 1.0 } else { f64::INFINITY };
                    w.extend(std::iter::repeat_n(wk, p));
                }
                (design, w)
            }
        };
        Ok(Self {
            strategy,
            objective: CondLogitObjective::new(design),
            weights: PenaltyWeights::new(weights)?,
            tau,
            p,
            n_strata,
        })
    }

    pub fn strategy(&self) -> &Strategy {
        &self.strategy
    }

    pub fn objective(&self) -> &CondLogitObjective {
        &self.objective
    }

    pub fn weights(&self) -> &PenaltyWeights {
        &self.weights
    }

    pub fn lambda_max(&self, opts: &SolverOptions) -> Result<f64> {
        null_fit(&self.objective, &self.weights, opts).map(|(_, l)| l)
    }

    /// Raw solver coordinates of a fit.
    pub fn encode(&self, fit: &SharedFit) -> Array1<f64> {
        match self.strategy {
            Strategy::Indep => fit.delta.iter().copied().collect(),
            Strategy::Pooled => fit.mu.clone(),
            _ => {
                let mut raw = fit.mu.to_vec();
                for (row, &t) in fit.gamma.rows().into_iter().zip(&self.tau) {
                    if t.is_finite() {
                        raw.extend(row.iter().map(|g| g * t));
                    } else {
                        raw.extend(std::iter::repeat_n(0.0, self.p));
                    }
                }
                Array1::from(raw)
            }
        }
    }

    pub fn decode(&self, report: &SolveReport, lambda: f64) -> Result<SharedFit> {
        let raw = &report.coefficients;
        let (p, k1) = (self.p, self.n_strata);
        let coef = match self.strategy {
            Strategy::Indep => {
                let delta = raw.view().into_shape_with_order((k1, p)).unwrap().to_owned();
                SharedCoefficients {
                    mu: Array1::zeros(p),
                    gamma: delta.clone(),
                    delta,
                }
            }
            Strategy::Pooled => {
                let mu = raw.clone();
                SharedCoefficients {
                    delta: Array2::from_shape_fn((k1, p), |(_, j)| mu[j]),
                    gamma: Array2::zeros((k1, p)),
                    mu,
                }
            }
            _ => {
                let mu = raw.slice(s![..p]);
                let gamma_tilde = raw.slice(s![p..]).into_shape_with_order((k1, p)).unwrap();
                recover_estimates(mu, gamma_tilde, &self.tau)?
            }
        };
        Ok(SharedFit {
            strategy: self.strategy.clone(),
            mu: coef.mu,
            gamma: coef.gamma,
            delta: coef.delta,
            objective: report.objective,
            kkt_residual: report.kkt_residual,
            lambda,
            iterations: report.iterations,
            converged: report.converged,
        })
    }

    /// Solves at `lambda`; a non-converged solve is returned, not raised.
    pub fn solve(
        &self,
        lambda: f64,
        init: Option<ArrayView1<f64>>,
        opts: &SolverOptions,
    ) -> Result<(SolveReport, SharedFit)> {
        let report = solve_l1(&self.objective, &self.weights, lambda, init, opts)?;
        let fit = self.decode(&report, lambda)?;
        Ok((report, fit))
    }
}

/// Fits one strategy at one `lambda`.
pub fn fit_matched(
    d: &MatchedDataset,
    spec: &PenaltySpec,
    init: Option<&SharedFit>,
    opts: &SolverOptions,
) -> Result<SharedFit> {
    let problem = MatchedProblem::new(d, spec.strategy.clone())?;
    let raw_init = init.map(|f| problem.encode(f));
    let (report, fit) = problem.solve(spec.lambda, raw_init.as_ref().map(|x| x.view()), opts)?;
    if !report.converged {
        return Err(Error::NotConverged {
            iterations: report.iterations,
            kkt_residual: report.kkt_residual,
        });
    }
    Ok(fit)
}

/// `sum_k sum_l log(1 + exp(delta_k . d_kl))` for per-stratum coefficients.
pub fn matched_nll(d: &MatchedDataset, delta: ArrayView2<f64>) -> Result<f64> {
    let diff = build_diff_matrix(d)?;
    if delta.dim() != (diff.n_strata(), diff.p()) {
        return Err(Error::Dimension(format!(
            "delta is {:?}, expected ({}, {})",
            delta.dim(),
            diff.n_strata(),
            diff.p()
        )));
    }
    let stacked: Array1<f64> = delta.iter().copied().collect();
    cond_nll(&diff, stacked.view())
}

/// The data-shared objective recomputed from its definition:
/// `nll(delta) + lambda * (|mu|_1 + sum_k tau_k |gamma_k|_1)`.
pub fn shared_objective(d: &MatchedDataset, fit: &SharedFit) -> Result<f64> {
    let nll = matched_nll(d, fit.delta.view())?;
    let tau = fit.strategy.effective_tau(d.n_strata());
    let mut pen: f64 = fit.mu.iter().map(|v| v.abs()).sum();
    for (row, t) in fit.gamma.rows().into_iter().zip(tau) {
        let l1: f64 = row.iter().map(|v| v.abs()).sum();
        if l1 > 0.0 {
            pen += t * l1;
        }
    }
    Ok(nll + fit.lambda * pen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn two_strata() -> MatchedDataset {
        MatchedDataset::from_pairs(
            1,
            2,
            vec![(0, vec![3.0], vec![1.0]), (1, vec![-1.0], vec![0.5])],
        )
        .unwrap()
    }

    #[test]
    fn pair_difference() {
        let d = MatchedDataset::from_pairs(2, 1, vec![(0, vec![1.0, 2.0], vec![0.0, 1.0])]).unwrap();
        let diff = build_diff_matrix(&d).unwrap();
        assert_eq!(diff.block(0), array![[1.0, 1.0]]);
    }

    #[test]
    fn identical_members_give_zero_row() {
        let d = MatchedDataset::from_pairs(2, 1, vec![(0, vec![0.3, -2.0], vec![0.3, -2.0])]).unwrap();
        let diff = build_diff_matrix(&d).unwrap();
        assert_eq!(diff.block(0), array![[0.0, 0.0]]);
        // degenerate pair contributes log 2 and no gradient
        let v = cond_nll(&diff, array![5.0, -1.0].view()).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-15);
        let g = cond_nll_gradient(&diff, array![5.0, -1.0].view()).unwrap();
        assert_eq!(g, array![0.0, 0.0]);
    }

    #[test]
    fn block_diagonal_layout() {
        let diff = build_diff_matrix(&two_strata()).unwrap();
        assert_eq!(diff.block_diagonal(), array![[2.0, 0.0], [0.0, -1.5]]);
    }

    #[test]
    fn nll_examples() {
        let diff = build_diff_matrix(&two_strata()).unwrap();
        let v0 = cond_nll(&diff, array![0.0, 0.0].view()).unwrap();
        assert!((v0 - 2.0 * 2f64.ln()).abs() < 1e-15);

        let one = MatchedDataset::from_pairs(1, 1, vec![(0, vec![1.0], vec![0.0])]).unwrap();
        let d1 = build_diff_matrix(&one).unwrap();
        let v = cond_nll(&d1, array![1.0].view()).unwrap();
        assert!((v - (1.0 + 1f64.exp()).ln()).abs() < 1e-15);

        assert!(cond_nll(&diff, array![1.0].view()).is_err());
    }

    #[test]
    fn nll_overflow_guard() {
        let one = MatchedDataset::from_pairs(1, 1, vec![(0, vec![1000.0], vec![0.0])]).unwrap();
        let d1 = build_diff_matrix(&one).unwrap();
        let v = cond_nll(&d1, array![1.0].view()).unwrap();
        assert_eq!(v, 1000.0);
        let g = cond_nll_gradient(&d1, array![1.0].view()).unwrap();
        assert_eq!(g[0], 1000.0);
    }

    #[test]
    fn augmented_design_examples() {
        let diff = build_diff_matrix(&MatchedDataset::from_pairs(
            1,
            2,
            vec![(0, vec![2.0], vec![0.0]), (1, vec![0.0], vec![3.0])],
        )
        .unwrap())
        .unwrap();
        let (a, b) = (2.0, -3.0);
        let aug = augment_design(&diff, &[1.0, 1.0]).unwrap();
        assert_eq!(aug, array![[a, a, 0.0], [b, 0.0, b]]);
        let aug2 = augment_design(&diff, &[2.0, 2.0]).unwrap();
        assert_eq!(aug2, array![[a, a / 2.0, 0.0], [b, 0.0, b / 2.0]]);
        assert!(augment_design(&diff, &[1.0, 0.0]).is_err());
        assert!(augment_design(&diff, &[1.0, -1.0]).is_err());
        assert!(augment_design(&diff, &[1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn recover_examples() {
        let gt = array![[1.0, -2.0], [4.0, 0.5]];
        let r = recover_estimates(array![0.0, 0.0].view(), gt.view(), &[2.0, 0.5]).unwrap();
        assert_eq!(r.delta, array![[0.5, -1.0], [8.0, 1.0]]);
        assert_eq!(r.gamma, r.delta);

        let mu = array![0.7, -0.2];
        let r = recover_estimates(mu.view(), Array2::zeros((3, 2)).view(), &[1.0, 2.0, 3.0]).unwrap();
        for row in r.delta.rows() {
            assert_eq!(row, mu);
        }

        let r = recover_estimates(mu.view(), gt.view(), &[f64::INFINITY, 1.0]).unwrap();
        assert_eq!(r.delta.row(0), mu);
    }

    #[test]
    fn strategy_validation() {
        assert!(Strategy::Ref(2).validate(2).is_err());
        assert!(Strategy::Ref(1).validate(2).is_ok());
        assert!(Strategy::DataShared(vec![1.0]).validate(2).is_err());
        assert!(Strategy::DataShared(vec![1.0, 0.0]).validate(2).is_err());
        assert!(Strategy::DataShared(vec![1.0, f64::INFINITY]).validate(2).is_ok());
    }

    #[test]
    fn dataset_validation() {
        let s = Stratum {
            cases: Array2::zeros((2, 3)),
            controls: Array2::zeros((1, 3)),
        };
        assert!(MatchedDataset::new(3, vec![s]).is_err());
        let empty = Stratum {
            cases: Array2::zeros((0, 3)),
            controls: Array2::zeros((0, 3)),
        };
        assert!(MatchedDataset::new(3, vec![empty]).is_err());
        assert!(MatchedDataset::from_pairs(2, 1, vec![(0, vec![1.0], vec![1.0, 2.0])]).is_err());
        assert!(MatchedDataset::from_pairs(1, 1, vec![(1, vec![1.0], vec![1.0])]).is_err());
    }
}
