//! Support recovery, heterogeneity identification and prediction error.
//!
//! Coefficient matrices are `(K-1) x p` (one row per subtype, relative to
//! the controls). An entry counts as nonzero when `|value| > 1e-8`.

use ndarray::{Array2, ArrayView2};

use crate::cond_logit::MatchedDataset;
use crate::error::{Error, Result};
use crate::multinom::{MultinomFit, UnmatchedDataset};
use crate::ZERO_EPS;

/// How agreement is counted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AccuracyMode {
    /// AccS over the `(K-1) p` entries; AccH over every covariate and
    /// subtype pair `k < l`.
    #[default]
    Entrywise,
    /// One unit per covariate, correct iff its whole column pattern matches.
    PerCovariate,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rate {
    pub matches: usize,
    pub total: usize,
}

impl Rate {
    /// Matching fraction; 1 when nothing is compared.
    pub fn value(&self) -> f64 {
        if self.total == 0 {
            1.0
        } else {
            self.matches as f64 / self.total as f64
        }
    }
}

fn nonzero(v: f64) -> bool {
    v.abs() > ZERO_EPS
}

fn check_shapes(est: ArrayView2<f64>, truth: ArrayView2<f64>) -> Result<()> {
    if est.dim() != truth.dim() {
        return Err(Error::Dimension(format!(
            "estimate is {:?} but truth is {:?}",
            est.dim(),
            truth.dim()
        )));
    }
    Ok(())
}

pub fn support_rate(est: ArrayView2<f64>, truth: ArrayView2<f64>, mode: AccuracyMode) -> Result<Rate> {
    check_shapes(est, truth)?;
    Ok(match mode {
        AccuracyMode::Entrywise => Rate {
            matches: est
                .iter()
                .zip(truth.iter())
                .filter(|(a, b)| nonzero(**a) == nonzero(**b))
                .count(),
            total: est.len(),
        },
        AccuracyMode::PerCovariate => Rate {
            matches: est
                .columns()
                .into_iter()
                .zip(truth.columns())
                .filter(|(a, b)| a.iter().zip(b.iter()).all(|(x, y)| nonzero(*x) == nonzero(*y)))
                .count(),
            total: est.ncols(),
        },
    })
}

pub fn acc_support(est: ArrayView2<f64>, truth: ArrayView2<f64>) -> Result<f64> {
    support_rate(est, truth, AccuracyMode::Entrywise).map(|r| r.value())
}

fn differs(a: f64, b: f64) -> bool {
    (a - b).abs() > ZERO_EPS
}

pub fn het_rate(est: ArrayView2<f64>, truth: ArrayView2<f64>, mode: AccuracyMode) -> Result<Rate> {
    check_shapes(est, truth)?;
    let km1 = est.nrows();
    let mut matches = 0;
    let mut total = 0;
    for j in 0..est.ncols() {
        let mut column_ok = true;
        for k in 0..km1 {
            for l in k + 1..km1 {
                let ok = differs(est[[k, j]], est[[l, j]]) == differs(truth[[k, j]], truth[[l, j]]);
                column_ok &= ok;
                if mode == AccuracyMode::Entrywise {
                    total += 1;
                    matches += usize::from(ok);
                }
            }
        }
        if mode == AccuracyMode::PerCovariate {
            total += 1;
            matches += usize::from(column_ok);
        }
    }
    Ok(Rate { matches, total })
}

pub fn acc_het(est: ArrayView2<f64>, truth: ArrayView2<f64>) -> Result<f64> {
    het_rate(est, truth, AccuracyMode::Entrywise).map(|r| r.value())
}

/// Within-pair case identification on a test set whose pairs are stored
/// case first. Pairs with even index within their stratum are presented
/// case first and the others control first; the first member is predicted
/// to be the case iff `1 / (1 + exp(delta_k . (x_1 - x_2))) >= 1/2`.
pub fn pred_err_matched_counts(delta: ArrayView2<f64>, test: &MatchedDataset) -> Result<Rate> {
    if delta.dim() != (test.n_strata(), test.p()) {
        return Err(Error::Dimension(format!(
            "coefficients are {:?}, test data has {} strata and {} covariates",
            delta.dim(),
            test.n_strata(),
            test.p()
        )));
    }
    let mut errors = 0;
    for (k, s) in test.strata().iter().enumerate() {
        let dk = delta.row(k);
        for l in 0..s.n_pairs() {
            let (first, second, first_is_case) = if l % 2 == 0 {
                (s.cases.row(l), s.controls.row(l), true)
            } else {
                (s.controls.row(l), s.cases.row(l), false)
            };
            let t = dk.dot(&(&first - &second));
            let predict_first = t <= 0.0;
            errors += usize::from(predict_first != first_is_case);
        }
    }
    let total = test.n_pairs();
    Ok(Rate {
        matches: total - errors,
        total,
    })
}

/// Misclassification rate of [`pred_err_matched_counts`].
pub fn pred_err_matched(delta: ArrayView2<f64>, test: &MatchedDataset) -> Result<f64> {
    pred_err_matched_counts(delta, test).map(|r| 1.0 - r.value())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassificationError {
    pub misclassification: f64,
    /// `-(2/n) sum_i log p_{y_i}(x_i)`.
    pub mean_deviance: f64,
    pub errors: usize,
    pub n: usize,
}

/// Argmax classification (ties to the lowest category) and deviance from an
/// `n x K` probability matrix.
pub fn classification_error(probs: ArrayView2<f64>, y: &[usize]) -> Result<ClassificationError> {
    if probs.nrows() != y.len() {
        return Err(Error::Dimension(format!(
            "{} probability rows for {} outcomes",
            probs.nrows(),
            y.len()
        )));
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= probs.ncols()) {
        return Err(Error::InvalidData(format!("outcome {} out of range", bad + 1)));
    }
    let mut errors = 0;
    let mut loglik = 0.0;
    for (row, &c) in probs.rows().into_iter().zip(y) {
        let mut best = 0;
        for (k, &p) in row.iter().enumerate() {
            if p > row[best] {
                best = k;
            }
        }
        errors += usize::from(best != c);
        loglik += row[c].ln();
    }
    let n = y.len();
    Ok(ClassificationError {
        misclassification: errors as f64 / n as f64,
        mean_deviance: -2.0 * loglik / n as f64,
        errors,
        n,
    })
}

pub fn pred_err_unmatched(fit: &MultinomFit, test: &UnmatchedDataset) -> Result<ClassificationError> {
    if fit.n_categories != test.n_categories() {
        return Err(Error::Dimension(format!(
            "fit has {} categories, test data {}",
            fit.n_categories,
            test.n_categories()
        )));
    }
    let probs: Array2<f64> = fit.predict_proba(test.x())?;
    classification_error(probs.view(), test.y())
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub acc_s: f64,
    pub acc_h: f64,
    pub pred_err: f64,
    /// Unmatched only.
    pub mean_deviance: Option<f64>,
    pub support: Rate,
    pub heterogeneity: Rate,
    pub prediction: Rate,
}

impl MetricsReport {
    pub fn new(
        est: ArrayView2<f64>,
        truth: ArrayView2<f64>,
        mode: AccuracyMode,
        prediction: Rate,
        mean_deviance: Option<f64>,
    ) -> Result<Self> {
        let support = support_rate(est, truth, mode)?;
        let heterogeneity = het_rate(est, truth, mode)?;
        Ok(Self {
            acc_s: support.value(),
            acc_h: heterogeneity.value(),
            pred_err: 1.0 - prediction.value(),
            mean_deviance,
            support,
            heterogeneity,
            prediction,
        })
    }

    pub fn matched(
        delta: ArrayView2<f64>,
        truth: ArrayView2<f64>,
        test: &MatchedDataset,
        mode: AccuracyMode,
    ) -> Result<Self> {
        let prediction = pred_err_matched_counts(delta, test)?;
        Self::new(delta, truth, mode, prediction, None)
    }

    pub fn unmatched(
        fit: &MultinomFit,
        truth: ArrayView2<f64>,
        test: &UnmatchedDataset,
        mode: AccuracyMode,
    ) -> Result<Self> {
        let ce = pred_err_unmatched(fit, test)?;
        let prediction = Rate {
            matches: ce.n - ce.errors,
            total: ce.n,
        };
        Self::new(fit.delta_vs_last().view(), truth, mode, prediction, Some(ce.mean_deviance))
    }
}
