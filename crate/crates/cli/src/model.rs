//! Strategy selection, optional standardization and JSON views of fits.

use ndarray::{Array1, Array2, Axis};
use serde::Serialize;
use subtype_lasso::cond_logit::{MatchedDataset, SharedFit, Strategy, Stratum};
use subtype_lasso::multinom::{Formulation, MultinomFit, UnmatchedDataset};
use subtype_lasso::ZERO_EPS;

use crate::error::{CliError, CliResult};
use crate::io::{matrix_rows, Dataset};

#[derive(Clone, Debug)]
pub enum ModelChoice {
    Matched(Strategy),
    Unmatched(Formulation),
}

impl ModelChoice {
    pub fn name(&self) -> String {
        match self {
            ModelChoice::Matched(s) => s.name().to_string(),
            ModelChoice::Unmatched(f) => f.name().to_string(),
        }
    }
}

/// What strategy parsing needs to know about a dataset.
#[derive(Clone, Copy, Debug)]
pub enum Shape {
    Matched { strata: usize },
    Unmatched { categories: usize },
}

impl Dataset {
    pub fn shape(&self) -> Shape {
        match self {
            Dataset::Matched(d) => Shape::Matched { strata: d.n_strata() },
            Dataset::Unmatched(d) => Shape::Unmatched { categories: d.n_categories() },
        }
    }
}

/// Resolves a strategy name for the given data.
///
/// Matched data accepts `indep`, `pooled`, `ref` and `datashared`; unmatched
/// data accepts `ref`, `sym` and `datashared`. `reference` is 1-based and
/// defaults to the first stratum (matched) or the controls (unmatched).
pub fn parse_strategy(
    name: &str,
    reference: Option<usize>,
    tau: Option<&[f64]>,
    shape: Shape,
) -> CliResult<ModelChoice> {
    let usage = |m: String| Err(CliError::Usage(m));
    match shape {
        Shape::Matched { strata } => {
            match name {
                "indep" => Ok(ModelChoice::Matched(Strategy::Indep)),
                "pooled" => Ok(ModelChoice::Matched(Strategy::Pooled)),
                "ref" => {
                    let r = reference.unwrap_or(1);
                    if r == 0 || r > strata {
                        return usage(format!("--ref must be in 1..={strata}"));
                    }
                    Ok(ModelChoice::Matched(Strategy::Ref(r - 1)))
                }
                "datashared" => match tau {
                    None => Ok(ModelChoice::Matched(Strategy::data_shared_unit(strata))),
                    Some(t) if t.len() == strata => Ok(ModelChoice::Matched(Strategy::DataShared(t.to_vec()))),
                    Some(t) => usage(format!("--tau has {} values for {strata} strata", t.len())),
                },
                other => usage(format!(
                    "strategy '{other}' is not available for matched data (indep, pooled, ref, datashared)"
                )),
            }
        }
        Shape::Unmatched { categories: k } => {
            match name {
                "ref" => {
                    let r = reference.unwrap_or(k);
                    if r == 0 || r > k {
                        return usage(format!("--ref must be in 1..={k}"));
                    }
                    Ok(ModelChoice::Unmatched(Formulation::SparseRef { reference: r - 1 }))
                }
                "sym" => Ok(ModelChoice::Unmatched(Formulation::SparseSym)),
                "datashared" => Ok(ModelChoice::Unmatched(Formulation::DataSharedRef)),
                other => usage(format!(
                    "strategy '{other}' is not available for unmatched data (ref, sym, datashared)"
                )),
            }
        }
    }
}

/// Population standard deviation of each covariate.
fn column_scales(x: &Array2<f64>) -> CliResult<Array1<f64>> {
    let sd = x.std_axis(Axis(0), 0.0);
    if let Some(j) = sd.iter().position(|&s| !(s > 0.0)) {
        return Err(CliError::Data(format!("column x{} is constant and cannot be standardized", j + 1)));
    }
    Ok(sd)
}

/// Scales every covariate to unit variance; returns the new data and the
/// scales needed to map coefficients back.
pub fn standardize(data: Dataset) -> CliResult<(Dataset, Array1<f64>)> {
    match data {
        Dataset::Matched(d) => {
            let views: Vec<_> = d
                .strata()
                .iter()
                .flat_map(|s| [s.cases.view(), s.controls.view()])
                .collect();
            let all = ndarray::concatenate(Axis(0), &views).expect("equal widths");
            let sd = column_scales(&all)?;
            let strata = d
                .strata()
                .iter()
                .map(|s| Stratum { cases: &s.cases / &sd, controls: &s.controls / &sd })
                .collect();
            Ok((Dataset::Matched(MatchedDataset::new(d.p(), strata)?), sd))
        }
        Dataset::Unmatched(d) => {
            let x = d.x().to_owned();
            let sd = column_scales(&x)?;
            let scaled = UnmatchedDataset::new(&x / &sd, d.y().to_vec(), d.n_categories(), d.with_intercept())?;
            Ok((Dataset::Unmatched(scaled), sd))
        }
    }
}

fn unscale_rows(m: &Array2<f64>, scale: Option<&Array1<f64>>) -> Array2<f64> {
    match scale {
        Some(s) => m / s,
        None => m.clone(),
    }
}

fn unscale(v: &Array1<f64>, scale: Option<&Array1<f64>>) -> Array1<f64> {
    match scale {
        Some(s) => v / s,
        None => v.clone(),
    }
}

/// Coefficients of one fit on the original covariate scale.
///
/// For unmatched fits `delta` holds each category's coefficients relative to
/// the controls, and `coefficients` the formulation's own rows.
#[derive(Debug, Clone, Serialize)]
pub struct FitJson {
    pub setting: &'static str,
    pub strategy: String,
    pub lambda: f64,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub support_size: usize,
    pub delta: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intercepts: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shared_intercept: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intercepts_vs_controls: Option<Vec<f64>>,
}

pub trait ExportFit {
    fn export(&self, scale: Option<&Array1<f64>>) -> FitJson;
    /// Estimated `(K-1) x p` coefficients against the controls.
    fn delta(&self) -> Array2<f64>;
}

impl ExportFit for SharedFit {
    fn export(&self, scale: Option<&Array1<f64>>) -> FitJson {
        FitJson {
            setting: "matched",
            strategy: self.strategy.name().to_string(),
            lambda: self.lambda,
            objective: self.objective,
            kkt_residual: self.kkt_residual,
            iterations: self.iterations,
            converged: self.converged,
            support_size: self.delta_support_size(),
            delta: matrix_rows(&unscale_rows(&self.delta, scale)),
            mu: Some(unscale(&self.mu, scale).to_vec()),
            gamma: Some(matrix_rows(&unscale_rows(&self.gamma, scale))),
            coefficients: None,
            intercepts: None,
            shared_intercept: None,
            intercepts_vs_controls: None,
        }
    }

    fn delta(&self) -> Array2<f64> {
        self.delta.clone()
    }
}

impl ExportFit for MultinomFit {
    fn export(&self, scale: Option<&Array1<f64>>) -> FitJson {
        let delta = self.delta_vs_last();
        FitJson {
            setting: "unmatched",
            strategy: self.formulation.name().to_string(),
            lambda: self.lambda,
            objective: self.objective,
            kkt_residual: self.kkt_residual,
            iterations: self.iterations,
            converged: self.converged,
            support_size: self.support_size(),
            delta: matrix_rows(&unscale_rows(&delta, scale)),
            mu: self.mu.as_ref().map(|m| unscale(m, scale).to_vec()),
            gamma: None,
            coefficients: Some(matrix_rows(&unscale_rows(&self.coefficients, scale))),
            intercepts: self.intercepts.as_ref().map(|v| v.to_vec()),
            shared_intercept: self.shared_intercept,
            intercepts_vs_controls: self.intercepts.as_ref().map(|_| self.intercepts_vs_last().to_vec()),
        }
    }

    fn delta(&self) -> Array2<f64> {
        self.delta_vs_last()
    }
}

/// Count of entries above the zero threshold.
pub fn nonzeros(m: &Array2<f64>) -> usize {
    m.iter().filter(|v| v.abs() > ZERO_EPS).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn unmatched() -> Dataset {
        let x = array![[1.0, 2.0], [3.0, 5.0], [2.0, 1.0], [0.0, 4.0]];
        Dataset::Unmatched(UnmatchedDataset::new(x, vec![0, 1, 2, 1], 3, true).unwrap())
    }

    #[test]
    fn strategy_names_resolve_per_setting() {
        let d = unmatched();
        assert!(matches!(
            parse_strategy("ref", None, None, d.shape()).unwrap(),
            ModelChoice::Unmatched(Formulation::SparseRef { reference: 2 })
        ));
        assert!(matches!(
            parse_strategy("ref", Some(1), None, d.shape()).unwrap(),
            ModelChoice::Unmatched(Formulation::SparseRef { reference: 0 })
        ));
        assert!(parse_strategy("indep", None, None, d.shape()).is_err());
        assert!(parse_strategy("ref", Some(4), None, d.shape()).is_err());
    }

    #[test]
    fn standardized_columns_have_unit_variance() {
        let (d, sd) = standardize(unmatched()).unwrap();
        let Dataset::Unmatched(u) = d else { unreachable!() };
        for s in u.x().std_axis(Axis(0), 0.0) {
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!((sd[0] - 1.25f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn constant_columns_are_rejected() {
        let x = array![[1.0, 2.0], [1.0, 5.0], [1.0, 1.0]];
        let d = Dataset::Unmatched(UnmatchedDataset::new(x, vec![0, 1, 2], 3, true).unwrap());
        assert!(matches!(standardize(d), Err(CliError::Data(_))));
    }
}
