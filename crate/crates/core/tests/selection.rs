//! Paths, the hybrid refit, BIC and cross-validation.

mod common;

use common::*;
use ndarray::{Array1, Array2};
use subtype_lasso::cond_logit::{MatchedProblem, Strategy};
use subtype_lasso::metrics::pred_err_matched;
use subtype_lasso::multinom::{Formulation, MultinomProblem};
use subtype_lasso::select::{
    bic_value, fit_path, hybrid_refit, lambda_grid, raw_support, select_bic, select_bic_model,
    select_cv, CvOptions, MatchedModel, Model, MultinomModel, Problem, DEFAULT_GRID_COUNT,
    DEFAULT_GRID_RATIO,
};
use subtype_lasso::simgen::{child_seed, gen_truth, sample_matched, SimConfig};
use subtype_lasso::solver::{SmoothObjective, SolverOptions};

fn opts() -> SolverOptions {
    SolverOptions::default()
}

#[test]
fn warm_and_cold_paths_agree() {
    let mut r = rng(1);
    let d = random_matched(&mut r, &[30, 20, 25], 5, 0.7);
    let prob = MatchedProblem::new(&d, Strategy::data_shared_unit(3)).unwrap();
    let grid = lambda_grid(&prob, 20, 1e-2, &opts()).unwrap();
    let warm = fit_path(&prob, &grid, true, &opts());
    let cold = fit_path(&prob, &grid, false, &opts());
    assert!(warm.warm_started && !cold.warm_started);
    for (w, c) in warm.points.iter().zip(&cold.points) {
        assert!(w.is_ok() && c.is_ok());
        assert_eq!(w.lambda, c.lambda);
        assert!((w.objective - c.objective).abs() < 1e-8, "{} vs {}", w.objective, c.objective);
    }
    assert_eq!(warm.points[0].support_size, 0);
    assert!(warm.points[1].support_size <= 3);
    assert!(warm.points.last().unwrap().support_size > 0);
}

#[test]
fn multinomial_path_starts_empty() {
    let mut r = rng(2);
    let u = random_unmatched(&mut r, 120, 4, 3, true);
    let prob = MultinomProblem::new(&u, Formulation::SparseSym).unwrap();
    let grid = lambda_grid(&prob, 10, 1e-2, &opts()).unwrap();
    let path = fit_path(&prob, &grid, true, &opts());
    assert_eq!(path.points.len(), 10);
    assert_eq!(path.points[0].support_size, 0);
    for (pt, &l) in path.points.iter().zip(grid.values()) {
        assert_eq!(pt.lambda, l);
        assert_eq!(pt.fit.as_ref().unwrap().lambda, l);
    }
}

#[test]
fn refit_special_supports() {
    let mut r = rng(3);
    let u = random_unmatched(&mut r, 150, 3, 3, true);
    let prob = MultinomProblem::new(&u, Formulation::SparseRef { reference: 2 }).unwrap();

    // Empty support: intercept-only model, saturated-null deviance.
    let empty = hybrid_refit(&prob, &[], None, &opts()).unwrap();
    let counts = u.category_counts();
    let n = u.n() as f64;
    let null_nll: f64 = counts.iter().map(|&c| -(c as f64) * (c as f64 / n).ln()).sum();
    assert!((empty.total_nll - null_nll).abs() < 1e-6, "{} vs {null_nll}", empty.total_nll);
    assert!(!empty.ridge_fallback);

    // Full support: the unpenalized fit.
    let all: Vec<usize> = (0..prob.weights().len()).filter(|&j| prob.weights().is_penalized(j)).collect();
    let full = hybrid_refit(&prob, &all, None, &opts()).unwrap();
    let (rep, _) = prob.solve(0.0, None, &opts()).unwrap();
    let gap = max_abs(full.raw.iter().zip(rep.coefficients.iter()).map(|(a, b)| a - b));
    assert!(gap < 1e-5, "{gap}");
}

#[test]
fn refit_never_increases_training_nll() {
    let mut r = rng(4);
    let d = random_matched(&mut r, &[40, 30, 30], 6, 0.5);
    let prob = MatchedProblem::new(&d, Strategy::data_shared_unit(3)).unwrap();
    let grid = lambda_grid(&prob, 15, 1e-2, &opts()).unwrap();
    let path = fit_path(&prob, &grid, true, &opts());
    for pt in &path.points {
        let raw = pt.raw.as_ref().unwrap();
        let support = raw_support(prob.weights(), raw.view());
        let refit = hybrid_refit(&prob, &support, Some(raw.view()), &opts()).unwrap();
        let lasso_nll = prob.total_nll(raw.view());
        assert!(refit.total_nll <= lasso_nll + 1e-10, "{} > {lasso_nll}", refit.total_nll);
        assert_eq!(refit.support, support);
    }
}

#[test]
fn bic_curve_is_reproducible() {
    let mut r = rng(5);
    let u = random_unmatched(&mut r, 200, 5, 3, true);
    let prob = MultinomProblem::new(&u, Formulation::SparseRef { reference: 2 }).unwrap();
    let grid = lambda_grid(&prob, 25, 1e-2, &opts()).unwrap();
    let path = fit_path(&prob, &grid, true, &opts());
    let sel = select_bic(&prob, &path, &opts()).unwrap();
    for (i, pt) in path.points.iter().enumerate() {
        let raw = pt.raw.as_ref().unwrap();
        let support = raw_support(prob.weights(), raw.view());
        let refit = hybrid_refit(&prob, &support, Some(raw.view()), &opts()).unwrap();
        assert_eq!(sel.support_sizes[i], support.len());
        let recomputed = bic_value(refit.total_nll, support.len(), u.n());
        assert!((recomputed - sel.criterion[i]).abs() <= 1e-9 * recomputed.abs(), "point {i}");
    }
    let best = sel.criterion[sel.chosen_index];
    assert!(sel.criterion.iter().all(|&c| c >= best));
    assert!(sel.criterion[..sel.chosen_index].iter().all(|&c| c > best));
}

fn bic_support(u: &subtype_lasso::multinom::UnmatchedDataset) -> Vec<usize> {
    let model = MultinomModel(Formulation::SparseRef { reference: 2 });
    let sel = select_bic_model(&model, u, DEFAULT_GRID_COUNT, DEFAULT_GRID_RATIO, &opts()).unwrap();
    let prob = model.problem(u).unwrap();
    raw_support(prob.weights(), sel.refit.raw.view())
}

#[test]
fn bic_monte_carlo() {
    let (n, p, runs) = (500, 10, 50usize);
    let mut empty = 0;
    let mut hit = 0;
    for run in 0..runs {
        let mut r = rng(child_seed(2024, run as u64));
        let zero = Array2::zeros((2, p));
        let b = Array1::zeros(2);
        let noise = unmatched_from(&mut r, n, &zero, &b, true);
        empty += usize::from(bic_support(&noise).is_empty());

        let mut signal = Array2::zeros((2, p));
        signal[[0, 3]] = 1.0;
        let strong = unmatched_from(&mut r, n, &signal, &b, true);
        // raw coordinate of covariate 3 in the first block (intercept first)
        hit += usize::from(bic_support(&strong).contains(&4));
    }
    // Under the null each of the 20 penalized coordinates enters the BIC
    // choice only if twice its likelihood gain exceeds ln(n), which a chi-square
    // with one degree of freedom does with probability about 0.0127.
    let p_one = chi2_1_tail(f64::ln(n as f64));
    let expected = (1.0 - p_one).powi(2 * p as i32);
    let sd = (expected * (1.0 - expected) / runs as f64).sqrt();
    println!("BIC pure noise: empty support in {empty}/{runs} runs (independence approximation {expected:.3})");
    println!("BIC strong signal: true coordinate kept in {hit}/{runs} runs");
    assert!(empty as f64 / runs as f64 >= expected - 3.0 * sd, "empty support in {empty}/{runs}");
    assert!(hit * 10 >= runs * 9, "true coordinate in {hit}/{runs}");
}

/// Upper tail of a chi-square with one degree of freedom.
fn chi2_1_tail(x: f64) -> f64 {
    libm::erfc((x / 2.0).sqrt())
}

#[test]
fn cross_validation_is_deterministic() {
    let mut r = rng(6);
    let d = random_matched(&mut r, &[30, 20, 25], 4, 0.8);
    let cv = CvOptions { folds: 5, seed: 3, grid_count: 20, grid_ratio: 1e-2 };
    let model = MatchedModel(Strategy::data_shared_unit(3));
    let a = select_cv(&model, &d, &cv, &opts()).unwrap();
    let b = select_cv(&model, &d, &cv, &opts()).unwrap();
    assert_eq!(a.chosen_index, b.chosen_index);
    assert_eq!(a.criterion, b.criterion);
    assert_eq!(a.refit.raw, b.refit.raw);
    assert_eq!(a.final_fit.delta, b.final_fit.delta);

    // The curve is the per-observation mean of the fold totals.
    let held_out: usize = model
        .folds(&d, 5, 3)
        .unwrap()
        .iter()
        .map(|(_, v)| v.n_pairs())
        .sum();
    assert_eq!(held_out, d.n_pairs());
    for i in 0..a.criterion.len() {
        let total: f64 = a.fold_curves.iter().map(|c| c[i]).sum();
        assert_eq!(total / held_out as f64, a.criterion[i]);
    }

    let u = random_unmatched(&mut r, 150, 3, 3, true);
    let m = MultinomModel(Formulation::SparseRef { reference: 2 });
    let a = select_cv(&m, &u, &cv, &opts()).unwrap();
    let b = select_cv(&m, &u, &cv, &opts()).unwrap();
    assert_eq!(a.criterion, b.criterion);
    assert_eq!(a.final_fit.coefficients, b.final_fit.coefficients);
}

#[test]
fn matched_folds_keep_pairs_within_strata() {
    let mut r = rng(7);
    let d = random_matched(&mut r, &[11, 7, 5], 2, 0.8);
    let folds = MatchedModel(Strategy::Indep).folds(&d, 5, 9).unwrap();
    for (k, s) in d.strata().iter().enumerate() {
        let held: usize = folds.iter().map(|(_, v)| v.stratum(k).n_pairs()).sum();
        assert_eq!(held, s.n_pairs());
        for (t, v) in &folds {
            assert_eq!(t.stratum(k).n_pairs() + v.stratum(k).n_pairs(), s.n_pairs());
        }
    }
    // A stratum smaller than the fold count cannot be split.
    let tiny = random_matched(&mut r, &[3, 8], 2, 0.8);
    assert!(MatchedModel(Strategy::Indep).folds(&tiny, 5, 1).is_err());
}

#[test]
fn cv_data_shared_beats_indep_on_homogeneous_data() {
    let reps = 20;
    let cv = CvOptions { folds: 5, seed: 0, grid_count: DEFAULT_GRID_COUNT, grid_ratio: DEFAULT_GRID_RATIO };
    let mut wins = 0;
    for rep in 0..reps {
        let seed = child_seed(77, rep);
        let cfg = SimConfig::matched(1, 2.0, seed);
        let mut rng = cfg.rng();
        let truth = gen_truth(&cfg, &mut rng).unwrap();
        let train = sample_matched(&cfg, &truth, &mut rng).unwrap();
        let test = sample_matched(&cfg, &truth, &mut subtype_lasso::simgen::SimConfig { seed: child_seed(seed, 1), ..cfg.clone() }.rng()).unwrap();
        let cvo = CvOptions { seed, ..cv };
        let err = |st: Strategy| {
            let sel = select_cv(&MatchedModel(st), &train, &cvo, &opts()).unwrap();
            pred_err_matched(sel.final_fit.delta.view(), &test).unwrap()
        };
        let ds = err(Strategy::data_shared_unit(6));
        let ind = err(Strategy::Indep);
        wins += usize::from(ds < ind);
    }
    println!("CV DataShared lower Pred.Err than Indep in {wins}/{reps} replicates");
    assert!(wins * 10 >= reps as usize * 7);
}

#[test]
fn sample_size_conventions() {
    let mut r = rng(8);
    let d = random_matched(&mut r, &[10, 6], 2, 0.8);
    let prob = MatchedProblem::new(&d, Strategy::Indep).unwrap();
    assert_eq!(Problem::sample_size(&prob), 16);
    let x = Array1::zeros(prob.objective().dim());
    assert!((prob.total_nll(x.view()) - 16.0 * 2f64.ln()).abs() < 1e-12);

    let u = random_unmatched(&mut r, 60, 2, 3, false);
    let mp = MultinomProblem::new(&u, Formulation::SparseSym).unwrap();
    assert_eq!(Problem::sample_size(&mp), 60);
    let x = Array1::zeros(mp.objective().dim());
    assert!((mp.total_nll(x.view()) - 60.0 * 3f64.ln()).abs() < 1e-10);
}
