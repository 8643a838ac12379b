//! Reparameterization identities and special cases of the estimators.

mod common;

use std::sync::Arc;

use common::*;
use ndarray::{array, s, Array1, Array2, Axis};
use subtype_lasso::cond_logit::{
    augment_design, build_diff_matrix, fit_matched, recover_estimates, shared_objective,
    CondLogitObjective, MatchedDataset, MatchedProblem, PenaltySpec, Strategy, Stratum,
};
use subtype_lasso::design::{BlockDesign, RowGroup};
use subtype_lasso::multinom::{
    complexity, fit_multinom_datashared_ref, fit_multinom_sparse_ref, fit_multinom_sparse_sym,
    median_gap, median_zero_violation, verify_fused_ref_identity, ComplexityMode, Formulation,
    MultinomProblem,
};
use subtype_lasso::solver::{solve_l1, PenaltyWeights, SolverOptions};

const TOL: f64 = 1e-8;

fn opts() -> SolverOptions {
    SolverOptions::with_tol(TOL)
}

fn fit(d: &MatchedDataset, strategy: Strategy, lambda: f64) -> subtype_lasso::cond_logit::SharedFit {
    fit_matched(d, &PenaltySpec { lambda, strategy }, None, &opts()).unwrap()
}

fn lmax(d: &MatchedDataset, strategy: Strategy) -> f64 {
    MatchedProblem::new(d, strategy).unwrap().lambda_max(&opts()).unwrap()
}

#[test]
fn augmented_routes_agree() {
    let mut r = rng(1);
    let d = random_matched(&mut r, &[40, 25, 30], 4, 0.7);
    let diff = build_diff_matrix(&d).unwrap();
    let tau = vec![1.0, 0.5, 2.0];
    let strategy = Strategy::DataShared(tau.clone());
    let lambda = 0.2 * lmax(&d, strategy.clone());

    // Block route.
    let block = fit(&d, strategy, lambda);

    // Dense augmented matrix with unit weights, then map back.
    let dense = augment_design(&diff, &tau).unwrap();
    let obj = CondLogitObjective::from_dense(dense);
    let w = PenaltyWeights::uniform(16, 1.0).unwrap();
    let rep = solve_l1(&obj, &w, lambda, None, &opts()).unwrap();
    assert!(rep.converged);
    let mu = rep.coefficients.slice(s![..4]);
    let gt = rep.coefficients.slice(s![4..]).into_shape_with_order((3, 4)).unwrap();
    let dense_coef = recover_estimates(mu, gt, &tau).unwrap();

    // Direct (mu, gamma) parameterization: unscaled design, weights tau_k.
    let bases: Vec<Arc<Array2<f64>>> = diff.blocks().to_vec();
    let groups = (0..3)
        .map(|k| RowGroup { base: k, terms: vec![(0, 1.0), (k + 1, 1.0)] })
        .collect();
    let direct_obj = CondLogitObjective::new(BlockDesign::new(bases, groups, 4).unwrap());
    let mut wd = vec![1.0; 4];
    for t in &tau {
        wd.extend([*t; 4]);
    }
    let rep2 = solve_l1(&direct_obj, &PenaltyWeights::new(wd).unwrap(), lambda, None, &opts()).unwrap();
    assert!(rep2.converged);
    let gamma = rep2.coefficients.slice(s![4..]).into_shape_with_order((3, 4)).unwrap().to_owned();
    let mu2 = rep2.coefficients.slice(s![..4]).to_owned();
    let delta2 = &gamma + &mu2.view().insert_axis(Axis(0));

    assert!((block.objective - rep.objective).abs() < 1e-8);
    assert!((block.objective - rep2.objective).abs() < 1e-8);
    let objective_check = shared_objective(&d, &block).unwrap();
    assert!((objective_check - block.objective).abs() < 1e-9);
    for (a, b) in block.delta.iter().zip(dense_coef.delta.iter()) {
        assert!((a - b).abs() < 1e-5);
    }
    for (a, b) in block.delta.iter().zip(delta2.iter()) {
        assert!((a - b).abs() < 1e-5);
    }
}

#[test]
fn large_tau_matches_pooled() {
    let mut r = rng(2);
    let d = random_matched(&mut r, &[30, 20, 25, 15], 5, 0.6);
    let lambda = 0.1 * lmax(&d, Strategy::Pooled);
    let pooled = fit(&d, Strategy::Pooled, lambda);
    let big = fit(&d, Strategy::DataShared(vec![1e6; 4]), lambda);
    let gap = max_abs(pooled.delta.iter().zip(big.delta.iter()).map(|(a, b)| a - b));
    println!("tau = 1e6 vs Pooled: max |delta diff| = {gap:.3e}");
    assert!(gap < 1e-4);
}

#[test]
fn reference_stratum_carries_mu() {
    let mut r = rng(3);
    let d = random_matched(&mut r, &[30, 20, 25], 4, 0.8);
    for reference in 0..3 {
        let st = Strategy::Ref(reference);
        let f = fit(&d, st.clone(), 0.15 * lmax(&d, st));
        assert_eq!(f.delta.row(reference), f.mu.view());
        assert!(f.gamma.row(reference).iter().all(|&v| v == 0.0));
    }
}

#[test]
fn lambda_max_gives_exact_zeros() {
    let mut r = rng(4);
    let d = random_matched(&mut r, &[20, 15, 10], 3, 0.8);
    for st in [
        Strategy::Indep,
        Strategy::Pooled,
        Strategy::Ref(2),
        Strategy::data_shared_unit(3),
        Strategy::DataShared(vec![0.5, 1.0, 3.0]),
    ] {
        let lm = lmax(&d, st.clone());
        for factor in [1.0, 1.5] {
            let f = fit(&d, st.clone(), lm * factor);
            assert!(f.delta.iter().all(|&v| v == 0.0), "{}", st.name());
            assert!(f.mu.iter().all(|&v| v == 0.0));
        }
        let f = fit(&d, st.clone(), lm * 0.9);
        assert!(f.delta.iter().any(|&v| v != 0.0), "{} just below lambda_max", st.name());
    }

    let u = random_unmatched(&mut r, 80, 3, 3, true);
    for f in [
        Formulation::SparseRef { reference: 2 },
        Formulation::SparseRef { reference: 0 },
        Formulation::SparseSym,
        Formulation::DataSharedRef,
    ] {
        let prob = MultinomProblem::new(&u, f).unwrap();
        let lm = prob.lambda_max(&opts()).unwrap();
        let (rep, fit) = prob.solve(lm, None, &opts()).unwrap();
        assert!(rep.converged);
        assert!(fit.coefficients.iter().all(|&v| v == 0.0), "{}", f.name());
        assert!(fit.mu.iter().flatten().all(|&v| v == 0.0));
    }
}

fn single_stratum(s: &Stratum, p: usize) -> MatchedDataset {
    MatchedDataset::new(p, vec![s.clone()]).unwrap()
}

#[test]
fn indep_is_separate_fits() {
    let mut r = rng(5);
    let d = random_matched(&mut r, &[30, 20, 25], 4, 0.8);
    let lambda = 0.2 * lmax(&d, Strategy::Indep);
    let joint = fit(&d, Strategy::Indep, lambda);
    for (k, s) in d.strata().iter().enumerate() {
        let alone = fit(&single_stratum(s, 4), Strategy::Pooled, lambda);
        let gap = max_abs(joint.delta.row(k).iter().zip(alone.mu.iter()).map(|(a, b)| a - b));
        assert!(gap < 1e-6, "stratum {k}: {gap}");
    }
}

#[test]
fn pooled_is_one_stacked_fit() {
    let mut r = rng(6);
    let d = random_matched(&mut r, &[30, 20, 25], 4, 0.8);
    let lambda = 0.2 * lmax(&d, Strategy::Pooled);
    let pooled = fit(&d, Strategy::Pooled, lambda);
    for row in pooled.delta.rows() {
        assert_eq!(row, pooled.mu.view());
    }
    let cases = ndarray::concatenate(Axis(0), &d.strata().iter().map(|s| s.cases.view()).collect::<Vec<_>>()).unwrap();
    let controls = ndarray::concatenate(Axis(0), &d.strata().iter().map(|s| s.controls.view()).collect::<Vec<_>>()).unwrap();
    let merged = single_stratum(&Stratum { cases, controls }, 4);
    let one = fit(&merged, Strategy::Indep, lambda);
    let gap = max_abs(one.delta.row(0).iter().zip(pooled.mu.iter()).map(|(a, b)| a - b));
    assert!(gap < 1e-6, "{gap}");
}

#[test]
fn unit_tau_mu_is_median_of_deltas_and_zero() {
    for (seed, strata) in [(7u64, vec![40, 30, 30, 20, 25, 35]), (8, vec![40, 30, 30, 20, 25])] {
        let mut r = rng(seed);
        let d = random_matched(&mut r, &strata, 6, 0.7);
        let st = Strategy::data_shared_unit(strata.len());
        for frac in [0.05, 0.2] {
            let f = fit(&d, st.clone(), frac * lmax(&d, st.clone()));
            for j in 0..6 {
                let mut vals: Vec<f64> = f.delta.column(j).to_vec();
                vals.push(0.0);
                let gap = median_gap(&vals, f.mu[j]);
                assert!(gap <= 2.0 * TOL, "seed {seed} j {j}: gap {gap}");
            }
        }
    }
}

#[test]
fn symmetric_and_data_shared_reference_agree() {
    let mut r = rng(9);
    for with_intercept in [true, false] {
        let u = random_unmatched(&mut r, 200, 5, 4, with_intercept);
        let prob = MultinomProblem::new(&u, Formulation::SparseSym).unwrap();
        let lambda = 0.1 * prob.lambda_max(&opts()).unwrap();
        let sym = fit_multinom_sparse_sym(&u, lambda, None, &opts()).unwrap();
        let ds = fit_multinom_datashared_ref(&u, lambda, None, &opts()).unwrap();
        assert!((sym.objective - ds.objective).abs() < 1e-8, "{} vs {}", sym.objective, ds.objective);
        let ps = sym.predict_proba(u.x()).unwrap();
        let pd = ds.predict_proba(u.x()).unwrap();
        assert!(max_abs(ps.iter().zip(pd.iter()).map(|(a, b)| a - b)) < 1e-6);
        let mu = ds.mu.as_ref().unwrap();
        let beta_k = sym.coefficients.row(3);
        assert!(max_abs(mu.iter().zip(beta_k.iter()).map(|(m, b)| m + b)) < 1e-4);
        let gamma_gap = max_abs(
            ds.coefficients.iter().zip(sym.coefficients.slice(s![..3, ..]).iter()).map(|(g, b)| g - b),
        );
        assert!(gamma_gap < 1e-4);
        assert!(median_zero_violation(sym.coefficients.view()) <= 2.0 * TOL);
        if let Some(ic) = &sym.intercepts {
            assert_eq!(ic.iter().sum::<f64>(), 0.0);
        }
    }
}

#[test]
fn fused_reference_identity_holds() {
    let mut r = rng(10);
    let u = random_unmatched(&mut r, 150, 4, 4, true);
    let prob = MultinomProblem::new(&u, Formulation::SparseRef { reference: 3 }).unwrap();
    let lambda = 0.15 * prob.lambda_max(&opts()).unwrap();
    let f = fit_multinom_sparse_ref(&u, lambda, 3, None, &opts()).unwrap();
    let rep = verify_fused_ref_identity(&u, &f, 100, 1).unwrap();
    assert!(rep.max_objective_gap <= 1e-10, "{}", rep.max_objective_gap);
    assert!(rep.embedded_kkt_residual <= TOL, "{}", rep.embedded_kkt_residual);
    assert!(rep.min_shift_increase >= -1e-12);

    let other = fit_multinom_sparse_ref(&u, lambda, 0, None, &opts()).unwrap();
    assert!(verify_fused_ref_identity(&u, &other, 1, 1).is_err());
}

#[test]
fn complexity_toy_truth() {
    for (k, p) in [(3usize, 4usize), (7, 20)] {
        let mut beta = Array2::from_elem((k, p), 0.5);
        beta.row_mut(k - 1).assign(&Array1::from_elem(p, -1.0));
        let c = |r| complexity(beta.view(), r, ComplexityMode::DifferencesOnly).unwrap();
        assert_eq!(c(k - 1), (k - 1) * p);
        for r in 0..k - 1 {
            assert_eq!(c(r), p);
        }
    }
    let beta = array![[1.0, 0.0], [1.0, 2.0], [0.0, 0.0]];
    assert_eq!(complexity(beta.view(), 2, ComplexityMode::WithRefNorm).unwrap(), 3);
    assert_eq!(complexity(beta.view(), 0, ComplexityMode::WithRefNorm).unwrap(), 1 + 2);
}
