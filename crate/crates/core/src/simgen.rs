//! Synthetic matched and unmatched case-control data with subtype-specific
//! coefficients of controllable heterogeneity.
//!
//! Configurations (for covariates in the active set `J1`; all others are 0):
//!
//! 1. every subtype shares `iota_j * delta`;
//! 2. one subtype per covariate is perturbed;
//! 3. three distinct subtypes per covariate are perturbed;
//! 4. every entry is perturbed.
//!
//! A perturbed entry is `iota_kj * delta * (1 + U)` with
//! `U ~ Uniform[sqrt(K)/2, 2 sqrt(K)]` and its own Rademacher sign.

use ndarray::{Array1, Array2};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::cond_logit::{MatchedDataset, Stratum};
use crate::error::{Error, Result};
use crate::multinom::UnmatchedDataset;

pub const DEFAULT_STRATA_SIZES: [usize; 6] = [200, 100, 50, 50, 50, 50];
pub const CALIBRATION_DRAWS: usize = 100_000;
pub const CALIBRATION_MAX_ITER: usize = 100;
pub const CALIBRATION_TOL: f64 = 0.005;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Setting {
    Matched,
    Unmatched,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub setting: Setting,
    /// Observations; twice the number of pairs in the matched setting.
    pub n: usize,
    pub p: usize,
    /// Categories including controls.
    pub k: usize,
    pub strata_sizes: Vec<usize>,
    /// Heterogeneity configuration, 1..=4.
    pub config: u8,
    pub delta: f64,
    pub j1_size: usize,
    pub seed: u64,
    /// Configuration 2 only: draw an independent sign for every unperturbed
    /// entry instead of sharing `iota_j` across subtypes.
    pub independent_base_signs: bool,
}

impl SimConfig {
    pub fn matched(config: u8, delta: f64, seed: u64) -> Self {
        let strata_sizes = DEFAULT_STRATA_SIZES.to_vec();
        let p = 100;
        Self {
            setting: Setting::Matched,
            n: 2 * strata_sizes.iter().sum::<usize>(),
            p,
            k: strata_sizes.len() + 1,
            strata_sizes,
            config,
            delta,
            j1_size: default_j1_size(p),
            seed,
            independent_base_signs: false,
        }
    }

    pub fn unmatched(config: u8, delta: f64, seed: u64) -> Self {
        let p = 20;
        Self {
            setting: Setting::Unmatched,
            n: 1000,
            p,
            k: 7,
            strata_sizes: Vec::new(),
            config,
            delta,
            j1_size: default_j1_size(p),
            seed,
            independent_base_signs: false,
        }
    }

    /// Changes `p` and resets `j1_size` to its default for the new `p`.
    pub fn with_p(mut self, p: usize) -> Self {
        self.p = p;
        self.j1_size = default_j1_size(p);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.k < 2 {
            return bad("K must be at least 2".into());
        }
        if self.p == 0 {
            return bad("p must be positive".into());
        }
        if self.j1_size > self.p {
            return bad(format!("|J1| = {} exceeds p = {}", self.j1_size, self.p));
        }
        if !(1..=4).contains(&self.config) {
            return bad(format!("configuration {} is not in 1..=4", self.config));
        }
        if !(self.delta >= 0.0) || !self.delta.is_finite() {
            return bad("delta must be finite and non-negative".into());
        }
        match self.setting {
            Setting::Matched => {
                if self.strata_sizes.len() != self.k - 1 {
                    return bad(format!(
                        "{} strata sizes given for K - 1 = {} subtypes",
                        self.strata_sizes.len(),
                        self.k - 1
                    ));
                }
                if self.strata_sizes.contains(&0) {
                    return bad("every stratum needs at least one pair".into());
                }
                if 2 * self.strata_sizes.iter().sum::<usize>() != self.n {
                    return bad(format!(
                        "strata sizes sum to {} pairs but n = {}",
                        self.strata_sizes.iter().sum::<usize>(),
                        self.n
                    ));
                }
            }
            Setting::Unmatched => {
                if self.n < self.k {
                    return bad("n must be at least K".into());
                }
            }
        }
        Ok(())
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

pub fn default_j1_size(p: usize) -> usize {
    10.min(p / 2)
}

/// Seed of the `index`-th child task of `seed` (SplitMix64 finalizer).
pub fn child_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    /// `(K-1) x p`.
    pub delta_star: Array2<f64>,
    /// Active covariates, 0-based and sorted.
    pub j1: Vec<usize>,
    /// Unmatched setting: intercept of each subtype against the controls.
    pub intercepts: Option<Array1<f64>>,
    /// Covariate `j` is heterogeneous iff its `K-1` coefficients are not all
    /// equal.
    pub heterogeneous: Vec<bool>,
}

/// `Sigma_ij = 0.25^2 * 0.3^|i-j|`.
pub fn gen_covariance(p: usize) -> Array2<f64> {
    Array2::from_shape_fn((p, p), |(i, j)| 0.0625 * 0.3f64.powi(i.abs_diff(j) as i32))
}

/// Lower-triangular `L` with `L L' = a`.
pub fn cholesky(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Dimension("cholesky needs a square matrix".into()));
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if !(s > 0.0) {
                    return Err(Error::InvalidArgument(
                        "matrix is not positive definite".into(),
                    ));
                }
                l[[i, i]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    Ok(l)
}

/// Draws `rows` covariate vectors from `N(0, L L')`.
pub fn sample_gaussian(chol: &Array2<f64>, rows: usize, rng: &mut impl Rng) -> Array2<f64> {
    let p = chol.nrows();
    let z = Array2::from_shape_simple_fn((rows, p), || rng.sample::<f64, _>(StandardNormal));
    z.dot(&chol.t())
}

fn rademacher(rng: &mut impl Rng) -> f64 {
    if rng.random_bool(0.5) {
        1.0
    } else {
        -1.0
    }
}

fn perturbation(rng: &mut impl Rng, k: usize) -> f64 {
    let s = (k as f64).sqrt();
    1.0 + rng.random_range(s / 2.0..=2.0 * s)
}

/// Coefficients of the `K-1` subtypes, intercepts excluded.
fn gen_coefficients(cfg: &SimConfig, rng: &mut impl Rng) -> (Array2<f64>, Vec<usize>) {
    let km1 = cfg.k - 1;
    let mut j1 = sample(rng, cfg.p, cfg.j1_size).into_vec();
    j1.sort_unstable();
    let mut d = Array2::<f64>::zeros((km1, cfg.p));
    for &j in &j1 {
        let iota = rademacher(rng);
        match cfg.config {
            1 => d.column_mut(j).fill(iota * cfg.delta),
            2 => {
                let kj = rng.random_range(0..km1);
                for k in 0..km1 {
                    let sign = if cfg.independent_base_signs {
                        rademacher(rng)
                    } else {
                        iota
                    };
                    d[[k, j]] = sign * cfg.delta;
                }
                d[[kj, j]] = rademacher(rng) * cfg.delta * perturbation(rng, cfg.k);
            }
            3 => {
                d.column_mut(j).fill(iota * cfg.delta);
                for k in sample(rng, km1, km1.min(3)).into_vec() {
                    d[[k, j]] = rademacher(rng) * cfg.delta * perturbation(rng, cfg.k);
                }
            }
            _ => {
                for k in 0..km1 {
                    d[[k, j]] = rademacher(rng) * cfg.delta * perturbation(rng, cfg.k);
                }
            }
        }
    }
    (d, j1)
}

fn heterogeneity_flags(d: &Array2<f64>) -> Vec<bool> {
    d.columns()
        .into_iter()
        .map(|c| c.iter().any(|&v| v != c[0]))
        .collect()
}

/// Target marginal probabilities of the `K` categories: controls get 0.5,
/// the subtypes share the other half, spread linearly and kept inside
/// `[0.05, 0.2]`. When that range cannot hold `0.5 / (K-1)`, the split is
/// equal.
pub fn category_targets(k: usize) -> Vec<f64> {
    let m = k - 1;
    let mean = 0.5 / m as f64;
    let half = (mean - 0.05).min(0.2 - mean);
    let mut t: Vec<f64> = if m == 1 || half < 0.0 {
        vec![mean; m]
    } else {
        (0..m)
            .map(|i| mean + half * (2.0 * i as f64 / (m - 1) as f64 - 1.0))
            .collect()
    };
    t.push(0.5);
    t
}

/// Per-row category probabilities under intercepts `b` and linear
/// predictors `eta` (`n x (K-1)`), controls last.
fn ref_probabilities(eta: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    let (n, km1) = eta.dim();
    let mut out = Array2::<f64>::zeros((n, km1 + 1));
    for i in 0..n {
        let m = (0..km1).map(|k| eta[[i, k]] + b[k]).fold(0.0, f64::max);
        let mut z = (-m).exp();
        out[[i, km1]] = z;
        for k in 0..km1 {
            let e = (eta[[i, k]] + b[k] - m).exp();
            out[[i, k]] = e;
            z += e;
        }
        out.row_mut(i).mapv_inplace(|v| v / z);
    }
    out
}

/// Intercepts `b` (controls fixed at 0) whose Monte Carlo marginal category
/// probabilities over the covariate draws `x` match `targets`.
pub fn calibrate_intercepts(
    delta_star: &Array2<f64>,
    x: &Array2<f64>,
    targets: &[f64],
) -> Result<Array1<f64>> {
    let km1 = delta_star.nrows();
    if targets.len() != km1 + 1 {
        return Err(Error::Dimension("one target per category expected".into()));
    }
    let eta = x.dot(&delta_star.t());
    let mut b = Array1::<f64>::zeros(km1);
    let mut err = f64::INFINITY;
    for _ in 0..CALIBRATION_MAX_ITER {
        let marg = ref_probabilities(&eta, &b).mean_axis(ndarray::Axis(0)).unwrap();
        err = marg
            .iter()
            .zip(targets)
            .map(|(a, t)| (a - t).abs())
            .fold(0.0, f64::max);
        if err < 1e-10 {
            break;
        }
        let anchor = (targets[km1] / marg[km1]).ln();
        for k in 0..km1 {
            b[k] += (targets[k] / marg[k]).ln() - anchor;
        }
    }
    if !(err <= CALIBRATION_TOL) {
        return Err(Error::Calibration(format!(
            "marginal probabilities off by {err:.3e} after {CALIBRATION_MAX_ITER} iterations"
        )));
    }
    Ok(b)
}

/// Coefficients (and, unmatched, calibrated intercepts) for `cfg`.
pub fn gen_truth(cfg: &SimConfig, rng: &mut impl Rng) -> Result<GroundTruth> {
    cfg.validate()?;
    let (delta_star, j1) = gen_coefficients(cfg, rng);
    let intercepts = match cfg.setting {
        Setting::Matched => None,
        Setting::Unmatched => {
            let mut mc = ChaCha8Rng::seed_from_u64(rng.random());
            let chol = cholesky(&gen_covariance(cfg.p))?;
            let x = sample_gaussian(&chol, CALIBRATION_DRAWS, &mut mc);
            Some(calibrate_intercepts(&delta_star, &x, &category_targets(cfg.k))?)
        }
    };
    Ok(GroundTruth {
        heterogeneous: heterogeneity_flags(&delta_star),
        delta_star,
        j1,
        intercepts,
    })
}

/// Matched pairs drawn under a given truth; cases are stored first.
pub fn sample_matched(
    cfg: &SimConfig,
    truth: &GroundTruth,
    rng: &mut impl Rng,
) -> Result<MatchedDataset> {
    cfg.validate()?;
    let chol = cholesky(&gen_covariance(cfg.p))?;
    let strata = cfg
        .strata_sizes
        .iter()
        .enumerate()
        .map(|(k, &m)| {
            let a = sample_gaussian(&chol, m, rng);
            let b = sample_gaussian(&chol, m, rng);
            let dk = truth.delta_star.row(k);
            let mut cases = Array2::zeros((m, cfg.p));
            let mut controls = Array2::zeros((m, cfg.p));
            for l in 0..m {
                let t = dk.dot(&(&a.row(l) - &b.row(l)));
                let p_first = 1.0 / (1.0 + t.exp());
                let (case, control) = if rng.random::<f64>() < p_first {
                    (a.row(l), b.row(l))
                } else {
                    (b.row(l), a.row(l))
                };
                cases.row_mut(l).assign(&case);
                controls.row_mut(l).assign(&control);
            }
            Stratum { cases, controls }
        })
        .collect();
    MatchedDataset::new(cfg.p, strata)
}

/// Unmatched observations (with intercepts) drawn under a given truth.
pub fn sample_unmatched(
    cfg: &SimConfig,
    truth: &GroundTruth,
    rng: &mut impl Rng,
) -> Result<UnmatchedDataset> {
    cfg.validate()?;
    let b = truth
        .intercepts
        .clone()
        .ok_or_else(|| Error::InvalidArgument("unmatched truth needs intercepts".into()))?;
    let chol = cholesky(&gen_covariance(cfg.p))?;
    let x = sample_gaussian(&chol, cfg.n, rng);
    let probs = ref_probabilities(&x.dot(&truth.delta_star.t()), &b);
    let y = probs
        .rows()
        .into_iter()
        .map(|row| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (c, &p) in row.iter().enumerate() {
                acc += p;
                if u < acc {
                    return c;
                }
            }
            row.len() - 1
        })
        .collect();
    UnmatchedDataset::new_unchecked_coverage(x, y, cfg.k, true)
}

pub fn gen_matched(cfg: &SimConfig, rng: &mut impl Rng) -> Result<(MatchedDataset, GroundTruth)> {
    let truth = gen_truth(cfg, rng)?;
    let data = sample_matched(cfg, &truth, rng)?;
    Ok((data, truth))
}

pub fn gen_unmatched(
    cfg: &SimConfig,
    rng: &mut impl Rng,
) -> Result<(UnmatchedDataset, GroundTruth)> {
    let truth = gen_truth(cfg, rng)?;
    let data = sample_unmatched(cfg, &truth, rng)?;
    Ok((data, truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covariance_examples() {
        let s = gen_covariance(5);
        assert_eq!(s[[0, 0]], 0.0625);
        assert!((s[[0, 1]] - 0.01875).abs() < 1e-17);
        assert_eq!(s, s.t());
        let l = cholesky(&s).unwrap();
        let back = l.dot(&l.t());
        for (a, b) in back.iter().zip(s.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn targets() {
        let t = category_targets(7);
        assert_eq!(t.len(), 7);
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((t[0] - 0.05).abs() < 1e-12);
        assert!(t[..6].iter().all(|&v| (0.05 - 1e-12..=0.2 + 1e-12).contains(&v)));
        assert_eq!(category_targets(3), vec![0.25, 0.25, 0.5]);
    }

    #[test]
    fn config_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for config in 1..=4 {
            let cfg = SimConfig::matched(config, 2.0, 3);
            let (d, j1) = gen_coefficients(&cfg, &mut rng);
            assert_eq!(j1.len(), 10);
            for j in 0..cfg.p {
                let col = d.column(j);
                if !j1.contains(&j) {
                    assert!(col.iter().all(|&v| v == 0.0));
                    continue;
                }
                let base = col.iter().filter(|v| v.abs() == 2.0).count();
                let perturbed = 6 - base;
                match config {
                    1 => assert!(col.iter().all(|&v| v == col[0])),
                    2 => assert_eq!(perturbed, 1),
                    3 => assert_eq!(perturbed, 3),
                    _ => assert_eq!(perturbed, 6),
                }
                if config != 4 {
                    let signs: Vec<f64> = col
                        .iter()
                        .filter(|v| v.abs() == 2.0)
                        .map(|v| v.signum())
                        .collect();
                    assert!(signs.iter().all(|&s| s == signs[0]));
                }
                let lo = 2.0 * (1.0 + 7f64.sqrt() / 2.0);
                let hi = 2.0 * (1.0 + 2.0 * 7f64.sqrt());
                for v in col.iter().filter(|v| v.abs() != 2.0) {
                    assert!(v.abs() >= lo && v.abs() <= hi);
                }
            }
        }
    }

    #[test]
    fn child_seeds_differ() {
        assert_ne!(child_seed(1, 0), child_seed(1, 1));
        assert_ne!(child_seed(1, 0), child_seed(2, 0));
        assert_eq!(child_seed(5, 3), child_seed(5, 3));
    }

    #[test]
    fn config_validation() {
        let mut c = SimConfig::matched(5, 1.0, 0);
        assert!(c.validate().is_err());
        c.config = 1;
        assert!(c.validate().is_ok());
        c.n = 10;
        assert!(c.validate().is_err());
        let mut u = SimConfig::unmatched(1, 1.0, 0);
        u.j1_size = 21;
        assert!(u.validate().is_err());
    }
}
