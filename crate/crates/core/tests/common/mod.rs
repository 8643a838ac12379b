#![allow(dead_code)]

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use subtype_lasso::cond_logit::{MatchedDataset, Stratum};
use subtype_lasso::multinom::UnmatchedDataset;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || scale * rng.sample::<f64, _>(StandardNormal))
}

pub fn normal_vector(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Array1<f64> {
    Array1::from_shape_simple_fn(len, || scale * rng.sample::<f64, _>(StandardNormal))
}

/// Matched data with case labels drawn from the pair model under `delta`
/// (`strata x p`).
pub fn matched_from(rng: &mut ChaCha8Rng, sizes: &[usize], delta: &Array2<f64>) -> MatchedDataset {
    let p = delta.ncols();
    let strata = sizes
        .iter()
        .enumerate()
        .map(|(k, &m)| {
            let a = normal_matrix(rng, m, p, 1.0);
            let b = normal_matrix(rng, m, p, 1.0);
            let mut cases = Array2::zeros((m, p));
            let mut controls = Array2::zeros((m, p));
            for l in 0..m {
                let t = delta.row(k).dot(&(&a.row(l) - &b.row(l)));
                let first = rng.random::<f64>() < 1.0 / (1.0 + t.exp());
                let (c, d) = if first { (a.row(l), b.row(l)) } else { (b.row(l), a.row(l)) };
                cases.row_mut(l).assign(&c);
                controls.row_mut(l).assign(&d);
            }
            Stratum { cases, controls }
        })
        .collect();
    MatchedDataset::new(p, strata).unwrap()
}

pub fn random_matched(rng: &mut ChaCha8Rng, sizes: &[usize], p: usize, scale: f64) -> MatchedDataset {
    let delta = normal_matrix(rng, sizes.len(), p, scale);
    matched_from(rng, sizes, &delta)
}

/// Unmatched data from the reference model with `deltas` (`(K-1) x p`)
/// and intercepts `b`; retries until every category appears.
pub fn unmatched_from(
    rng: &mut ChaCha8Rng,
    n: usize,
    deltas: &Array2<f64>,
    b: &Array1<f64>,
    with_intercept: bool,
) -> UnmatchedDataset {
    let (km1, p) = deltas.dim();
    loop {
        let x = normal_matrix(rng, n, p, 1.0);
        let y: Vec<usize> = (0..n)
            .map(|i| {
                let mut w: Vec<f64> = (0..km1).map(|k| (b[k] + deltas.row(k).dot(&x.row(i))).exp()).collect();
                w.push(1.0);
                let z: f64 = w.iter().sum();
                let u = rng.random::<f64>() * z;
                let mut acc = 0.0;
                for (c, v) in w.iter().enumerate() {
                    acc += v;
                    if u < acc {
                        return c;
                    }
                }
                km1
            })
            .collect();
        if let Ok(d) = UnmatchedDataset::new(x, y, km1 + 1, with_intercept) {
            return d;
        }
    }
}

pub fn random_unmatched(rng: &mut ChaCha8Rng, n: usize, p: usize, k: usize, with_intercept: bool) -> UnmatchedDataset {
    let deltas = normal_matrix(rng, k - 1, p, 0.7);
    let b = normal_vector(rng, k - 1, 0.3);
    unmatched_from(rng, n, &deltas, &b, with_intercept)
}

/// Central finite-difference gradient.
pub fn fd_gradient(f: impl Fn(ArrayView1<f64>) -> f64, x: ArrayView1<f64>, h: f64) -> Array1<f64> {
    let mut g = Array1::zeros(x.len());
    let mut xp = x.to_owned();
    for j in 0..x.len() {
        let orig = xp[j];
        xp[j] = orig + h;
        let fp = f(xp.view());
        xp[j] = orig - h;
        let fm = f(xp.view());
        xp[j] = orig;
        g[j] = (fp - fm) / (2.0 * h);
    }
    g
}

pub fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn rel_err(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let diff = max_abs(a.iter().zip(b.iter()).map(|(x, y)| x - y));
    diff / max_abs(b.iter().copied()).max(1.0)
}
