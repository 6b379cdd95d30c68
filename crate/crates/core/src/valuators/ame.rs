//! Average marginal effect by sparse regression of utilities on inclusion
//! patterns.

use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::rng;
use crate::utility::Utility;

use super::lasso;
use super::{ValueMeta, ValueVector};

#[derive(Debug, Clone, PartialEq)]
pub struct AmeConfig {
    pub n_subsets: usize,
    pub rates: Vec<f64>,
    pub n_lambdas: usize,
    pub lambda_ratio: f64,
    pub folds: usize,
}

impl Default for AmeConfig {
    fn default() -> Self {
        Self {
            n_subsets: 1000,
            rates: vec![0.2, 0.4, 0.6, 0.8],
            n_lambdas: 50,
            lambda_ratio: 1e-4,
            folds: 5,
        }
    }
}

/// Each subset draws an inclusion rate `p` from `rates` and includes every
/// point independently with probability `p`. Point `i` is encoded as `1/p`
/// when included and `-1/(1-p)` otherwise. Utilities and encodings are
/// centred within each rate, regressed by cross-validated LASSO, and the
/// coefficients rescaled by the mean of `1 / (p (1 - p))` so that an additive
/// game `U(S) = sum c_i` recovers `c`.
pub fn ame<U: Utility + ?Sized>(u: &U, cfg: &AmeConfig, seed: u64) -> Result<ValueVector> {
    let start = Instant::now();
    if cfg.rates.is_empty() || cfg.rates.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
        return Err(invalid("AME rates must lie strictly between 0 and 1"));
    }
    if cfg.n_subsets < 10 * cfg.rates.len() {
        return Err(invalid(format!(
            "AME needs n_subsets >= {} for {} rates, got {}",
            10 * cfg.rates.len(),
            cfg.rates.len(),
            cfg.n_subsets
        )));
    }
    if cfg.folds < 2 || cfg.n_lambdas == 0 {
        return Err(invalid("AME needs at least two folds and one penalty"));
    }
    let m = u.n_players();
    if m == 0 {
        return Err(invalid("AME needs a non-empty training split"));
    }

    let mut r = rng::stream(seed, "ame", 0);
    let mut strata = Vec::with_capacity(cfg.n_subsets);
    let mut subsets = Vec::with_capacity(cfg.n_subsets);
    for _ in 0..cfg.n_subsets {
        let k = r.random_range(0..cfg.rates.len());
        let p = cfg.rates[k];
        strata.push(k);
        subsets.push((0..m).filter(|_| r.random_bool(p)).collect::<Vec<usize>>());
    }
    let mut y = Array1::from(subsets.par_iter().map(|s| u.eval(s)).collect::<Vec<f64>>());
    let mut x = Array2::<f64>::zeros((cfg.n_subsets, m));
    for (row, (s, &k)) in subsets.iter().zip(&strata).enumerate() {
        let p = cfg.rates[k];
        x.row_mut(row).fill(-1.0 / (1.0 - p));
        for &i in s {
            x[[row, i]] = 1.0 / p;
        }
    }

    let y_scale = y.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    for k in 0..cfg.rates.len() {
        let rows: Vec<usize> = (0..cfg.n_subsets).filter(|&i| strata[i] == k).collect();
        if rows.is_empty() {
            continue;
        }
        let cnt = rows.len() as f64;
        let ybar = rows.iter().map(|&i| y[i]).sum::<f64>() / cnt;
        rows.iter().for_each(|&i| y[i] -= ybar);
        for j in 0..m {
            let xbar = rows.iter().map(|&i| x[[i, j]]).sum::<f64>() / cnt;
            rows.iter().for_each(|&i| x[[i, j]] -= xbar);
        }
    }
    // a utility that is constant within every rate carries no signal
    if y.iter().all(|v| v.abs() <= 1e-12 * y_scale) {
        y.fill(0.0);
    }
    if x.iter().all(|&v| v.abs() < 1e-12) {
        return Err(Error::Degenerate(
            "every sampled subset has the same inclusion pattern".into(),
        ));
    }

    let fit = lasso::cross_validated(
        x.view(),
        y.view(),
        cfg.n_lambdas,
        cfg.lambda_ratio,
        cfg.folds,
    );
    let scale = strata
        .iter()
        .map(|&k| 1.0 / (cfg.rates[k] * (1.0 - cfg.rates[k])))
        .sum::<f64>()
        / cfg.n_subsets as f64;
    let values = fit.coef.iter().map(|b| b * scale).collect();
    let n = cfg.n_subsets as u64;
    let meta = ValueMeta {
        utility_calls: n,
        models: n,
        ..Default::default()
    };
    Ok(ValueVector::new("ame", values, meta).timed(start))
}
