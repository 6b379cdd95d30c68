//! One entry point per valuation algorithm.
//!
//! Values are aligned with `split.train`: `values[p]` belongs to dataset row
//! `split.train[p]`.

mod ame;
mod knn_shapley;
pub mod lasso;
mod lava;
mod oob;
mod sampling;

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use crate::dataset::{Dataset, SplitIndices};
use crate::error::{invalid, Error, Result};
use crate::marginal::{run_tmc, ConvergenceConfig, MarginalAccumulator};
use crate::rng;
use crate::utility::{volume_game, Utility};

pub use ame::{ame, AmeConfig};
pub use knn_shapley::{knn_shapley, knn_shapley_values};
pub use lava::{lava, LavaConfig, LavaCost};
pub use oob::{data_oob, oob_scores};
pub use sampling::{data_banzhaf, influence_subset, influence_subset_exhaustive};

/// Bookkeeping attached to a value vector.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValueMeta {
    pub utility_calls: u64,
    pub permutations: u64,
    pub models: u64,
    pub wall_time_s: f64,
    pub converged: Option<bool>,
    pub marginal_err: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueVector {
    pub values: Vec<f64>,
    pub algorithm: String,
    pub meta: ValueMeta,
}

impl ValueVector {
    pub(crate) fn new(algorithm: &str, values: Vec<f64>, meta: ValueMeta) -> Self {
        debug_assert!(
            values.iter().all(|v| v.is_finite()),
            "{algorithm} produced non-finite values"
        );
        Self {
            values,
            algorithm: algorithm.to_string(),
            meta,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub(crate) fn timed(mut self, start: Instant) -> Self {
        self.meta.wall_time_s = start.elapsed().as_secs_f64();
        self
    }
}

/// Weights over cardinalities `j = 1..=m` for a semivalue.
#[derive(Debug, Clone, PartialEq)]
pub struct SemivalueWeights {
    pub w: Vec<f64>,
}

impl SemivalueWeights {
    pub fn shapley(m: usize) -> Self {
        Self {
            w: vec![1.0 / m as f64; m],
        }
    }

    /// Beta(alpha, beta) weights, `C(m-1, j-1) B(j+beta-1, m-j+alpha) / B(alpha, beta)`.
    ///
    /// Built from the ratio of consecutive terms in log space and normalised
    /// by their sum, which is exactly one for the unrounded weights.
    pub fn beta(m: usize, alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
            return Err(invalid(format!(
                "beta weights need alpha, beta > 0, got ({alpha}, {beta})"
            )));
        }
        if m == 0 {
            return Err(invalid("beta weights need m >= 1"));
        }
        let mut log_w = Vec::with_capacity(m);
        log_w.push(0.0);
        for j in 1..m {
            let jf = j as f64;
            let mj = (m - j) as f64;
            let up = mj.ln() + (jf + beta - 1.0).ln();
            let down = jf.ln() + (mj - 1.0 + alpha).ln();
            log_w.push(log_w[j - 1] + (up - down));
        }
        let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let raw: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = raw.iter().sum();
        Ok(Self {
            w: raw.into_iter().map(|r| r / total).collect(),
        })
    }
}

/// Leave-one-out: `U(D) - U(D \ {i})`.
pub fn loo<U: Utility + ?Sized>(u: &U) -> Result<ValueVector> {
    let start = Instant::now();
    let m = u.n_players();
    if m == 0 {
        return Err(invalid("leave-one-out needs a non-empty training split"));
    }
    let all: Vec<usize> = (0..m).collect();
    let full = u.eval(&all);
    let values = (0..m)
        .into_par_iter()
        .map(|i| {
            let rest: Vec<usize> = (0..m).filter(|&p| p != i).collect();
            full - u.eval(&rest)
        })
        .collect();
    let meta = ValueMeta {
        utility_calls: m as u64 + 1,
        models: m as u64 + 1,
        ..Default::default()
    };
    Ok(ValueVector::new("loo", values, meta).timed(start))
}

/// Semivalue with the given cardinality weights, estimated from `acc`.
///
/// Point `i` gets `(m / N_i) * sum_j w_j S_ij` where `S_ij` sums its samples
/// at cardinality `j` and `N_i` counts all its samples. With the same number
/// of samples in every cell this is `sum_j w_j * mean_ij`.
pub fn semivalue(
    acc: &MarginalAccumulator,
    weights: &SemivalueWeights,
    name: &str,
) -> Result<ValueVector> {
    let m = acc.n_points();
    if weights.w.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: weights.w.len(),
        });
    }
    let mut values = Vec::with_capacity(m);
    for i in 0..m {
        let n = acc.samples_for(i);
        if n == 0 {
            return Err(invalid(format!("point {i} has no marginal samples")));
        }
        let s: f64 = (1..=m).map(|j| weights.w[j - 1] * acc.sum(i, j)).sum();
        values.push(s * m as f64 / n as f64);
    }
    let meta = ValueMeta {
        utility_calls: acc.utility_calls,
        permutations: acc.permutations_used,
        models: acc.utility_calls,
        converged: Some(acc.converged),
        ..Default::default()
    };
    Ok(ValueVector::new(name, values, meta))
}

/// Mean marginal contribution of each point.
pub fn data_shapley(acc: &MarginalAccumulator) -> Result<ValueVector> {
    let mut v = semivalue(
        acc,
        &SemivalueWeights::shapley(acc.n_points()),
        "data_shapley",
    )?;
    // plain mean, avoiding the weight round trip
    for (i, x) in v.values.iter_mut().enumerate() {
        let n = acc.samples_for(i) as f64;
        *x = (1..=acc.n_points()).map(|j| acc.sum(i, j)).sum::<f64>() / n;
    }
    Ok(v)
}

pub fn beta_shapley(acc: &MarginalAccumulator, alpha: f64, beta: f64) -> Result<ValueVector> {
    let w = SemivalueWeights::beta(acc.n_points(), alpha, beta)?;
    semivalue(acc, &w, "beta_shapley")
}

/// Truncated Monte Carlo Shapley values of the volume game.
pub fn volume_shapley(
    ds: &Dataset,
    split: &SplitIndices,
    cfg: &ConvergenceConfig,
    seed: u64,
) -> Result<ValueVector> {
    let start = Instant::now();
    let game = volume_game(ds, split)?;
    let acc = run_tmc(&game, cfg, seed)?;
    let mut v = data_shapley(&acc)?;
    v.algorithm = "volume_shapley".into();
    Ok(v.timed(start))
}

/// I.i.d. uniform `[0, 1)` values.
pub fn random_baseline(m: usize, seed: u64) -> Result<ValueVector> {
    let start = Instant::now();
    if m == 0 {
        return Err(invalid("random baseline needs m >= 1"));
    }
    let mut r = rng::stream(seed, "random", 0);
    let values = (0..m).map(|_| r.random::<f64>()).collect();
    Ok(ValueVector::new("random", values, ValueMeta::default()).timed(start))
}
