use std::time::Instant;

use crate::dataset::{Dataset, SplitIndices};
use crate::error::{invalid, Result};
use crate::ot::{class_wise_cost, feature_distances, ground_cost, sinkhorn_duals, OTProblem};

use super::{ValueMeta, ValueVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LavaCost {
    /// Squared feature distance plus the Gaussian 2-Wasserstein distance
    /// between the two points' class-conditional distributions.
    ClassWise,
    /// Feature distance plus a fixed penalty for a label mismatch; `None`
    /// uses the mean feature distance.
    Fixed { label_weight: Option<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LavaConfig {
    pub cost: LavaCost,
    /// Entropic regularisation as a fraction of the mean ground cost.
    pub epsilon_scale: f64,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for LavaConfig {
    fn default() -> Self {
        Self {
            cost: LavaCost::ClassWise,
            epsilon_scale: 0.01,
            tol: 1e-6,
            max_iters: 5000,
        }
    }
}

/// Calibrated transport gradients between the train and validation splits.
///
/// With training potentials `h`, point `i` scores
/// `-(h_i - mean_{j != i} h_j)`: points whose mass makes the transport more
/// expensive get low values. The values sum to zero.
pub fn lava(ds: &Dataset, split: &SplitIndices, cfg: &LavaConfig) -> Result<ValueVector> {
    let start = Instant::now();
    let m = split.train.len();
    if m < 2 {
        return Err(invalid("lava needs at least two training points"));
    }
    if split.valid.is_empty() {
        return Err(invalid("lava needs a validation split"));
    }
    if cfg.epsilon_scale.is_nan() || cfg.epsilon_scale <= 0.0 {
        return Err(invalid("lava epsilon_scale must be positive"));
    }
    let cost = match cfg.cost {
        LavaCost::ClassWise => class_wise_cost(ds, split)?,
        LavaCost::Fixed {
            label_weight: Some(w),
        } => ground_cost(ds, split, w)?,
        LavaCost::Fixed { label_weight: None } => {
            let w = feature_distances(ds, split)?.mean().unwrap_or(0.0);
            ground_cost(ds, split, w)?
        }
    };
    let mean_cost = cost.mean().unwrap_or(0.0);
    let epsilon = if mean_cost > 0.0 {
        cfg.epsilon_scale * mean_cost
    } else {
        cfg.epsilon_scale
    };
    let duals = sinkhorn_duals(&OTProblem::uniform(cost, epsilon, cfg.max_iters, cfg.tol))?;

    let total: f64 = duals.h.sum();
    let mf = m as f64;
    let values = duals
        .h
        .iter()
        .map(|&h| -(mf * h - total) / (mf - 1.0))
        .collect();
    let mut meta = ValueMeta {
        converged: Some(duals.converged),
        marginal_err: Some(duals.marginal_err),
        ..Default::default()
    };
    if !duals.converged {
        meta.warnings.push(format!(
            "sinkhorn stopped after {} iterations with marginal error {:e}",
            duals.iterations, duals.marginal_err
        ));
    }
    Ok(ValueVector::new("lava", values, meta).timed(start))
}
