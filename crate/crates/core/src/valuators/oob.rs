use std::time::Instant;

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;

use crate::dataset::{Dataset, Labels, SplitIndices};
use crate::error::{invalid, Error, Result};
use crate::learners::{bootstrap_counts, fit, BaggingModel, BaggingParams, LearnerSpec};

use super::{ValueMeta, ValueVector};

/// Out-of-bag scores from the trees of a fitted bagging model.
///
/// `psi_i` averages, over the trees that did not draw point `i`, the label
/// match indicator (classes) or the negative squared error (reals). Points
/// never out of bag get the mean of the defined scores.
pub fn oob_scores(
    model: &BaggingModel,
    x: ArrayView2<'_, f64>,
    y: &Labels,
) -> Result<(Vec<f64>, Vec<String>)> {
    let counts: &Array2<u32> = model.oob_counts();
    let m = x.nrows();
    if counts.ncols() != m || y.len() != m {
        return Err(Error::DimensionMismatch {
            expected: counts.ncols(),
            got: m,
        });
    }
    let preds = model.trees().iter().zip(counts.rows()).map(|(tree, row)| {
        (0..m)
            .map(|i| (row[i] == 0).then(|| tree.predict_row(x.row(i))))
            .collect::<Vec<_>>()
    });
    Ok(average_oob(preds, y))
}

/// Averages per-model out-of-bag predictions; `None` marks an in-bag point.
fn average_oob(
    preds: impl Iterator<Item = Vec<Option<f64>>>,
    y: &Labels,
) -> (Vec<f64>, Vec<String>) {
    let m = y.len();
    let mut sums = vec![0.0; m];
    let mut seen = vec![0u32; m];
    for row in preds {
        for (i, pred) in row.into_iter().enumerate() {
            let Some(pred) = pred else { continue };
            sums[i] += match y {
                Labels::Classes { y, .. } => f64::from(u8::from(pred as usize == y[i])),
                Labels::Real(y) => -(pred - y[i]) * (pred - y[i]),
            };
            seen[i] += 1;
        }
    }
    let defined: Vec<f64> = (0..m)
        .filter(|&i| seen[i] > 0)
        .map(|i| sums[i] / f64::from(seen[i]))
        .collect();
    let fallback = if defined.is_empty() {
        0.0
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    };
    let mut warnings = Vec::new();
    let values = (0..m)
        .map(|i| {
            if seen[i] == 0 {
                warnings.push(format!(
                    "point {i} was never out of bag; using the mean score"
                ));
                fallback
            } else {
                sums[i] / f64::from(seen[i])
            }
        })
        .collect();
    (values, warnings)
}

/// Data-OOB: bag `n_estimators` copies of `base` and score each point by its
/// out-of-bag accuracy (or negative squared error).
///
/// Trees are fit with bootstrap multiplicities as weights; other learners are
/// fit on the resampled rows.
pub fn data_oob(
    ds: &Dataset,
    split: &SplitIndices,
    n_estimators: usize,
    base: &LearnerSpec,
    seed: u64,
) -> Result<ValueVector> {
    let start = Instant::now();
    if n_estimators == 0 {
        return Err(invalid("data_oob needs at least one estimator"));
    }
    if split.train.is_empty() {
        return Err(invalid("data_oob needs a non-empty training split"));
    }
    base.validate()?;
    for &r in &split.train {
        if r >= ds.n() {
            return Err(Error::IndexOutOfRange {
                index: r,
                len: ds.n(),
            });
        }
    }
    let (x, y) = ds.select(&split.train);
    let (values, warnings) = match base {
        LearnerSpec::Tree(tree) => {
            let params = BaggingParams {
                n_estimators,
                tree: *tree,
                seed,
            };
            let model = BaggingModel::fit_params(&params, x.view(), &y)?;
            oob_scores(&model, x.view(), &y)?
        }
        _ => {
            let m = x.nrows();
            let preds = (0..n_estimators)
                .into_par_iter()
                .map(|b| {
                    let counts = bootstrap_counts(m, seed, b);
                    let rows: Vec<usize> = (0..m)
                        .flat_map(|i| std::iter::repeat_n(i, counts[i] as usize))
                        .collect();
                    let model = fit(base, x.select(Axis(0), &rows).view(), &y.select(&rows))?;
                    let out: Vec<usize> = (0..m).filter(|&i| counts[i] == 0).collect();
                    let predicted = model.predict(x.select(Axis(0), &out).view())?;
                    let mut row = vec![None; m];
                    for (k, &i) in out.iter().enumerate() {
                        row[i] = Some(predicted.value(k));
                    }
                    Ok(row)
                })
                .collect::<Result<Vec<_>>>()?;
            average_oob(preds.into_iter(), &y)
        }
    };
    let meta = ValueMeta {
        models: n_estimators as u64,
        warnings,
        ..Default::default()
    };
    Ok(ValueVector::new("data_oob", values, meta).timed(start))
}
