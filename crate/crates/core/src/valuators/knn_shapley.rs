use std::time::Instant;

use ndarray::ArrayView2;

use crate::dataset::{Dataset, Labels, SplitIndices};
use crate::error::{invalid, Error, Result};
use crate::utility::KnnTable;

use super::{ValueMeta, ValueVector};

/// Exact Shapley values of the nearest-neighbour utility, averaged over the
/// evaluation points.
///
/// For each evaluation point the training points are walked from farthest to
/// nearest; each value follows from its successor's by a closed-form step.
pub fn knn_shapley_values(
    train_x: ArrayView2<'_, f64>,
    train_y: &[usize],
    eval_x: ArrayView2<'_, f64>,
    eval_y: &[usize],
    k: usize,
) -> Result<Vec<f64>> {
    let m = train_x.nrows();
    if m == 0 {
        return Err(invalid("knn shapley needs a non-empty training split"));
    }
    if k == 0 {
        return Err(invalid("knn shapley needs k >= 1"));
    }
    if eval_x.nrows() == 0 {
        return Err(invalid("knn shapley needs at least one evaluation point"));
    }
    if train_y.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: train_y.len(),
        });
    }
    if eval_y.len() != eval_x.nrows() {
        return Err(Error::DimensionMismatch {
            expected: eval_x.nrows(),
            got: eval_y.len(),
        });
    }
    if train_x.ncols() != eval_x.ncols() {
        return Err(Error::DimensionMismatch {
            expected: train_x.ncols(),
            got: eval_x.ncols(),
        });
    }
    let table = KnnTable::new(train_x, eval_x);
    let kf = k as f64;
    let mut values = vec![0.0; m];
    let mut s = vec![0.0; m];
    for (v, &target) in eval_y.iter().enumerate() {
        let order = table.order(v);
        let hit = |p: usize| f64::from(u8::from(train_y[p] == target));
        let mf = m as f64;
        s[m - 1] = hit(order[m - 1]) / kf * (kf.min(mf) / mf);
        for r in (1..m).rev() {
            // rank r (1-based) sits at order[r - 1]
            let rf = r as f64;
            s[r - 1] = s[r] + (hit(order[r - 1]) - hit(order[r])) / kf * (kf.min(rf) / rf);
        }
        for (rank, &p) in order.iter().enumerate() {
            values[p] += s[rank];
        }
    }
    let n_eval = eval_y.len() as f64;
    values.iter_mut().for_each(|x| *x /= n_eval);
    Ok(values)
}

/// Closed-form KNN-Shapley on the train split against the validation split.
pub fn knn_shapley(ds: &Dataset, split: &SplitIndices, k: usize) -> Result<ValueVector> {
    let start = Instant::now();
    let (train_x, train_y) = ds.select(&split.train);
    let (eval_x, eval_y) = ds.select(&split.valid);
    let (Labels::Classes { y: train_y, .. }, Labels::Classes { y: eval_y, .. }) =
        (&train_y, &eval_y)
    else {
        return Err(Error::Unsupported(
            "knn shapley on a regression task".into(),
        ));
    };
    let values = knn_shapley_values(train_x.view(), train_y, eval_x.view(), eval_y, k)?;
    Ok(ValueVector::new("knn_shapley", values, ValueMeta::default()).timed(start))
}
