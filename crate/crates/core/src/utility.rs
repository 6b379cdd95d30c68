//! Set functions over subsets of the training split.
//!
//! Subsets are given as positions into `split.train`, so player `p` is the
//! dataset row `split.train[p]`.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView2};

use crate::dataset::{Dataset, Labels, SplitIndices};
use crate::error::{invalid, Error, Result};
use crate::learners::{fit, squared_distance, LearnerSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    Accuracy,
    NegMse,
    KnnAccuracy,
    Volume,
}

impl Metric {
    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::NegMse => "neg_mse",
            Metric::KnnAccuracy => "knn_accuracy",
            Metric::Volume => "volume",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accuracy" => Ok(Metric::Accuracy),
            "neg_mse" => Ok(Metric::NegMse),
            "knn_accuracy" => Ok(Metric::KnnAccuracy),
            "volume" => Ok(Metric::Volume),
            other => Err(invalid(format!("unknown metric {other:?}"))),
        }
    }
}

/// A metric plus the held-out data it is measured on.
#[derive(Debug, Clone)]
pub struct UtilitySpec {
    pub metric: Metric,
    pub learner: LearnerSpec,
    pub k: usize,
    eval_features: Array2<f64>,
    eval_labels: Labels,
}

impl UtilitySpec {
    pub fn new(
        metric: Metric,
        learner: LearnerSpec,
        k: usize,
        eval_features: Array2<f64>,
        eval_labels: Labels,
    ) -> Result<Self> {
        if k == 0 {
            return Err(invalid("utility k must be >= 1"));
        }
        if eval_features.nrows() != eval_labels.len() {
            return Err(Error::DimensionMismatch {
                expected: eval_features.nrows(),
                got: eval_labels.len(),
            });
        }
        if metric != Metric::Volume && eval_labels.is_empty() {
            return Err(invalid("utility needs at least one evaluation point"));
        }
        if metric == Metric::Accuracy && eval_labels.n_classes().is_none() {
            return Err(Error::Unsupported("accuracy on a regression task".into()));
        }
        learner.validate()?;
        Ok(Self {
            metric,
            learner,
            k,
            eval_features,
            eval_labels,
        })
    }

    /// Utility measured on the given dataset rows.
    pub fn on_rows(
        metric: Metric,
        learner: LearnerSpec,
        k: usize,
        ds: &Dataset,
        rows: &[usize],
    ) -> Result<Self> {
        check_rows(rows, ds.n())?;
        let (x, y) = ds.select(rows);
        Self::new(metric, learner, k, x, y)
    }

    pub fn validation(
        metric: Metric,
        learner: LearnerSpec,
        k: usize,
        ds: &Dataset,
        split: &SplitIndices,
    ) -> Result<Self> {
        Self::on_rows(metric, learner, k, ds, &split.valid)
    }

    pub fn test(
        metric: Metric,
        learner: LearnerSpec,
        k: usize,
        ds: &Dataset,
        split: &SplitIndices,
    ) -> Result<Self> {
        Self::on_rows(metric, learner, k, ds, &split.test)
    }

    pub fn eval_features(&self) -> &Array2<f64> {
        &self.eval_features
    }

    pub fn eval_labels(&self) -> &Labels {
        &self.eval_labels
    }

    /// Score of the best constant predictor on the evaluation data.
    pub fn best_constant(&self) -> f64 {
        match &self.eval_labels {
            Labels::Classes { y, n_classes } => {
                let mut counts = vec![0usize; *n_classes];
                for &c in y {
                    counts[c] += 1;
                }
                let best = counts.iter().copied().max().unwrap_or(0);
                match self.metric {
                    Metric::NegMse => {
                        let v: Vec<f64> = y.iter().map(|&c| c as f64).collect();
                        -variance(&v)
                    }
                    _ => best as f64 / y.len() as f64,
                }
            }
            Labels::Real(v) => -variance(v),
        }
    }
}

fn variance(v: &[f64]) -> f64 {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64
}

fn check_rows(rows: &[usize], len: usize) -> Result<()> {
    match rows.iter().find(|&&r| r >= len) {
        Some(&index) => Err(Error::IndexOutOfRange { index, len }),
        None => Ok(()),
    }
}

/// A cooperative game over `n_players` players.
pub trait Utility: Sync {
    fn n_players(&self) -> usize;
    fn eval(&self, subset: &[usize]) -> f64;
}

/// A game defined by a closure, mostly for synthetic games.
pub struct FnUtility<F> {
    n: usize,
    f: F,
}

impl<F: Fn(&[usize]) -> f64 + Sync> FnUtility<F> {
    pub fn new(n: usize, f: F) -> Self {
        Self { n, f }
    }
}

impl<F: Fn(&[usize]) -> f64 + Sync> Utility for FnUtility<F> {
    fn n_players(&self) -> usize {
        self.n
    }

    fn eval(&self, subset: &[usize]) -> f64 {
        (self.f)(subset)
    }
}

/// A `UtilitySpec` bound to the training split of a dataset.
#[derive(Debug, Clone)]
pub struct BoundUtility<'a> {
    spec: &'a UtilitySpec,
    train_x: Array2<f64>,
    train_y: Labels,
    knn: Option<KnnTable>,
    empty_value: f64,
}

impl<'a> BoundUtility<'a> {
    pub fn new(spec: &'a UtilitySpec, ds: &Dataset, split: &SplitIndices) -> Result<Self> {
        check_rows(&split.train, ds.n())?;
        let (train_x, train_y) = ds.select(&split.train);
        Self::from_parts(spec, train_x, train_y)
    }

    pub fn from_parts(
        spec: &'a UtilitySpec,
        train_x: Array2<f64>,
        train_y: Labels,
    ) -> Result<Self> {
        if train_x.nrows() != train_y.len() {
            return Err(Error::DimensionMismatch {
                expected: train_x.nrows(),
                got: train_y.len(),
            });
        }
        if spec.metric != Metric::Volume && train_x.ncols() != spec.eval_features.ncols() {
            return Err(Error::DimensionMismatch {
                expected: spec.eval_features.ncols(),
                got: train_x.ncols(),
            });
        }
        if train_y.task() != spec.eval_labels.task() && spec.metric != Metric::Volume {
            return Err(invalid(
                "training and evaluation labels have different task kinds",
            ));
        }
        let knn = (spec.metric == Metric::KnnAccuracy)
            .then(|| KnnTable::new(train_x.view(), spec.eval_features.view()));
        let empty_value = match spec.metric {
            Metric::Accuracy | Metric::NegMse => spec.best_constant(),
            Metric::KnnAccuracy | Metric::Volume => 0.0,
        };
        Ok(Self {
            spec,
            train_x,
            train_y,
            knn,
            empty_value,
        })
    }

    pub fn spec(&self) -> &UtilitySpec {
        self.spec
    }

    pub fn train_features(&self) -> &Array2<f64> {
        &self.train_x
    }

    pub fn train_labels(&self) -> &Labels {
        &self.train_y
    }

    fn model_score(&self, subset: &[usize]) -> f64 {
        let x = self.train_x.select(ndarray::Axis(0), subset);
        let y = self.train_y.select(subset);
        let model = match fit(&self.spec.learner, x.view(), &y) {
            Ok(m) => m,
            // inputs were validated when binding, so fitting cannot fail
            Err(e) => unreachable!("fit failed on validated input: {e}"),
        };
        let pred = model.predict_unchecked(self.spec.eval_features.view());
        match (self.spec.metric, &pred, &self.spec.eval_labels) {
            (Metric::Accuracy, Labels::Classes { y: p, .. }, Labels::Classes { y: t, .. }) => {
                p.iter().zip(t).filter(|(a, b)| a == b).count() as f64 / t.len() as f64
            }
            _ => {
                let n = self.spec.eval_labels.len();
                let sse: f64 = (0..n)
                    .map(|i| {
                        let r = pred.value(i) - self.spec.eval_labels.value(i);
                        r * r
                    })
                    .sum();
                -sse / n as f64
            }
        }
    }
}

impl Utility for BoundUtility<'_> {
    fn n_players(&self) -> usize {
        self.train_x.nrows()
    }

    fn eval(&self, subset: &[usize]) -> f64 {
        if subset.is_empty() {
            return self.empty_value;
        }
        match self.spec.metric {
            Metric::Accuracy | Metric::NegMse => self.model_score(subset),
            Metric::KnnAccuracy => {
                let table = self.knn.as_ref().expect("knn table built for knn metric");
                table.utility(subset, &self.train_y, &self.spec.eval_labels, self.spec.k)
            }
            Metric::Volume => volume_of_rows(self.train_x.view(), subset),
        }
    }
}

/// For every evaluation point, the training positions sorted by distance
/// (ties by lower position).
#[derive(Debug, Clone)]
pub(crate) struct KnnTable {
    order: Vec<Vec<usize>>,
}

impl KnnTable {
    pub(crate) fn new(train: ArrayView2<'_, f64>, eval: ArrayView2<'_, f64>) -> Self {
        let order = eval
            .rows()
            .into_iter()
            .map(|q| {
                let mut d: Vec<(f64, usize)> = train
                    .rows()
                    .into_iter()
                    .enumerate()
                    .map(|(i, r)| (squared_distance(q, r), i))
                    .collect();
                d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                d.into_iter().map(|(_, i)| i).collect()
            })
            .collect();
        Self { order }
    }

    pub(crate) fn order(&self, v: usize) -> &[usize] {
        &self.order[v]
    }

    fn utility(&self, subset: &[usize], train_y: &Labels, eval_y: &Labels, k: usize) -> f64 {
        let m = train_y.len();
        let mut member = vec![false; m];
        for &p in subset {
            member[p] = true;
        }
        let take = k.min(subset.len());
        let mut total = 0.0;
        for (v, order) in self.order.iter().enumerate() {
            let neighbours = order.iter().copied().filter(|&p| member[p]).take(take);
            total += match (train_y, eval_y) {
                (Labels::Classes { y, .. }, Labels::Classes { y: t, .. }) => {
                    neighbours.filter(|&p| y[p] == t[v]).count() as f64
                }
                _ => -neighbours
                    .map(|p| {
                        let r = train_y.value(p) - eval_y.value(v);
                        r * r
                    })
                    .sum::<f64>(),
            };
        }
        total / (self.order.len() * k) as f64
    }
}

/// `sqrt(det(X_S^T X_S))`, zero when the Gram matrix is numerically singular.
fn volume_of_rows(x: ArrayView2<'_, f64>, subset: &[usize]) -> f64 {
    let d = x.ncols();
    if subset.len() < d {
        return 0.0;
    }
    let mut gram = DMatrix::<f64>::zeros(d, d);
    for &p in subset {
        let row = x.row(p);
        for a in 0..d {
            for b in 0..=a {
                gram[(a, b)] += row[a] * row[b];
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            gram[(b, a)] = gram[(a, b)];
        }
    }
    let eig = SymmetricEigen::new(gram).eigenvalues;
    let largest = eig.iter().cloned().fold(0.0, f64::max);
    let cutoff = 1e-12 * largest.max(1.0);
    if eig.iter().any(|&l| l < cutoff) {
        return 0.0;
    }
    eig.iter().product::<f64>().sqrt()
}

fn check_subset(subset: &[usize], split: &SplitIndices) -> Result<()> {
    check_rows(subset, split.train.len())
}

/// Utility of the model refit on `subset` (train positions).
pub fn eval_utility(
    spec: &UtilitySpec,
    subset: &[usize],
    ds: &Dataset,
    split: &SplitIndices,
) -> Result<f64> {
    check_subset(subset, split)?;
    Ok(BoundUtility::new(spec, ds, split)?.eval(subset))
}

/// Nearest-neighbour utility of `subset`; the spec's metric is ignored.
pub fn knn_utility(
    spec: &UtilitySpec,
    subset: &[usize],
    ds: &Dataset,
    split: &SplitIndices,
) -> Result<f64> {
    check_subset(subset, split)?;
    let knn_spec = UtilitySpec {
        metric: Metric::KnnAccuracy,
        ..spec.clone()
    };
    Ok(BoundUtility::new(&knn_spec, ds, split)?.eval(subset))
}

/// Volume of the feature rows of `subset`; labels are not used.
pub fn volume_utility(subset: &[usize], ds: &Dataset, split: &SplitIndices) -> Result<f64> {
    check_subset(subset, split)?;
    check_rows(&split.train, ds.n())?;
    let rows: Vec<usize> = subset.iter().map(|&p| split.train[p]).collect();
    Ok(volume_of_rows(ds.features().view(), &rows))
}

/// A volume game over the training split.
pub fn volume_game(ds: &Dataset, split: &SplitIndices) -> Result<VolumeUtility> {
    check_rows(&split.train, ds.n())?;
    Ok(VolumeUtility {
        x: ds.select(&split.train).0,
    })
}

#[derive(Debug, Clone)]
pub struct VolumeUtility {
    x: Array2<f64>,
}

impl Utility for VolumeUtility {
    fn n_players(&self) -> usize {
        self.x.nrows()
    }

    fn eval(&self, subset: &[usize]) -> f64 {
        volume_of_rows(self.x.view(), subset)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth_blobs;
    use ndarray::array;

    fn toy(
        features: Array2<f64>,
        labels: Labels,
        train: Vec<usize>,
        valid: Vec<usize>,
    ) -> (Dataset, SplitIndices) {
        let ds = Dataset::new("toy", features, labels).unwrap();
        let split = SplitIndices::new(ds.n(), train, valid, vec![]).unwrap();
        (ds, split)
    }

    #[test]
    fn empty_subset_is_best_constant() {
        let n = 12;
        let features = Array2::from_shape_fn((n, 1), |(i, _)| i as f64);
        let mut y = vec![0; n];
        // validation rows 2..12: six of class 1, four of class 0
        for (j, row) in (2..12).enumerate() {
            y[row] = usize::from(j < 6);
        }
        let (ds, split) = toy(
            features,
            Labels::Classes { y, n_classes: 2 },
            vec![0, 1],
            (2..12).collect(),
        );
        let spec =
            UtilitySpec::validation(Metric::Accuracy, LearnerSpec::default(), 1, &ds, &split)
                .unwrap();
        assert_eq!(eval_utility(&spec, &[], &ds, &split).unwrap(), 0.6);

        let (ds, split) = toy(
            array![[0.0], [1.0], [2.0]],
            Labels::Real(vec![5.0, 0.0, 2.0]),
            vec![0],
            vec![1, 2],
        );
        let spec = UtilitySpec::validation(Metric::NegMse, LearnerSpec::default(), 1, &ds, &split)
            .unwrap();
        assert_eq!(eval_utility(&spec, &[], &ds, &split).unwrap(), -1.0);
    }

    #[test]
    fn separable_full_train_scores_one() {
        let ds = synth_blobs(60, 2, 2, 50.0, 3).unwrap();
        let split = crate::dataset::split_by_count(&ds, 40, 20, 0, 1).unwrap();
        let spec =
            UtilitySpec::validation(Metric::Accuracy, LearnerSpec::default(), 1, &ds, &split)
                .unwrap();
        let all: Vec<usize> = (0..40).collect();
        assert_eq!(eval_utility(&spec, &all, &ds, &split).unwrap(), 1.0);
    }

    #[test]
    fn knn_utility_examples() {
        let labels = Labels::Classes {
            y: vec![1, 0, 1],
            n_classes: 2,
        };
        let (ds, split) = toy(array![[0.0], [5.0], [0.1]], labels, vec![0, 1], vec![2]);
        let spec =
            UtilitySpec::validation(Metric::KnnAccuracy, LearnerSpec::default(), 1, &ds, &split)
                .unwrap();
        assert_eq!(knn_utility(&spec, &[0], &ds, &split).unwrap(), 1.0);
        assert_eq!(knn_utility(&spec, &[], &ds, &split).unwrap(), 0.0);
        let spec2 = UtilitySpec { k: 2, ..spec };
        assert_eq!(knn_utility(&spec2, &[0], &ds, &split).unwrap(), 0.5);
        assert_eq!(knn_utility(&spec2, &[0, 1], &ds, &split).unwrap(), 0.5);
    }

    #[test]
    fn knn_utility_matches_one_nn_accuracy() {
        let ds = synth_blobs(80, 3, 3, 1.5, 9).unwrap();
        let split = crate::dataset::split_by_count(&ds, 50, 30, 0, 2).unwrap();
        let spec = UtilitySpec::validation(
            Metric::KnnAccuracy,
            LearnerSpec::Knn { k: 1 },
            1,
            &ds,
            &split,
        )
        .unwrap();
        let subset: Vec<usize> = (0..50).step_by(2).collect();
        let knn = knn_utility(&spec, &subset, &ds, &split).unwrap();
        let acc_spec = UtilitySpec {
            metric: Metric::Accuracy,
            ..spec.clone()
        };
        let acc = eval_utility(&acc_spec, &subset, &ds, &split).unwrap();
        assert!((knn - acc).abs() < 1e-12);
    }

    #[test]
    fn volume_examples() {
        let labels = Labels::Classes {
            y: vec![0, 1],
            n_classes: 2,
        };
        let (ds, split) = toy(array![[1.0, 0.0], [0.0, 2.0]], labels, vec![0, 1], vec![]);
        assert!((volume_utility(&[0, 1], &ds, &split).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(volume_utility(&[0], &ds, &split).unwrap(), 0.0);
        assert_eq!(volume_utility(&[], &ds, &split).unwrap(), 0.0);

        let labels = Labels::Classes {
            y: vec![0],
            n_classes: 1,
        };
        let (ds, split) = toy(array![[3.0, 4.0]], labels, vec![0], vec![]);
        assert_eq!(volume_utility(&[0], &ds, &split).unwrap(), 0.0);
    }

    #[test]
    fn invalid_positions_rejected() {
        let labels = Labels::Classes {
            y: vec![0, 1],
            n_classes: 2,
        };
        let (ds, split) = toy(array![[1.0, 0.0], [0.0, 2.0]], labels, vec![0, 1], vec![]);
        assert!(matches!(
            volume_utility(&[2], &ds, &split),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn metric_round_trip() {
        for m in [
            Metric::Accuracy,
            Metric::NegMse,
            Metric::KnnAccuracy,
            Metric::Volume,
        ] {
            assert_eq!(m.as_str().parse::<Metric>().unwrap(), m);
        }
        assert!("auc".parse::<Metric>().is_err());
    }
}
