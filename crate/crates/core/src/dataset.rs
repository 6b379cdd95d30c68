//! Datasets, train/valid/test splits and synthetic noise.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    Classification,
    Regression,
}

/// Targets of a dataset: class indices in `0..n_classes` or real values.
#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    Classes { y: Vec<usize>, n_classes: usize },
    Real(Vec<f64>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Classes { y, .. } => y.len(),
            Labels::Real(y) => y.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn task(&self) -> Task {
        match self {
            Labels::Classes { .. } => Task::Classification,
            Labels::Real(_) => Task::Regression,
        }
    }

    pub fn n_classes(&self) -> Option<usize> {
        match self {
            Labels::Classes { n_classes, .. } => Some(*n_classes),
            Labels::Real(_) => None,
        }
    }

    pub fn classes(&self) -> Option<&[usize]> {
        match self {
            Labels::Classes { y, .. } => Some(y),
            Labels::Real(_) => None,
        }
    }

    pub fn reals(&self) -> Option<&[f64]> {
        match self {
            Labels::Classes { .. } => None,
            Labels::Real(y) => Some(y),
        }
    }

    /// Label `i` as a real number (class index for classification).
    pub fn value(&self, i: usize) -> f64 {
        match self {
            Labels::Classes { y, .. } => y[i] as f64,
            Labels::Real(y) => y[i],
        }
    }

    pub fn select(&self, rows: &[usize]) -> Labels {
        match self {
            Labels::Classes { y, n_classes } => Labels::Classes {
                y: rows.iter().map(|&r| y[r]).collect(),
                n_classes: *n_classes,
            },
            Labels::Real(y) => Labels::Real(rows.iter().map(|&r| y[r]).collect()),
        }
    }
}

/// Feature matrix plus labels; rows are data points.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    features: Array2<f64>,
    labels: Labels,
}

impl Dataset {
    pub fn new(name: impl Into<String>, features: Array2<f64>, labels: Labels) -> Result<Self> {
        let (n, d) = features.dim();
        if n == 0 || d == 0 {
            return Err(invalid(format!(
                "dataset needs n >= 1 and d >= 1, got {n}x{d}"
            )));
        }
        if labels.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: labels.len(),
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        match &labels {
            Labels::Classes { y, n_classes } => {
                if let Some(&bad) = y.iter().find(|&&c| c >= *n_classes) {
                    return Err(invalid(format!("class label {bad} outside 0..{n_classes}")));
                }
            }
            Labels::Real(y) => {
                if y.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite);
                }
            }
        }
        Ok(Self {
            name: name.into(),
            features,
            labels,
        })
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn task(&self) -> Task {
        self.labels.task()
    }

    pub fn n_classes(&self) -> Option<usize> {
        self.labels.n_classes()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    /// Copies the given rows into a fresh feature matrix and label vector.
    pub fn select(&self, rows: &[usize]) -> (Array2<f64>, Labels) {
        (
            self.features.select(Axis(0), rows),
            self.labels.select(rows),
        )
    }
}

/// Disjoint train/valid/test index lists into a [`Dataset`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    pub fn new(n: usize, train: Vec<usize>, valid: Vec<usize>, test: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; n];
        for &i in train.iter().chain(&valid).chain(&test) {
            if i >= n {
                return Err(Error::IndexOutOfRange { index: i, len: n });
            }
            if seen[i] {
                return Err(invalid(format!("index {i} appears twice in the split")));
            }
            seen[i] = true;
        }
        Ok(Self { train, valid, test })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NoiseKind {
    LabelFlip,
    FeatureGauss,
}

impl NoiseKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            NoiseKind::LabelFlip => "label_flip",
            NoiseKind::FeatureGauss => "feature_gauss",
        }
    }
}

/// Ground truth for a noise injection.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRecord {
    pub kind: NoiseKind,
    pub rate: f64,
    pub sigma: f64,
    /// Corrupted dataset row indices, ascending; a subset of `split.train`.
    pub affected: Vec<usize>,
    /// The same points as positions within `split.train`, ascending.
    pub positions: Vec<usize>,
}

impl NoiseRecord {
    /// Per-train-position corruption flags.
    pub fn mask(&self, n_train: usize) -> Vec<bool> {
        let mut mask = vec![false; n_train];
        for &p in &self.positions {
            mask[p] = true;
        }
        mask
    }
}

fn parse_row(record: &csv::StringRecord) -> Option<Vec<f64>> {
    record
        .iter()
        .map(|cell| cell.trim().parse::<f64>().ok().filter(|v| v.is_finite()))
        .collect()
}

/// Reads a numeric CSV; every column except `label_column` becomes a feature.
///
/// A first row with any non-numeric cell is treated as a header. For
/// classification the distinct raw label values are re-indexed `0..C` in
/// ascending order.
pub fn load_csv(path: impl AsRef<Path>, label_column: usize, task: Task) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(file);

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            row: line + 1,
            column: 0,
            message: e.to_string(),
        })?;
        if record.iter().all(|c| c.trim().is_empty()) {
            continue;
        }
        let parsed = parse_row(&record);
        let values = match parsed {
            Some(v) => v,
            None if line == 0 => continue,
            None => {
                let column = record
                    .iter()
                    .position(|c| c.trim().parse::<f64>().map_or(true, |v| !v.is_finite()))
                    .unwrap_or(0);
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    row: line + 1,
                    column: column + 1,
                    message: format!("non-numeric cell {:?}", &record[column]),
                });
            }
        };
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    row: line + 1,
                    column: values.len().min(w) + 1,
                    message: format!("expected {w} columns, found {}", values.len()),
                })
            }
            _ => {}
        }
        rows.push(values);
    }

    let width = match width {
        Some(w) if !rows.is_empty() => w,
        _ => return Err(Error::EmptyFile(path.to_path_buf())),
    };
    if label_column >= width {
        return Err(invalid(format!(
            "label column {label_column} missing: file has {width} columns"
        )));
    }
    if width < 2 {
        return Err(invalid(
            "file needs at least one feature column besides the label",
        ));
    }

    let n = rows.len();
    let d = width - 1;
    let mut features = Array2::zeros((n, d));
    let mut raw_labels = Vec::with_capacity(n);
    for (i, row) in rows.iter().enumerate() {
        let mut col = 0;
        for (j, &v) in row.iter().enumerate() {
            if j == label_column {
                raw_labels.push(v);
            } else {
                features[[i, col]] = v;
                col += 1;
            }
        }
    }

    let labels = match task {
        Task::Regression => Labels::Real(raw_labels),
        Task::Classification => {
            let mut distinct: Vec<f64> = raw_labels.clone();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            let lookup: BTreeMap<u64, usize> = distinct
                .iter()
                .enumerate()
                .map(|(c, v)| (v.to_bits(), c))
                .collect();
            let y = raw_labels.iter().map(|v| lookup[&v.to_bits()]).collect();
            Labels::Classes {
                y,
                n_classes: distinct.len(),
            }
        }
    };
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".to_string());
    Dataset::new(name, features, labels)
}

/// Isotropic Gaussian blobs: class `c` is centred at `sep * e_{c mod d}`.
pub fn synth_blobs(n: usize, d: usize, classes: usize, sep: f64, seed: u64) -> Result<Dataset> {
    if classes == 0 || n < classes {
        return Err(invalid(format!("need n >= C >= 1, got n={n}, C={classes}")));
    }
    if d == 0 {
        return Err(invalid("d must be at least 1"));
    }
    if !(sep > 0.0 && sep.is_finite()) {
        return Err(invalid(format!("sep must be positive, got {sep}")));
    }
    let mut rng = rng::seeded(seed);
    let mut y: Vec<usize> = (0..n).map(|i| i % classes).collect();
    y.shuffle(&mut rng);
    let mut features = Array2::zeros((n, d));
    for (i, &c) in y.iter().enumerate() {
        for j in 0..d {
            let noise: f64 = StandardNormal.sample(&mut rng);
            features[[i, j]] = noise;
        }
        features[[i, c % d]] += sep;
    }
    Dataset::new(
        "blobs",
        features,
        Labels::Classes {
            y,
            n_classes: classes,
        },
    )
}

/// Friedman #1 features with the response dichotomised at its sample median.
pub fn synth_friedman(n: usize, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(invalid(format!("friedman needs n >= 2, got {n}")));
    }
    let mut rng = rng::seeded(seed);
    let features = Array2::from_shape_simple_fn((n, 10), || rng.random::<f64>());
    let score: Vec<f64> = features
        .rows()
        .into_iter()
        .map(|x| {
            10.0 * (std::f64::consts::PI * x[0] * x[1]).sin()
                + 20.0 * (x[2] - 0.5).powi(2)
                + 10.0 * x[3]
                + 5.0 * x[4]
        })
        .collect();
    let mut sorted = score.clone();
    sorted.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let y = score.iter().map(|&s| usize::from(s > median)).collect();
    Dataset::new("friedman", features, Labels::Classes { y, n_classes: 2 })
}

/// Uniformly random disjoint train/valid/test subsets.
pub fn split_by_count(
    ds: &Dataset,
    n_train: usize,
    n_valid: usize,
    n_test: usize,
    seed: u64,
) -> Result<SplitIndices> {
    let n = ds.n();
    let total = n_train + n_valid + n_test;
    if total > n {
        return Err(invalid(format!(
            "split sizes {n_train}+{n_valid}+{n_test} exceed dataset size {n}"
        )));
    }
    let mut rng = rng::seeded(seed);
    let picked = index::sample(&mut rng, n, total).into_vec();
    let train = picked[..n_train].to_vec();
    let valid = picked[n_train..n_train + n_valid].to_vec();
    let test = picked[n_train + n_valid..].to_vec();
    Ok(SplitIndices { train, valid, test })
}

fn noise_count(rate: f64, n_train: usize) -> Result<usize> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(invalid(format!(
            "noise rate must lie in [0, 1], got {rate}"
        )));
    }
    Ok((rate * n_train as f64).round_ties_even() as usize)
}

fn choose_positions(n_train: usize, count: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut positions = index::sample(rng, n_train, count).into_vec();
    positions.sort_unstable();
    positions
}

/// Flips the labels of `round(rate * |train|)` uniformly chosen train points.
///
/// Binary labels are inverted; multiclass labels move to a uniformly chosen
/// different class.
pub fn inject_label_noise(
    ds: &Dataset,
    split: &SplitIndices,
    rate: f64,
    seed: u64,
) -> Result<(Dataset, NoiseRecord)> {
    let (y, n_classes) = match ds.labels() {
        Labels::Classes { y, n_classes } => (y, *n_classes),
        Labels::Real(_) => {
            return Err(Error::Unsupported(
                "label noise on a regression task".into(),
            ))
        }
    };
    if n_classes < 2 {
        return Err(Error::Unsupported(
            "label noise needs at least two classes".into(),
        ));
    }
    let count = noise_count(rate, split.train.len())?;
    let mut rng = rng::seeded(seed);
    let positions = choose_positions(split.train.len(), count, &mut rng);

    let mut y = y.clone();
    let mut affected = Vec::with_capacity(count);
    for &p in &positions {
        let row = split.train[p];
        let old = y[row];
        y[row] = if n_classes == 2 {
            1 - old
        } else {
            (old + 1 + rng.random_range(0..n_classes - 1)) % n_classes
        };
        affected.push(row);
    }
    affected.sort_unstable();
    let noisy = Dataset::new(
        ds.name.clone(),
        ds.features.clone(),
        Labels::Classes { y, n_classes },
    )?;
    let record = NoiseRecord {
        kind: NoiseKind::LabelFlip,
        rate,
        sigma: 0.0,
        affected,
        positions,
    };
    Ok((noisy, record))
}

/// Adds i.i.d. `N(0, sigma^2)` noise to every feature of `round(rate * |train|)`
/// uniformly chosen train points.
pub fn inject_feature_noise(
    ds: &Dataset,
    split: &SplitIndices,
    rate: f64,
    sigma: f64,
    seed: u64,
) -> Result<(Dataset, NoiseRecord)> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(invalid(format!(
            "sigma must be finite and >= 0, got {sigma}"
        )));
    }
    let count = noise_count(rate, split.train.len())?;
    let mut rng = rng::seeded(seed);
    let positions = choose_positions(split.train.len(), count, &mut rng);
    let normal = Normal::new(0.0, sigma).map_err(|e| invalid(e.to_string()))?;

    let mut features = ds.features.clone();
    let mut affected = Vec::with_capacity(count);
    for &p in &positions {
        let row = split.train[p];
        for v in features.row_mut(row).iter_mut() {
            *v += normal.sample(&mut rng);
        }
        affected.push(row);
    }
    affected.sort_unstable();
    let noisy = Dataset::new(ds.name.clone(), features, ds.labels.clone())?;
    let record = NoiseRecord {
        kind: NoiseKind::FeatureGauss,
        rate,
        sigma,
        affected,
        positions,
    };
    Ok((noisy, record))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn csv_single_row() {
        let f = write_tmp("1.5,2.5,0\n");
        let ds = load_csv(f.path(), 2, Task::Classification).unwrap();
        assert_eq!((ds.n(), ds.dim(), ds.n_classes()), (1, 2, Some(1)));
        assert_eq!(ds.features()[[0, 1]], 2.5);
    }

    #[test]
    fn csv_reindexes_labels_by_sorted_value() {
        let f = write_tmp("a,b,label\n0.1,0.2,7\n0.3,0.4,3\n0.5,0.6,7\n");
        let ds = load_csv(f.path(), 2, Task::Classification).unwrap();
        assert_eq!(ds.labels().classes().unwrap(), &[1, 0, 1]);
        assert_eq!(ds.n_classes(), Some(2));
        assert_eq!(ds.n(), 3);
    }

    #[test]
    fn csv_label_in_first_column() {
        let f = write_tmp("2.0,1,2\n-1.0,3,4\n");
        let ds = load_csv(f.path(), 0, Task::Regression).unwrap();
        assert_eq!(ds.labels().reals().unwrap(), &[2.0, -1.0]);
        assert_eq!(ds.features()[[1, 1]], 4.0);
    }

    #[test]
    fn csv_errors() {
        let missing = load_csv("/nonexistent/file.csv", 0, Task::Classification);
        assert!(matches!(missing, Err(Error::Io { .. })));

        let empty = write_tmp("");
        assert!(matches!(
            load_csv(empty.path(), 0, Task::Classification),
            Err(Error::EmptyFile(_))
        ));

        let header_only = write_tmp("x,y\n");
        assert!(matches!(
            load_csv(header_only.path(), 1, Task::Classification),
            Err(Error::EmptyFile(_))
        ));

        let bad = write_tmp("1,2,0\n3,oops,1\n");
        match load_csv(bad.path(), 2, Task::Classification) {
            Err(Error::Parse { row, column, .. }) => assert_eq!((row, column), (2, 2)),
            other => panic!("expected parse error, got {other:?}"),
        }

        let narrow = write_tmp("1,2\n");
        assert!(load_csv(narrow.path(), 5, Task::Classification).is_err());
    }

    #[test]
    fn blobs_balanced_and_deterministic() {
        let ds = synth_blobs(2, 1, 2, 5.0, 7).unwrap();
        let mut y = ds.labels().classes().unwrap().to_vec();
        y.sort_unstable();
        assert_eq!(y, vec![0, 1]);

        let a = synth_blobs(101, 3, 4, 2.0, 11).unwrap();
        let b = synth_blobs(101, 3, 4, 2.0, 11).unwrap();
        assert_eq!(a, b);
        let mut counts = [0usize; 4];
        for &c in a.labels().classes().unwrap() {
            counts[c] += 1;
        }
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        assert!(hi - lo <= 1);
        assert!(synth_blobs(1, 2, 2, 1.0, 0).is_err());
    }

    #[test]
    fn friedman_median_split() {
        let ds = synth_friedman(2, 3).unwrap();
        let y = ds.labels().classes().unwrap();
        assert_eq!(y.iter().sum::<usize>(), 1);

        let ds = synth_friedman(1000, 5).unwrap();
        let ones = ds.labels().classes().unwrap().iter().sum::<usize>() as f64 / 1000.0;
        assert!((0.45..=0.55).contains(&ones));
        assert_eq!(ds.dim(), 10);
        assert_eq!(ds, synth_friedman(1000, 5).unwrap());
    }

    #[test]
    fn split_sizes() {
        let ds = synth_blobs(5000, 2, 2, 1.0, 0).unwrap();
        let s = split_by_count(&ds, 1000, 100, 3000, 1).unwrap();
        assert_eq!(
            (s.train.len(), s.valid.len(), s.test.len()),
            (1000, 100, 3000)
        );
        assert!(SplitIndices::new(5000, s.train.clone(), s.valid.clone(), s.test.clone()).is_ok());

        let small = synth_blobs(3, 1, 1, 1.0, 0).unwrap();
        let s = split_by_count(&small, 1, 1, 1, 0).unwrap();
        let mut all: Vec<usize> = s
            .train
            .iter()
            .chain(&s.valid)
            .chain(&s.test)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2]);

        let two = synth_blobs(2, 1, 1, 1.0, 0).unwrap();
        assert!(split_by_count(&two, 2, 1, 0, 0).is_err());
    }

    #[test]
    fn split_validation_rejects_overlap() {
        assert!(SplitIndices::new(4, vec![0, 1], vec![1], vec![]).is_err());
        assert!(SplitIndices::new(4, vec![0, 4], vec![], vec![]).is_err());
    }

    #[test]
    fn label_noise_counts_and_flips() {
        let ds = synth_blobs(1200, 2, 2, 3.0, 0).unwrap();
        let split = split_by_count(&ds, 1000, 100, 100, 0).unwrap();
        let (noisy, rec) = inject_label_noise(&ds, &split, 0.2, 9).unwrap();
        assert_eq!(rec.affected.len(), 200);
        let (before, after) = (
            ds.labels().classes().unwrap(),
            noisy.labels().classes().unwrap(),
        );
        for &i in &rec.affected {
            assert_ne!(before[i], after[i]);
        }
        for &p in &rec.positions {
            assert!(rec.affected.binary_search(&split.train[p]).is_ok());
        }

        let (same, rec0) = inject_label_noise(&ds, &split, 0.0, 9).unwrap();
        assert_eq!(same, ds);
        assert!(rec0.affected.is_empty());

        let (all, _) = inject_label_noise(&ds, &split, 1.0, 9).unwrap();
        for &i in &split.train {
            assert_eq!(all.labels().classes().unwrap()[i], 1 - before[i]);
        }
    }

    #[test]
    fn label_noise_rejects_regression_and_single_class() {
        let reg = Dataset::new("r", Array2::zeros((3, 1)), Labels::Real(vec![0.0; 3])).unwrap();
        let split = SplitIndices::new(3, vec![0, 1, 2], vec![], vec![]).unwrap();
        assert!(inject_label_noise(&reg, &split, 0.5, 0).is_err());
        let one = Dataset::new(
            "c",
            Array2::zeros((3, 1)),
            Labels::Classes {
                y: vec![0; 3],
                n_classes: 1,
            },
        )
        .unwrap();
        assert!(inject_label_noise(&one, &split, 0.5, 0).is_err());
    }

    #[test]
    fn feature_noise() {
        let ds = synth_blobs(1200, 4, 2, 3.0, 0).unwrap();
        let split = split_by_count(&ds, 1000, 100, 100, 0).unwrap();
        let (noisy, rec) = inject_feature_noise(&ds, &split, 0.2, 2.0, 4).unwrap();
        assert_eq!(rec.affected.len(), 200);
        for &i in &rec.affected {
            assert_ne!(noisy.row(i), ds.row(i));
        }
        assert_eq!(noisy.labels(), ds.labels());

        let (flat, rec) = inject_feature_noise(&ds, &split, 0.2, 0.0, 4).unwrap();
        assert_eq!(flat, ds);
        assert_eq!(rec.affected.len(), 200);

        let (same, rec) = inject_feature_noise(&ds, &split, 0.0, 2.0, 4).unwrap();
        assert_eq!(same, ds);
        assert!(rec.affected.is_empty());
    }
}
