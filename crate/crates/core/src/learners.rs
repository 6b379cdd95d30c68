//! Small deterministic learners refit inside utility evaluations.
//!
//! Every learner is a pure function of its inputs (bagging draws its
//! bootstrap samples from the seed carried in its spec), so refitting on the
//! same subset always yields the same model.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rayon::prelude::*;

use crate::dataset::Labels;
use crate::error::{invalid, Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticParams {
    pub l2: f64,
    pub epochs: usize,
    pub step: f64,
}

impl Default for LogisticParams {
    fn default() -> Self {
        Self {
            l2: 1e-4,
            epochs: 200,
            step: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_split: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: 6,
            min_split: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BaggingParams {
    pub n_estimators: usize,
    pub tree: TreeParams,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LearnerSpec {
    Logistic(LogisticParams),
    Tree(TreeParams),
    Knn { k: usize },
    Constant,
    Bagging(BaggingParams),
}

impl Default for LearnerSpec {
    fn default() -> Self {
        LearnerSpec::Logistic(LogisticParams::default())
    }
}

impl LearnerSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            LearnerSpec::Logistic(p) => {
                if !(p.step > 0.0 && p.step.is_finite()) {
                    return Err(invalid(format!(
                        "logistic step must be positive, got {}",
                        p.step
                    )));
                }
                if !(p.l2 >= 0.0 && p.l2.is_finite()) {
                    return Err(invalid(format!("logistic l2 must be >= 0, got {}", p.l2)));
                }
            }
            LearnerSpec::Tree(t) => validate_tree(t)?,
            LearnerSpec::Knn { k } if *k == 0 => return Err(invalid("knn needs k >= 1")),
            LearnerSpec::Bagging(b) => {
                if b.n_estimators == 0 {
                    return Err(invalid("bagging needs at least one estimator"));
                }
                validate_tree(&b.tree)?;
            }
            _ => {}
        }
        Ok(())
    }
}

fn validate_tree(t: &TreeParams) -> Result<()> {
    if t.max_depth == 0 {
        return Err(invalid("tree max_depth must be >= 1"));
    }
    Ok(())
}

/// Output of a constant model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConstantOutput {
    Class { class: usize, n_classes: usize },
    Real(f64),
}

#[derive(Debug, Clone)]
pub enum FittedModel {
    Constant { output: ConstantOutput, dim: usize },
    Logistic(LogisticModel),
    Tree(TreeModel),
    Knn(KnnModel),
    Bagging(BaggingModel),
}

/// Fits `spec` on the rows of `x` with targets `y`.
///
/// Empty input and classification input with a single distinct class give a
/// constant model.
pub fn fit(spec: &LearnerSpec, x: ArrayView2<'_, f64>, y: &Labels) -> Result<FittedModel> {
    spec.validate()?;
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            got: y.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let dim = x.ncols();
    if y.is_empty() {
        let output = match y {
            Labels::Classes { n_classes, .. } => ConstantOutput::Class {
                class: 0,
                n_classes: *n_classes,
            },
            Labels::Real(_) => ConstantOutput::Real(0.0),
        };
        return Ok(FittedModel::Constant { output, dim });
    }
    if let Labels::Classes {
        y: classes,
        n_classes,
    } = y
    {
        if classes.iter().all(|&c| c == classes[0]) {
            let output = ConstantOutput::Class {
                class: classes[0],
                n_classes: *n_classes,
            };
            return Ok(FittedModel::Constant { output, dim });
        }
    }
    Ok(match spec {
        LearnerSpec::Logistic(p) => FittedModel::Logistic(LogisticModel::fit(p, x, y)),
        LearnerSpec::Tree(t) => {
            let weights = vec![1.0; x.nrows()];
            FittedModel::Tree(TreeModel::fit(t, x, y, &weights))
        }
        LearnerSpec::Knn { k } => FittedModel::Knn(KnnModel {
            x: x.to_owned(),
            y: y.clone(),
            k: *k,
        }),
        LearnerSpec::Constant => {
            let output = match y {
                Labels::Classes { y, n_classes } => ConstantOutput::Class {
                    class: majority(&class_counts(y.iter().copied(), *n_classes)),
                    n_classes: *n_classes,
                },
                Labels::Real(v) => ConstantOutput::Real(v.iter().sum::<f64>() / v.len() as f64),
            };
            FittedModel::Constant { output, dim }
        }
        LearnerSpec::Bagging(b) => FittedModel::Bagging(BaggingModel::fit(b, x, y)),
    })
}

impl FittedModel {
    fn dim(&self) -> usize {
        match self {
            FittedModel::Constant { dim, .. } => *dim,
            FittedModel::Logistic(m) => m.weights.ncols(),
            FittedModel::Tree(m) => m.dim,
            FittedModel::Knn(m) => m.x.ncols(),
            FittedModel::Bagging(m) => m.dim,
        }
    }

    fn check_dim(&self, x: &ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.ncols(),
            });
        }
        Ok(())
    }

    pub fn n_classes(&self) -> Option<usize> {
        match self {
            FittedModel::Constant {
                output: ConstantOutput::Class { n_classes, .. },
                ..
            } => Some(*n_classes),
            FittedModel::Constant { .. } => None,
            FittedModel::Logistic(m) => m.n_classes,
            FittedModel::Tree(m) => m.n_classes,
            FittedModel::Knn(m) => m.y.n_classes(),
            FittedModel::Bagging(m) => m.n_classes,
        }
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Labels> {
        self.check_dim(&x)?;
        Ok(self.predict_unchecked(x))
    }

    pub(crate) fn predict_unchecked(&self, x: ArrayView2<'_, f64>) -> Labels {
        match self {
            FittedModel::Constant { output, .. } => match *output {
                ConstantOutput::Class { class, n_classes } => Labels::Classes {
                    y: vec![class; x.nrows()],
                    n_classes,
                },
                ConstantOutput::Real(v) => Labels::Real(vec![v; x.nrows()]),
            },
            FittedModel::Logistic(m) => m.predict(x),
            FittedModel::Tree(m) => m.predict(x),
            FittedModel::Knn(m) => m.predict(x),
            FittedModel::Bagging(m) => m.predict(x),
        }
    }

    /// Per-class scores (rows sum to one) for classifiers; a single column of
    /// predictions for regressors.
    pub fn scores(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_dim(&x)?;
        let n = x.nrows();
        Ok(match self {
            FittedModel::Constant { output, .. } => match *output {
                ConstantOutput::Class { class, n_classes } => {
                    let mut s = Array2::zeros((n, n_classes));
                    s.column_mut(class).fill(1.0);
                    s
                }
                ConstantOutput::Real(v) => Array2::from_elem((n, 1), v),
            },
            FittedModel::Logistic(m) => m.scores(x),
            FittedModel::Tree(m) => m.scores(x),
            FittedModel::Knn(m) => m.scores(x),
            FittedModel::Bagging(m) => m.scores(x),
        })
    }
}

fn class_counts(y: impl Iterator<Item = usize>, n_classes: usize) -> Vec<f64> {
    let mut counts = vec![0.0; n_classes];
    for c in y {
        counts[c] += 1.0;
    }
    counts
}

/// Index of the largest entry; ties go to the smallest index.
pub(crate) fn majority(counts: &[f64]) -> usize {
    let mut best = 0;
    for (c, &v) in counts.iter().enumerate() {
        if v > counts[best] {
            best = c;
        }
    }
    best
}

fn labels_from_rows(rows: Vec<usize>, reals: Vec<f64>, n_classes: Option<usize>) -> Labels {
    match n_classes {
        Some(n_classes) => Labels::Classes { y: rows, n_classes },
        None => Labels::Real(reals),
    }
}

// ---------------------------------------------------------------------------
// Logistic / linear regression

/// Multinomial logistic regression (or ridge-penalised linear regression for
/// real targets) trained by full-batch gradient descent from zero weights.
#[derive(Debug, Clone)]
pub struct LogisticModel {
    /// `C x d` for classification, `1 x d` for regression.
    weights: Array2<f64>,
    bias: Array1<f64>,
    n_classes: Option<usize>,
    loss_history: Vec<f64>,
}

impl LogisticModel {
    fn fit(p: &LogisticParams, x: ArrayView2<'_, f64>, y: &Labels) -> Self {
        let n_classes = y.n_classes();
        let outputs = n_classes.unwrap_or(1);
        let mut model = LogisticModel {
            weights: Array2::zeros((outputs, x.ncols())),
            bias: Array1::zeros(outputs),
            n_classes,
            loss_history: Vec::with_capacity(p.epochs + 1),
        };
        let n = x.nrows() as f64;
        let mut step = p.step;
        let (mut loss, mut residual) = model.objective(p.l2, x, y);
        model.loss_history.push(loss);

        for _ in 0..p.epochs {
            // residual is d(loss)/d(logits) * n
            let grad_w = residual.t().dot(&x) / n + &model.weights * p.l2;
            let grad_b = residual.sum_axis(Axis(0)) / n;
            let accepted = loop {
                let candidate = LogisticModel {
                    weights: &model.weights - &(&grad_w * step),
                    bias: &model.bias - &(&grad_b * step),
                    n_classes,
                    loss_history: Vec::new(),
                };
                let (cand_loss, cand_residual) = candidate.objective(p.l2, x, y);
                if cand_loss <= loss {
                    break Some((candidate, cand_loss, cand_residual));
                }
                step *= 0.5;
                if step < 1e-12 {
                    break None;
                }
            };
            match accepted {
                Some((candidate, cand_loss, cand_residual)) => {
                    model.weights = candidate.weights;
                    model.bias = candidate.bias;
                    loss = cand_loss;
                    residual = cand_residual;
                    model.loss_history.push(loss);
                }
                None => break,
            }
        }
        model
    }

    fn logits(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.dot(&self.weights.t()) + &self.bias
    }

    /// Penalised loss and the per-row gradient of the data term w.r.t. logits.
    fn objective(&self, l2: f64, x: ArrayView2<'_, f64>, y: &Labels) -> (f64, Array2<f64>) {
        let n = x.nrows() as f64;
        let mut z = self.logits(x);
        let penalty = 0.5 * l2 * self.weights.iter().map(|w| w * w).sum::<f64>();
        match y {
            Labels::Classes { y, .. } => {
                let mut data = 0.0;
                for (mut row, &label) in z.rows_mut().into_iter().zip(y) {
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut total = 0.0;
                    for v in row.iter_mut() {
                        *v = (*v - max).exp();
                        total += *v;
                    }
                    let target = row[label];
                    data += total.ln() - target.ln();
                    row.mapv_inplace(|v| v / total);
                    row[label] -= 1.0;
                }
                (data / n + penalty, z)
            }
            Labels::Real(y) => {
                let mut data = 0.0;
                for (mut row, &target) in z.rows_mut().into_iter().zip(y) {
                    let r = row[0] - target;
                    data += 0.5 * r * r;
                    row[0] = r;
                }
                (data / n + penalty, z)
            }
        }
    }

    /// Penalised training loss after initialisation and after each accepted epoch.
    pub fn loss_history(&self) -> &[f64] {
        &self.loss_history
    }

    fn predict(&self, x: ArrayView2<'_, f64>) -> Labels {
        let z = self.logits(x);
        match self.n_classes {
            Some(_) => {
                let rows = z
                    .rows()
                    .into_iter()
                    .map(|r| majority(r.as_slice().unwrap()))
                    .collect();
                labels_from_rows(rows, Vec::new(), self.n_classes)
            }
            None => Labels::Real(z.column(0).to_vec()),
        }
    }

    fn scores(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut z = self.logits(x);
        if self.n_classes.is_some() {
            for mut row in z.rows_mut() {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                row.mapv_inplace(|v| (v - max).exp());
                let total = row.sum();
                row.mapv_inplace(|v| v / total);
            }
        }
        z
    }
}

// ---------------------------------------------------------------------------
// CART

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        distribution: Vec<f64>,
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Greedy binary CART on Gini impurity (classes) or squared error (reals),
/// with per-row sample weights.
#[derive(Debug, Clone)]
pub struct TreeModel {
    nodes: Vec<Node>,
    n_classes: Option<usize>,
    dim: usize,
}

struct TreeBuilder<'a> {
    params: TreeParams,
    x: ArrayView2<'a, f64>,
    y: &'a Labels,
    weights: &'a [f64],
    nodes: Vec<Node>,
}

impl TreeModel {
    /// Fits on the rows with positive weight.
    pub fn fit_weighted(
        params: &TreeParams,
        x: ArrayView2<'_, f64>,
        y: &Labels,
        weights: &[f64],
    ) -> Result<Self> {
        validate_tree(params)?;
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                got: y.len(),
            });
        }
        if weights.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: y.len(),
                got: weights.len(),
            });
        }
        if x.iter().chain(weights).any(|v| !v.is_finite()) || weights.iter().any(|&w| w < 0.0) {
            return Err(invalid(
                "tree inputs must be finite with non-negative weights",
            ));
        }
        Ok(Self::fit(params, x, y, weights))
    }

    fn fit(params: &TreeParams, x: ArrayView2<'_, f64>, y: &Labels, weights: &[f64]) -> Self {
        let rows: Vec<usize> = (0..x.nrows()).filter(|&i| weights[i] > 0.0).collect();
        let mut builder = TreeBuilder {
            params: *params,
            x,
            y,
            weights,
            nodes: Vec::new(),
        };
        builder.build(rows, 0);
        TreeModel {
            nodes: builder.nodes,
            n_classes: y.n_classes(),
            dim: x.ncols(),
        }
    }

    fn leaf(&self, x: ArrayView1<'_, f64>) -> &Node {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    id = if x[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
                leaf => return leaf,
            }
        }
    }

    /// Prediction for one row: class index (as f64) or regression value.
    pub(crate) fn predict_row(&self, x: ArrayView1<'_, f64>) -> f64 {
        match self.leaf(x) {
            Node::Leaf { value, .. } => *value,
            Node::Split { .. } => unreachable!(),
        }
    }

    fn predict(&self, x: ArrayView2<'_, f64>) -> Labels {
        let values: Vec<f64> = x.rows().into_iter().map(|r| self.predict_row(r)).collect();
        match self.n_classes {
            Some(n_classes) => Labels::Classes {
                y: values.iter().map(|&v| v as usize).collect(),
                n_classes,
            },
            None => Labels::Real(values),
        }
    }

    fn scores(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let width = self.n_classes.unwrap_or(1);
        let mut out = Array2::zeros((x.nrows(), width));
        for (i, row) in x.rows().into_iter().enumerate() {
            if let Node::Leaf {
                distribution,
                value,
            } = self.leaf(row)
            {
                if self.n_classes.is_some() {
                    out.row_mut(i)
                        .assign(&ArrayView1::from(distribution.as_slice()));
                } else {
                    out[[i, 0]] = *value;
                }
            }
        }
        out
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], id: usize) -> usize {
            match &nodes[id] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    impurity: f64,
}

impl TreeBuilder<'_> {
    fn build(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        let (leaf, impurity, total_weight) = self.leaf_for(&rows);
        self.nodes.push(leaf);
        if depth >= self.params.max_depth
            || total_weight < self.params.min_split as f64
            || rows.len() < 2
            || impurity <= 1e-12
        {
            return id;
        }
        let Some(split) = self.best_split(&rows) else {
            return id;
        };
        if split.impurity >= impurity - 1e-12 {
            return id;
        }
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&r| self.x[[r, split.feature]] <= split.threshold);
        let left = self.build(left_rows, depth + 1);
        let right = self.build(right_rows, depth + 1);
        self.nodes[id] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        id
    }

    /// Leaf for `rows` plus its weighted impurity (Gini x weight, or SSE).
    fn leaf_for(&self, rows: &[usize]) -> (Node, f64, f64) {
        let total: f64 = rows.iter().map(|&r| self.weights[r]).sum();
        match self.y {
            Labels::Classes { y, n_classes } => {
                let mut dist = vec![0.0; *n_classes];
                for &r in rows {
                    dist[y[r]] += self.weights[r];
                }
                let class = majority(&dist);
                let sq: f64 = dist.iter().map(|c| c * c).sum();
                let impurity = if total > 0.0 { total - sq / total } else { 0.0 };
                if total > 0.0 {
                    dist.iter_mut().for_each(|v| *v /= total);
                }
                (
                    Node::Leaf {
                        distribution: dist,
                        value: class as f64,
                    },
                    impurity,
                    total,
                )
            }
            Labels::Real(y) => {
                let (mut s, mut s2) = (0.0, 0.0);
                for &r in rows {
                    s += self.weights[r] * y[r];
                    s2 += self.weights[r] * y[r] * y[r];
                }
                let mean = if total > 0.0 { s / total } else { 0.0 };
                let sse = if total > 0.0 {
                    (s2 - s * s / total).max(0.0)
                } else {
                    0.0
                };
                (
                    Node::Leaf {
                        distribution: Vec::new(),
                        value: mean,
                    },
                    sse,
                    total,
                )
            }
        }
    }

    fn best_split(&self, rows: &[usize]) -> Option<SplitChoice> {
        let mut best: Option<SplitChoice> = None;
        let mut order: Vec<(f64, usize)> = Vec::with_capacity(rows.len());
        for feature in 0..self.x.ncols() {
            order.clear();
            order.extend(rows.iter().map(|&r| (self.x[[r, feature]], r)));
            order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            if order[0].0 == order[order.len() - 1].0 {
                continue;
            }
            let candidate = match self.y {
                Labels::Classes { y, n_classes } => self.scan_gini(&order, y, *n_classes),
                Labels::Real(y) => self.scan_sse(&order, y),
            };
            if let Some((threshold, impurity)) = candidate {
                if best.as_ref().is_none_or(|b| impurity < b.impurity) {
                    best = Some(SplitChoice {
                        feature,
                        threshold,
                        impurity,
                    });
                }
            }
        }
        best
    }

    fn scan_gini(
        &self,
        order: &[(f64, usize)],
        y: &[usize],
        n_classes: usize,
    ) -> Option<(f64, f64)> {
        let mut right = vec![0.0; n_classes];
        for &(_, r) in order {
            right[y[r]] += self.weights[r];
        }
        let total: f64 = right.iter().sum();
        let mut left = vec![0.0; n_classes];
        let mut left_w = 0.0;
        let mut best: Option<(f64, f64)> = None;
        for pair in order.windows(2) {
            let (value, r) = pair[0];
            let w = self.weights[r];
            left[y[r]] += w;
            right[y[r]] -= w;
            left_w += w;
            let next = pair[1].0;
            if next <= value {
                continue;
            }
            let right_w = total - left_w;
            let gl: f64 = left.iter().map(|c| c * c).sum::<f64>() / left_w;
            let gr: f64 = right.iter().map(|c| c * c).sum::<f64>() / right_w;
            let impurity = total - gl - gr;
            if best.is_none_or(|(_, b)| impurity < b) {
                best = Some((midpoint(value, next), impurity));
            }
        }
        best
    }

    fn scan_sse(&self, order: &[(f64, usize)], y: &[f64]) -> Option<(f64, f64)> {
        let (mut tw, mut ts, mut ts2) = (0.0, 0.0, 0.0);
        for &(_, r) in order {
            let w = self.weights[r];
            tw += w;
            ts += w * y[r];
            ts2 += w * y[r] * y[r];
        }
        let (mut lw, mut ls, mut ls2) = (0.0, 0.0, 0.0);
        let mut best: Option<(f64, f64)> = None;
        for pair in order.windows(2) {
            let (value, r) = pair[0];
            let w = self.weights[r];
            lw += w;
            ls += w * y[r];
            ls2 += w * y[r] * y[r];
            let next = pair[1].0;
            if next <= value {
                continue;
            }
            let (rw, rs, rs2) = (tw - lw, ts - ls, ts2 - ls2);
            let sse = (ls2 - ls * ls / lw) + (rs2 - rs * rs / rw);
            if best.is_none_or(|(_, b)| sse < b) {
                best = Some((midpoint(value, next), sse));
            }
        }
        best
    }
}

fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid >= hi {
        lo
    } else {
        mid
    }
}

// ---------------------------------------------------------------------------
// KNN

#[derive(Debug, Clone)]
pub struct KnnModel {
    x: Array2<f64>,
    y: Labels,
    k: usize,
}

pub(crate) fn squared_distance(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(u, v)| (u - v) * (u - v)).sum()
}

impl KnnModel {
    /// Training indices of the `k` nearest neighbours; ties go to lower indices.
    fn neighbours(&self, q: ArrayView1<'_, f64>) -> Vec<usize> {
        let mut d: Vec<(f64, usize)> = self
            .x
            .rows()
            .into_iter()
            .enumerate()
            .map(|(i, r)| (squared_distance(q, r), i))
            .collect();
        let k = self.k.min(d.len());
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < d.len() {
            d.select_nth_unstable_by(k - 1, cmp);
            d.truncate(k);
        }
        d.sort_by(cmp);
        d.into_iter().map(|(_, i)| i).collect()
    }

    fn votes(&self, q: ArrayView1<'_, f64>) -> Vec<f64> {
        let nn = self.neighbours(q);
        match &self.y {
            Labels::Classes { y, n_classes } => {
                let mut v = class_counts(nn.iter().map(|&i| y[i]), *n_classes);
                let total = nn.len() as f64;
                v.iter_mut().for_each(|c| *c /= total);
                v
            }
            Labels::Real(y) => vec![nn.iter().map(|&i| y[i]).sum::<f64>() / nn.len() as f64],
        }
    }

    fn predict(&self, x: ArrayView2<'_, f64>) -> Labels {
        let votes: Vec<Vec<f64>> = x.rows().into_iter().map(|r| self.votes(r)).collect();
        match self.y.n_classes() {
            Some(n_classes) => Labels::Classes {
                y: votes.iter().map(|v| majority(v)).collect(),
                n_classes,
            },
            None => Labels::Real(votes.iter().map(|v| v[0]).collect()),
        }
    }

    fn scores(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let width = self.y.n_classes().unwrap_or(1);
        let mut out = Array2::zeros((x.nrows(), width));
        for (i, r) in x.rows().into_iter().enumerate() {
            out.row_mut(i).assign(&Array1::from(self.votes(r)));
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Bagging

/// Multiplicities of a size-`m` bootstrap resample for model `b`.
pub(crate) fn bootstrap_counts(m: usize, seed: u64, b: usize) -> Vec<u32> {
    let mut rng = rng::stream(seed, "bootstrap", b as u64);
    let mut counts = vec![0u32; m];
    for _ in 0..m {
        counts[rng.random_range(0..m)] += 1;
    }
    counts
}

/// `B` trees on bootstrap resamples, with the bootstrap multiplicities kept.
#[derive(Debug, Clone)]
pub struct BaggingModel {
    trees: Vec<TreeModel>,
    /// `B x m` matrix: times training row `j` was drawn for tree `b`.
    oob_counts: Array2<u32>,
    n_classes: Option<usize>,
    dim: usize,
}

impl BaggingModel {
    fn fit(params: &BaggingParams, x: ArrayView2<'_, f64>, y: &Labels) -> Self {
        let m = x.nrows();
        let fitted: Vec<(TreeModel, Vec<u32>)> = (0..params.n_estimators)
            .into_par_iter()
            .map(|b| {
                let counts = bootstrap_counts(m, params.seed, b);
                let weights: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
                (TreeModel::fit(&params.tree, x, y, &weights), counts)
            })
            .collect();
        let mut oob_counts = Array2::zeros((params.n_estimators, m));
        let mut trees = Vec::with_capacity(params.n_estimators);
        for (b, (tree, counts)) in fitted.into_iter().enumerate() {
            oob_counts.row_mut(b).assign(&Array1::from(counts));
            trees.push(tree);
        }
        BaggingModel {
            trees,
            oob_counts,
            n_classes: y.n_classes(),
            dim: x.ncols(),
        }
    }

    /// Fits like [`fit`] but never collapses to a constant model.
    pub fn fit_params(params: &BaggingParams, x: ArrayView2<'_, f64>, y: &Labels) -> Result<Self> {
        LearnerSpec::Bagging(*params).validate()?;
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                got: y.len(),
            });
        }
        if x.nrows() == 0 {
            return Err(invalid("bagging needs at least one row"));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self::fit(params, x, y))
    }

    /// Assembles a model from trees and their bootstrap multiplicities.
    pub fn from_parts(trees: Vec<TreeModel>, oob_counts: Array2<u32>) -> Result<Self> {
        if trees.is_empty() || trees.len() != oob_counts.nrows() {
            return Err(Error::DimensionMismatch {
                expected: oob_counts.nrows(),
                got: trees.len(),
            });
        }
        let (n_classes, dim) = (trees[0].n_classes, trees[0].dim);
        if trees
            .iter()
            .any(|t| t.n_classes != n_classes || t.dim != dim)
        {
            return Err(invalid("trees disagree on task or dimension"));
        }
        Ok(Self {
            trees,
            oob_counts,
            n_classes,
            dim,
        })
    }

    pub fn trees(&self) -> &[TreeModel] {
        &self.trees
    }

    pub fn oob_counts(&self) -> &Array2<u32> {
        &self.oob_counts
    }

    fn scores(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let width = self.n_classes.unwrap_or(1);
        let mut out = Array2::zeros((x.nrows(), width));
        let b = self.trees.len() as f64;
        for (i, r) in x.rows().into_iter().enumerate() {
            for tree in &self.trees {
                let v = tree.predict_row(r);
                match self.n_classes {
                    Some(_) => out[[i, v as usize]] += 1.0 / b,
                    None => out[[i, 0]] += v / b,
                }
            }
        }
        out
    }

    fn predict(&self, x: ArrayView2<'_, f64>) -> Labels {
        let s = self.scores(x);
        match self.n_classes {
            Some(n_classes) => Labels::Classes {
                y: s.rows()
                    .into_iter()
                    .map(|r| majority(&r.to_vec()))
                    .collect(),
                n_classes,
            },
            None => Labels::Real(s.column(0).to_vec()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth_blobs;
    use ndarray::array;

    fn accuracy(pred: &Labels, truth: &Labels) -> f64 {
        let (p, t) = (pred.classes().unwrap(), truth.classes().unwrap());
        p.iter().zip(t).filter(|(a, b)| a == b).count() as f64 / p.len() as f64
    }

    #[test]
    fn logistic_separates_far_blobs() {
        let ds = synth_blobs(4, 2, 2, 100.0, 0).unwrap();
        let model = fit(&LearnerSpec::default(), ds.features().view(), ds.labels()).unwrap();
        let pred = model.predict(ds.features().view()).unwrap();
        assert_eq!(accuracy(&pred, ds.labels()), 1.0);

        let ds = synth_blobs(200, 3, 3, 6.0, 1).unwrap();
        let model = fit(&LearnerSpec::default(), ds.features().view(), ds.labels()).unwrap();
        let pred = model.predict(ds.features().view()).unwrap();
        assert!(accuracy(&pred, ds.labels()) > 0.97);
    }

    #[test]
    fn logistic_loss_never_increases() {
        let ds = synth_blobs(150, 4, 3, 1.0, 2).unwrap();
        let spec = LearnerSpec::Logistic(LogisticParams {
            step: 50.0,
            ..Default::default()
        });
        let FittedModel::Logistic(m) = fit(&spec, ds.features().view(), ds.labels()).unwrap()
        else {
            panic!("expected logistic model");
        };
        assert!(m.loss_history().len() > 1);
        for w in m.loss_history().windows(2) {
            assert!(w[1] <= w[0], "loss went up: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn zero_weight_logistic_ties_to_class_zero() {
        let spec = LearnerSpec::Logistic(LogisticParams {
            epochs: 0,
            ..Default::default()
        });
        let x = array![[1.0, 2.0], [3.0, 4.0]];
        let y = Labels::Classes {
            y: vec![0, 1],
            n_classes: 2,
        };
        let model = fit(&spec, x.view(), &y).unwrap();
        assert_eq!(model.predict(x.view()).unwrap().classes().unwrap(), &[0, 0]);
        let s = model.scores(x.view()).unwrap();
        assert!((s[[0, 0]] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_class_and_empty_give_constant() {
        let x = array![[1.0], [2.0], [3.0]];
        let y = Labels::Classes {
            y: vec![0, 0, 0],
            n_classes: 2,
        };
        let model = fit(&LearnerSpec::default(), x.view(), &y).unwrap();
        assert!(matches!(model, FittedModel::Constant { .. }));
        assert_eq!(
            model
                .predict(array![[100.0], [-4.0]].view())
                .unwrap()
                .classes()
                .unwrap(),
            &[0, 0]
        );

        let empty = Array2::<f64>::zeros((0, 1));
        let model = fit(
            &LearnerSpec::default(),
            empty.view(),
            &Labels::Classes {
                y: vec![],
                n_classes: 2,
            },
        )
        .unwrap();
        assert!(matches!(model, FittedModel::Constant { .. }));
    }

    #[test]
    fn fit_errors() {
        let x = array![[1.0], [2.0]];
        let y = Labels::Classes {
            y: vec![0],
            n_classes: 2,
        };
        assert!(matches!(
            fit(&LearnerSpec::default(), x.view(), &y),
            Err(Error::DimensionMismatch { .. })
        ));
        let x = array![[f64::NAN], [2.0]];
        let y = Labels::Classes {
            y: vec![0, 1],
            n_classes: 2,
        };
        assert!(matches!(
            fit(&LearnerSpec::default(), x.view(), &y),
            Err(Error::NonFinite)
        ));

        let model = fit(&LearnerSpec::default(), array![[0.0], [1.0]].view(), &y).unwrap();
        assert!(model.predict(array![[0.0, 1.0]].view()).is_err());
    }

    #[test]
    fn knn_self_neighbour_and_ties() {
        let x = array![[0.0, 0.0], [1.0, 0.0], [5.0, 5.0]];
        let y = Labels::Classes {
            y: vec![1, 0, 1],
            n_classes: 2,
        };
        let model = fit(&LearnerSpec::Knn { k: 1 }, x.view(), &y).unwrap();
        assert_eq!(
            model.predict(x.view()).unwrap().classes().unwrap(),
            &[1, 0, 1]
        );

        // equidistant neighbours: the lower training index wins the k=1 slot
        let model = fit(&LearnerSpec::Knn { k: 1 }, x.view(), &y).unwrap();
        assert_eq!(
            model
                .predict(array![[0.5, 0.0]].view())
                .unwrap()
                .classes()
                .unwrap(),
            &[1]
        );
        // a 1-1 vote tie goes to the smaller class index
        let model = fit(&LearnerSpec::Knn { k: 2 }, x.view(), &y).unwrap();
        assert_eq!(
            model
                .predict(array![[0.5, 0.0]].view())
                .unwrap()
                .classes()
                .unwrap(),
            &[0]
        );
    }

    #[test]
    fn deep_tree_memorises_distinct_rows() {
        let ds = synth_blobs(120, 3, 3, 0.5, 4).unwrap();
        let spec = LearnerSpec::Tree(TreeParams {
            max_depth: 64,
            min_split: 2,
        });
        let model = fit(&spec, ds.features().view(), ds.labels()).unwrap();
        let pred = model.predict(ds.features().view()).unwrap();
        assert_eq!(accuracy(&pred, ds.labels()), 1.0);
    }

    #[test]
    fn tree_respects_depth_and_regression() {
        let ds = synth_blobs(200, 2, 2, 0.3, 5).unwrap();
        let FittedModel::Tree(t) = fit(
            &LearnerSpec::Tree(TreeParams {
                max_depth: 3,
                min_split: 2,
            }),
            ds.features().view(),
            ds.labels(),
        )
        .unwrap() else {
            panic!()
        };
        assert!(t.depth() <= 3);

        let x = array![[0.0], [1.0], [2.0], [3.0]];
        let y = Labels::Real(vec![1.0, 1.0, 5.0, 5.0]);
        let model = fit(&LearnerSpec::Tree(TreeParams::default()), x.view(), &y).unwrap();
        assert_eq!(
            model
                .predict(array![[0.2], [2.7]].view())
                .unwrap()
                .reals()
                .unwrap(),
            &[1.0, 5.0]
        );
    }

    #[test]
    fn tree_split_threshold_is_midpoint() {
        let x = array![[0.0], [2.0]];
        let y = Labels::Classes {
            y: vec![0, 1],
            n_classes: 2,
        };
        let model = fit(&LearnerSpec::Tree(TreeParams::default()), x.view(), &y).unwrap();
        let p = model
            .predict(array![[0.999], [1.0], [1.001]].view())
            .unwrap();
        assert_eq!(p.classes().unwrap(), &[0, 0, 1]);
    }

    #[test]
    fn scores_are_distributions() {
        let ds = synth_blobs(90, 2, 3, 1.0, 6).unwrap();
        let specs = [
            LearnerSpec::default(),
            LearnerSpec::Tree(TreeParams::default()),
            LearnerSpec::Knn { k: 5 },
            LearnerSpec::Bagging(BaggingParams {
                n_estimators: 7,
                tree: TreeParams::default(),
                seed: 1,
            }),
        ];
        for spec in &specs {
            let model = fit(spec, ds.features().view(), ds.labels()).unwrap();
            let s = model.scores(ds.features().view()).unwrap();
            for row in s.rows() {
                assert!(row.iter().all(|&v| v >= 0.0));
                assert!((row.sum() - 1.0).abs() < 1e-9);
            }
            let pred = model.predict(ds.features().view()).unwrap();
            assert!(pred.classes().unwrap().iter().all(|&c| c < 3));
        }
    }

    #[test]
    fn bagging_counts_and_determinism() {
        let ds = synth_blobs(50, 2, 2, 2.0, 7).unwrap();
        let spec = LearnerSpec::Bagging(BaggingParams {
            n_estimators: 10,
            tree: TreeParams::default(),
            seed: 3,
        });
        let FittedModel::Bagging(a) = fit(&spec, ds.features().view(), ds.labels()).unwrap() else {
            panic!()
        };
        assert_eq!(a.oob_counts().dim(), (10, 50));
        for row in a.oob_counts().rows() {
            assert_eq!(row.sum(), 50);
        }
        let FittedModel::Bagging(b) = fit(&spec, ds.features().view(), ds.labels()).unwrap() else {
            panic!()
        };
        assert_eq!(a.oob_counts(), b.oob_counts());
    }

    #[test]
    fn bagging_oob_coverage() {
        let ds = synth_blobs(1000, 2, 2, 2.0, 8).unwrap();
        let spec = LearnerSpec::Bagging(BaggingParams {
            n_estimators: 1000,
            tree: TreeParams {
                max_depth: 1,
                min_split: 2,
            },
            seed: 0,
        });
        let FittedModel::Bagging(m) = fit(&spec, ds.features().view(), ds.labels()).unwrap() else {
            panic!()
        };
        let covered = m
            .oob_counts()
            .columns()
            .into_iter()
            .filter(|c| c.iter().any(|&w| w == 0))
            .count();
        assert!(covered as f64 >= 0.99 * 1000.0);
    }
}
