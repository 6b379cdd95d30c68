//! Entropic optimal transport between the training and validation measures.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::{Array1, Array2};

use crate::dataset::{Dataset, Labels, SplitIndices};
use crate::error::{invalid, Error, Result};

/// `cost[i][v] = |x_i - x_v| + label_weight * [y_i != y_v]` between train
/// row `i` and validation row `v`.
pub fn ground_cost(ds: &Dataset, split: &SplitIndices, label_weight: f64) -> Result<Array2<f64>> {
    if !(label_weight >= 0.0 && label_weight.is_finite()) {
        return Err(invalid(format!(
            "label_weight must be finite and >= 0, got {label_weight}"
        )));
    }
    let mut cost = feature_distances(ds, split)?;
    for (i, &r) in split.train.iter().enumerate() {
        for (v, &s) in split.valid.iter().enumerate() {
            if ds.labels().value(r) != ds.labels().value(s) {
                cost[[i, v]] += label_weight;
            }
        }
    }
    Ok(cost)
}

/// `cost[i][v] = |x_i - x_v|^2 + W(y_i, y_v)` where `W` is the squared
/// 2-Wasserstein distance between Gaussian fits of the training class `y_i`
/// and the validation class `y_v`. For real labels the label term is
/// `(y_i - y_v)^2`.
pub fn class_wise_cost(ds: &Dataset, split: &SplitIndices) -> Result<Array2<f64>> {
    let mut cost = feature_distances(ds, split)?;
    cost.mapv_inplace(|d| d * d);
    match ds.labels() {
        Labels::Real(y) => {
            for (i, &r) in split.train.iter().enumerate() {
                for (v, &s) in split.valid.iter().enumerate() {
                    cost[[i, v]] += (y[r] - y[s]) * (y[r] - y[s]);
                }
            }
        }
        Labels::Classes { y, n_classes } => {
            let train = class_gaussians(ds, &split.train, y, *n_classes);
            let valid = class_gaussians(ds, &split.valid, y, *n_classes);
            let mut table = Array2::zeros((*n_classes, *n_classes));
            for (a, ga) in train.iter().enumerate() {
                for (b, gb) in valid.iter().enumerate() {
                    if let (Some(ga), Some(gb)) = (ga, gb) {
                        table[[a, b]] = gaussian_w2(ga, gb);
                    }
                }
            }
            for (i, &r) in split.train.iter().enumerate() {
                for (v, &s) in split.valid.iter().enumerate() {
                    cost[[i, v]] += table[[y[r], y[s]]];
                }
            }
        }
    }
    Ok(cost)
}

struct Gaussian {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    cov_sqrt: DMatrix<f64>,
}

fn class_gaussians(
    ds: &Dataset,
    rows: &[usize],
    y: &[usize],
    n_classes: usize,
) -> Vec<Option<Gaussian>> {
    let d = ds.dim();
    (0..n_classes)
        .map(|c| {
            let members: Vec<usize> = rows.iter().copied().filter(|&r| y[r] == c).collect();
            if members.is_empty() {
                return None;
            }
            let n = members.len() as f64;
            let mut mean = DVector::zeros(d);
            for &r in &members {
                mean += DVector::from_iterator(d, ds.row(r).iter().copied());
            }
            mean /= n;
            let mut cov = DMatrix::zeros(d, d);
            for &r in &members {
                let z = DVector::from_iterator(d, ds.row(r).iter().copied()) - &mean;
                cov += &z * z.transpose();
            }
            cov /= n;
            let cov_sqrt = psd_sqrt(&cov);
            Some(Gaussian {
                mean,
                cov,
                cov_sqrt,
            })
        })
        .collect()
}

fn psd_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(a.clone());
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

fn gaussian_w2(a: &Gaussian, b: &Gaussian) -> f64 {
    let cross = psd_sqrt(&(&a.cov_sqrt * &b.cov * &a.cov_sqrt));
    let bures = a.cov.trace() + b.cov.trace() - 2.0 * cross.trace();
    (&a.mean - &b.mean).norm_squared() + bures.max(0.0)
}

/// Euclidean distances between train and validation rows.
pub fn feature_distances(ds: &Dataset, split: &SplitIndices) -> Result<Array2<f64>> {
    for &r in split.train.iter().chain(&split.valid) {
        if r >= ds.n() {
            return Err(Error::IndexOutOfRange {
                index: r,
                len: ds.n(),
            });
        }
    }
    let mut d = Array2::zeros((split.train.len(), split.valid.len()));
    for (i, &r) in split.train.iter().enumerate() {
        let a = ds.row(r);
        for (v, &s) in split.valid.iter().enumerate() {
            let b = ds.row(s);
            d[[i, v]] = a
                .iter()
                .zip(b.iter())
                .map(|(p, q)| (p - q) * (p - q))
                .sum::<f64>()
                .sqrt();
        }
    }
    Ok(d)
}

#[derive(Debug, Clone)]
pub struct OTProblem {
    pub cost: Array2<f64>,
    pub mu: Array1<f64>,
    pub nu: Array1<f64>,
    pub epsilon: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl OTProblem {
    /// Uniform weights on both sides.
    pub fn uniform(cost: Array2<f64>, epsilon: f64, max_iters: usize, tol: f64) -> Self {
        let (m, n) = cost.dim();
        Self {
            mu: Array1::from_elem(m, 1.0 / m as f64),
            nu: Array1::from_elem(n, 1.0 / n as f64),
            cost,
            epsilon,
            max_iters,
            tol,
        }
    }

    fn validate(&self) -> Result<()> {
        let (m, n) = self.cost.dim();
        if m == 0 || n == 0 {
            return Err(invalid("transport problem needs non-empty measures"));
        }
        if self.mu.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: self.mu.len(),
            });
        }
        if self.nu.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: self.nu.len(),
            });
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(invalid(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.cost.iter().any(|&c| !(c.is_finite() && c >= 0.0)) {
            return Err(invalid("cost entries must be finite and >= 0"));
        }
        for w in [&self.mu, &self.nu] {
            if w.iter().any(|&x| !(x > 0.0 && x.is_finite())) || (w.sum() - 1.0).abs() > 1e-9 {
                return Err(invalid("marginal weights must be positive and sum to 1"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DualPotentials {
    pub h: Array1<f64>,
    pub g: Array1<f64>,
    pub marginal_err: f64,
    pub converged: bool,
    pub iterations: usize,
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Log-domain Sinkhorn iterations; potentials are shifted so `mean(h) = 0`.
///
/// The plan is `P_iv = exp((h_i + g_v - C_iv) / eps)`. Iteration stops when
/// the row marginals (the columns match exactly after each `g` update) are
/// within `tol`; otherwise the best iterate is returned unconverged.
pub fn sinkhorn_duals(p: &OTProblem) -> Result<DualPotentials> {
    p.validate()?;
    let (m, n) = p.cost.dim();
    let eps = p.epsilon;
    let log_mu = p.mu.mapv(f64::ln);
    let log_nu = p.nu.mapv(f64::ln);
    let mut h = Array1::<f64>::zeros(m);
    let mut g = Array1::<f64>::zeros(n);
    let mut best: Option<(f64, Array1<f64>, Array1<f64>)> = None;
    let mut iterations = 0;

    for it in 1..=p.max_iters.max(1) {
        iterations = it;
        for i in 0..m {
            let row = p.cost.row(i);
            h[i] = eps * log_mu[i] - eps * log_sum_exp((0..n).map(|v| (g[v] - row[v]) / eps));
        }
        for v in 0..n {
            let col = p.cost.column(v);
            g[v] = eps * log_nu[v] - eps * log_sum_exp((0..m).map(|i| (h[i] - col[i]) / eps));
        }
        let mut err: f64 = 0.0;
        for i in 0..m {
            let row = p.cost.row(i);
            let mass: f64 = (0..n).map(|v| ((h[i] + g[v] - row[v]) / eps).exp()).sum();
            err = err.max((mass - p.mu[i]).abs());
        }
        if best.as_ref().is_none_or(|b| err < b.0) {
            best = Some((err, h.clone(), g.clone()));
        }
        if err < p.tol {
            break;
        }
    }
    let (marginal_err, mut h, mut g) = best.expect("at least one iteration runs");
    let shift = h.sum() / m as f64;
    h.mapv_inplace(|x| x - shift);
    g.mapv_inplace(|x| x + shift);
    Ok(DualPotentials {
        h,
        g,
        converged: marginal_err < p.tol,
        marginal_err,
        iterations,
    })
}

/// Row and column sums of the plan implied by `duals`.
pub fn plan_marginals(p: &OTProblem, duals: &DualPotentials) -> (Array1<f64>, Array1<f64>) {
    let (m, n) = p.cost.dim();
    let mut rows = Array1::zeros(m);
    let mut cols = Array1::zeros(n);
    for i in 0..m {
        for v in 0..n {
            let x = ((duals.h[i] + duals.g[v] - p.cost[[i, v]]) / p.epsilon).exp();
            rows[i] += x;
            cols[v] += x;
        }
    }
    (rows, cols)
}
