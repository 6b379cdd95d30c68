//! LASSO by cyclic coordinate descent, with cross-validated penalty choice.
//!
//! The objective is `(1 / 2n) |y - X b|^2 + lambda |b|_1` without an intercept;
//! callers centre their data first.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};

const MAX_SWEEPS: usize = 10_000;
const TOL: f64 = 1e-9;

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Smallest penalty at which every coefficient is zero.
pub fn lambda_max(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>) -> f64 {
    let n = x.nrows() as f64;
    x.t().dot(&y).iter().fold(0.0f64, |acc, v| acc.max(v.abs())) / n
}

/// `count` penalties log-spaced from `hi` down to `hi * ratio`.
pub fn log_grid(hi: f64, ratio: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![hi];
    }
    let (a, b) = (hi.ln(), (hi * ratio).ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Minimises the objective at `lambda`, starting from `beta` (warm start).
pub fn coordinate_descent(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    lambda: f64,
    beta: &mut Array1<f64>,
) {
    let (n, p) = x.dim();
    let nf = n as f64;
    let xt = x.t().to_owned();
    let col_sq: Vec<f64> = (0..p).map(|j| xt.row(j).dot(&xt.row(j)) / nf).collect();
    let mut residual = &y - &x.dot(beta);
    for _ in 0..MAX_SWEEPS {
        let mut max_change: f64 = 0.0;
        let mut max_coef: f64 = 0.0;
        for j in 0..p {
            if col_sq[j] == 0.0 {
                beta[j] = 0.0;
                continue;
            }
            let col = xt.row(j);
            let old = beta[j];
            let rho = col.dot(&residual) / nf + col_sq[j] * old;
            let new = soft_threshold(rho, lambda) / col_sq[j];
            if new != old {
                residual.scaled_add(old - new, &col);
                beta[j] = new;
            }
            max_change = max_change.max((new - old).abs());
            max_coef = max_coef.max(new.abs());
        }
        if max_change <= TOL * max_coef.max(1e-12) || max_change == 0.0 {
            break;
        }
    }
}

/// Coefficients along a decreasing penalty grid, warm-started.
pub fn path(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, lambdas: &[f64]) -> Vec<Array1<f64>> {
    let mut beta = Array1::zeros(x.ncols());
    lambdas
        .iter()
        .map(|&l| {
            coordinate_descent(x, y, l, &mut beta);
            beta.clone()
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct CvFit {
    pub lambdas: Vec<f64>,
    pub cv_mean: Vec<f64>,
    pub cv_se: Vec<f64>,
    pub chosen: usize,
    pub coef: Array1<f64>,
}

/// Chooses the penalty by `folds`-fold cross-validation on contiguous folds
/// using the one-standard-error rule, then refits on all rows.
pub fn cross_validated(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    n_lambdas: usize,
    ratio: f64,
    folds: usize,
) -> CvFit {
    let (n, p) = x.dim();
    let hi = lambda_max(x, y);
    if hi == 0.0 {
        return CvFit {
            lambdas: vec![0.0],
            cv_mean: vec![0.0],
            cv_se: vec![0.0],
            chosen: 0,
            coef: Array1::zeros(p),
        };
    }
    let lambdas = log_grid(hi, ratio, n_lambdas);
    let mut errors = Array2::<f64>::zeros((folds, lambdas.len()));
    for f in 0..folds {
        let (lo, up) = (f * n / folds, (f + 1) * n / folds);
        let train_rows: Vec<usize> = (0..lo).chain(up..n).collect();
        let xt = x.select(ndarray::Axis(0), &train_rows);
        let yt = y.select(ndarray::Axis(0), &train_rows);
        let (xh, yh) = (x.slice(s![lo..up, ..]), y.slice(s![lo..up]));
        for (l, beta) in path(xt.view(), yt.view(), &lambdas).iter().enumerate() {
            let r = &yh - &xh.dot(beta);
            errors[[f, l]] = r.dot(&r) / (up - lo).max(1) as f64;
        }
    }
    let kf = folds as f64;
    let cv_mean: Vec<f64> = (0..lambdas.len())
        .map(|l| errors.column(l).sum() / kf)
        .collect();
    let cv_se: Vec<f64> = (0..lambdas.len())
        .map(|l| {
            let mean = cv_mean[l];
            let var = errors
                .column(l)
                .iter()
                .map(|e| (e - mean) * (e - mean))
                .sum::<f64>()
                / (kf - 1.0).max(1.0);
            (var / kf).sqrt()
        })
        .collect();
    let best = (0..lambdas.len()).fold(0, |b, l| if cv_mean[l] < cv_mean[b] { l } else { b });
    let limit = cv_mean[best] + cv_se[best];
    let chosen = (0..=best).find(|&l| cv_mean[l] <= limit).unwrap_or(best);
    let coef = path(x, y, &lambdas[..=chosen])
        .pop()
        .expect("grid is non-empty");
    CvFit {
        lambdas,
        cv_mean,
        cv_se,
        chosen,
        coef,
    }
}
