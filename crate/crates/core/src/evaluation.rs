//! Downstream tasks that score a value vector: noisy-point detection and
//! point removal/addition curves.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::rng;
use crate::utility::Utility;

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    pub low_cluster: Vec<usize>,
    pub f1: f64,
    /// Means of the low and high clusters.
    pub cluster_means: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Removal,
    Addition,
}

impl Direction {
    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::Removal => "removal",
            Direction::Addition => "addition",
        }
    }
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "removal" => Ok(Direction::Removal),
            "addition" => Ok(Direction::Addition),
            other => Err(invalid(format!("unknown curve direction {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveResult {
    pub direction: Direction,
    /// `(k, performance)` with `k` points removed or added.
    pub grid: Vec<(usize, f64)>,
    /// Mean performance over the grid points with `k >= step`.
    pub summary: f64,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Splits `values` into a low and a high cluster by one-dimensional 2-means
/// (k-means++ seeding, then Lloyd iterations). Returns the sorted positions of
/// each cluster, low first.
pub fn two_means_split(values: &[f64], seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let m = values.len();
    if m < 2 {
        return Err(invalid("two_means_split needs at least two values"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    if values.iter().all(|&v| v == values[0]) {
        return Err(Error::Degenerate("all values are identical".into()));
    }
    let mut r = rng::stream(seed, "kmeans", 0);
    let first = values[r.random_range(0..m)];
    let d2: Vec<f64> = values.iter().map(|v| (v - first) * (v - first)).collect();
    let total: f64 = d2.iter().sum();
    let mut target = r.random::<f64>() * total;
    let mut second = values[m - 1];
    for (i, &w) in d2.iter().enumerate() {
        if w > 0.0 && target < w {
            second = values[i];
            break;
        }
        target -= w;
    }
    if second == first {
        // rounding pushed the draw past the last positive weight
        second = *values
            .iter()
            .zip(&d2)
            .rev()
            .find(|(_, &w)| w > 0.0)
            .expect("values differ")
            .0;
    }
    let (mut lo, mut hi) = if first < second {
        (first, second)
    } else {
        (second, first)
    };
    let mut assign = vec![false; m];
    for iter in 0..100 {
        let next: Vec<bool> = values
            .iter()
            .map(|&v| (v - hi).abs() < (v - lo).abs())
            .collect();
        let changed = next != assign;
        assign = next;
        let high_n = assign.iter().filter(|&&a| a).count();
        if high_n > 0 && high_n < m {
            lo = mean(
                values
                    .iter()
                    .zip(&assign)
                    .filter(|(_, &a)| !a)
                    .map(|(v, _)| *v),
            );
            hi = mean(
                values
                    .iter()
                    .zip(&assign)
                    .filter(|(_, &a)| a)
                    .map(|(v, _)| *v),
            );
        }
        if !changed && iter > 0 {
            break;
        }
    }
    let low = (0..m).filter(|&i| !assign[i]).collect();
    let high = (0..m).filter(|&i| assign[i]).collect();
    Ok((low, high))
}

/// `2 |low ∩ truth| / (|low| + |truth|)`.
pub fn detection_f1(low: &[usize], truth: &[usize]) -> Result<f64> {
    if truth.is_empty() {
        return Err(invalid(
            "detection needs a non-empty set of corrupted points",
        ));
    }
    let truth: BTreeSet<usize> = truth.iter().copied().collect();
    let low_set: BTreeSet<usize> = low.iter().copied().collect();
    let hits = low_set.intersection(&truth).count();
    Ok(2.0 * hits as f64 / (low_set.len() + truth.len()) as f64)
}

/// Clusters the values and scores the low cluster against the corrupted
/// training positions.
pub fn detect(values: &[f64], truth: &[usize], seed: u64) -> Result<DetectionResult> {
    let (low, high) = two_means_split(values, seed)?;
    let f1 = detection_f1(&low, truth)?;
    let low_mean = mean(low.iter().map(|&i| values[i]));
    let high_mean = mean(high.iter().map(|&i| values[i]));
    Ok(DetectionResult {
        low_cluster: low,
        f1,
        cluster_means: (low_mean, high_mean),
    })
}

/// Positions sorted by value, ascending or descending; ties by lower position.
pub fn value_order(values: &[f64], descending: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        let c = values[a].total_cmp(&values[b]);
        (if descending { c.reverse() } else { c }).then(a.cmp(&b))
    });
    order
}

/// Grid `0, step, 2 step, ..., <= floor(0.2 m)`.
pub fn curve_grid(m: usize, step: usize) -> Result<Vec<usize>> {
    if step == 0 {
        return Err(invalid("curve step must be >= 1"));
    }
    let k_max = m / 5;
    if k_max < step {
        return Err(invalid(format!(
            "curve needs floor(0.2 m) = {k_max} >= step = {step}"
        )));
    }
    Ok((0..=k_max).step_by(step).collect())
}

/// Subset refit at grid point `k` for the given direction.
pub fn curve_subset(values: &[f64], direction: Direction, k: usize) -> Vec<usize> {
    let mut s = match direction {
        Direction::Removal => value_order(values, true)[k..].to_vec(),
        Direction::Addition => value_order(values, false)[..k].to_vec(),
    };
    s.sort_unstable();
    s
}

fn curve<U: Utility + ?Sized>(
    values: &[f64],
    u_test: &U,
    step: usize,
    direction: Direction,
) -> Result<CurveResult> {
    let m = values.len();
    if m != u_test.n_players() {
        return Err(Error::DimensionMismatch {
            expected: u_test.n_players(),
            got: m,
        });
    }
    if m < 10 {
        return Err(invalid("curves need at least 10 training points"));
    }
    let ks = curve_grid(m, step)?;
    let grid: Vec<(usize, f64)> = ks
        .par_iter()
        .map(|&k| (k, u_test.eval(&curve_subset(values, direction, k))))
        .collect();
    let summary = mean(grid.iter().filter(|(k, _)| *k >= step).map(|(_, p)| *p));
    Ok(CurveResult {
        direction,
        grid,
        summary,
    })
}

/// Test performance after removing the `k` highest-valued points.
pub fn point_removal_curve<U: Utility + ?Sized>(
    values: &[f64],
    u_test: &U,
    step: usize,
) -> Result<CurveResult> {
    curve(values, u_test, step, Direction::Removal)
}

/// Test performance of the `k` lowest-valued points alone.
pub fn point_addition_curve<U: Utility + ?Sized>(
    values: &[f64],
    u_test: &U,
    step: usize,
) -> Result<CurveResult> {
    curve(values, u_test, step, Direction::Addition)
}

/// Runs `f` and returns its output with the elapsed wall time in seconds.
pub fn measure_runtime<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::utility::FnUtility;

    #[test]
    fn two_means_examples() {
        let (low, high) = two_means_split(&[0.0, 0.1, 0.9, 1.0], 0).unwrap();
        assert_eq!((low, high), (vec![0, 1], vec![2, 3]));
        for seed in 0..20 {
            assert_eq!(
                two_means_split(&[0.0, 0.0, 1.0], seed).unwrap().0,
                vec![0, 1]
            );
        }
        assert!(matches!(
            two_means_split(&[5.0, 5.0, 5.0], 0),
            Err(Error::Degenerate(_))
        ));
        assert!(two_means_split(&[1.0], 0).is_err());
    }

    #[test]
    fn f1_examples() {
        assert!((detection_f1(&[1, 2, 3], &[2, 3, 4]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(detection_f1(&[4, 2], &[2, 4]).unwrap(), 1.0);
        assert_eq!(detection_f1(&[0, 1], &[2, 3]).unwrap(), 0.0);
        assert!(detection_f1(&[0], &[]).is_err());
    }

    #[test]
    fn grid_and_subsets() {
        assert_eq!(curve_grid(100, 5).unwrap(), vec![0, 5, 10, 15, 20]);
        assert_eq!(curve_grid(54, 5).unwrap(), vec![0, 5, 10]);
        assert!(curve_grid(20, 5).is_err());
        let v = [0.3, 0.9, 0.1, 0.9];
        assert_eq!(curve_subset(&v, Direction::Removal, 2), vec![0, 2]);
        assert_eq!(curve_subset(&v, Direction::Addition, 2), vec![0, 2]);
        assert_eq!(curve_subset(&v, Direction::Removal, 1), vec![0, 2, 3]);
    }

    #[test]
    fn curve_summary_and_anchor() {
        let u = FnUtility::new(50, |s: &[usize]| {
            s.iter().map(|&i| i as f64).sum::<f64>() / 1000.0
        });
        let values: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let c = point_removal_curve(&values, &u, 5).unwrap();
        assert_eq!(c.grid[0], (0, u.eval(&(0..50).collect::<Vec<_>>())));
        let tail: Vec<f64> = c.grid[1..].iter().map(|g| g.1).collect();
        assert_eq!(c.summary, tail.iter().sum::<f64>() / tail.len() as f64);
        let a = point_addition_curve(&values, &u, 5).unwrap();
        assert_eq!(a.grid[0].1, 0.0);
    }

    #[test]
    fn runtime_positive() {
        let (v, t) = measure_runtime(|| (0..1000).map(|x| x as f64).sum::<f64>());
        assert_eq!(v, 499500.0);
        assert!(t > 0.0);
    }
}
