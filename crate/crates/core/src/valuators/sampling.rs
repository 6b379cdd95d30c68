//! Contrast estimators: mean utility of sampled subsets that contain a point
//! minus the mean over subsets that do not.

use std::time::Instant;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::rng;
use crate::utility::Utility;

use super::{ValueMeta, ValueVector};

fn contrast<U: Utility + ?Sized>(u: &U, subsets: &[Vec<usize>], name: &str) -> ValueVector {
    let m = u.n_players();
    let utilities: Vec<f64> = subsets.par_iter().map(|s| u.eval(s)).collect();
    let mut sum_in = vec![0.0; m];
    let mut n_in = vec![0u64; m];
    let total: f64 = utilities.iter().sum();
    for (s, &val) in subsets.iter().zip(&utilities) {
        for &p in s {
            sum_in[p] += val;
            n_in[p] += 1;
        }
    }
    let n = subsets.len() as u64;
    let mut warnings = Vec::new();
    let values = (0..m)
        .map(|p| {
            let n_out = n - n_in[p];
            if n_in[p] == 0 || n_out == 0 {
                warnings.push(format!(
                    "point {p} was never {} a sampled subset; value set to 0",
                    if n_in[p] == 0 { "in" } else { "outside" }
                ));
                return 0.0;
            }
            sum_in[p] / n_in[p] as f64 - (total - sum_in[p]) / n_out as f64
        })
        .collect();
    let meta = ValueMeta {
        utility_calls: n,
        models: n,
        warnings,
        ..Default::default()
    };
    ValueVector::new(name, values, meta)
}

/// Banzhaf values by maximum sample reuse: every point joins each sampled
/// subset independently with probability 1/2.
pub fn data_banzhaf<U: Utility + ?Sized>(
    u: &U,
    n_subsets: usize,
    seed: u64,
) -> Result<ValueVector> {
    let start = Instant::now();
    if n_subsets < 2 {
        return Err(invalid("data_banzhaf needs n_subsets >= 2"));
    }
    let m = u.n_players();
    let mut r = rng::stream(seed, "msr", 0);
    let subsets: Vec<Vec<usize>> = (0..n_subsets)
        .map(|_| (0..m).filter(|_| r.random_bool(0.5)).collect())
        .collect();
    Ok(contrast(u, &subsets, "data_banzhaf").timed(start))
}

fn subset_size(m: usize) -> Result<usize> {
    let size = (7 * m) / 10;
    if m < 2 || size == 0 {
        return Err(invalid(format!(
            "influence needs a subset size floor(0.7 m) >= 1, got m = {m}"
        )));
    }
    Ok(size)
}

/// Influence by subset contrast over uniformly drawn subsets of size
/// `floor(0.7 m)`.
pub fn influence_subset<U: Utility + ?Sized>(
    u: &U,
    n_subsets: usize,
    seed: u64,
) -> Result<ValueVector> {
    let start = Instant::now();
    if n_subsets == 0 {
        return Err(invalid("influence_subset needs n_subsets >= 1"));
    }
    let m = u.n_players();
    let size = subset_size(m)?;
    let mut r = rng::stream(seed, "influence", 0);
    let subsets: Vec<Vec<usize>> = (0..n_subsets)
        .map(|_| {
            let mut s = index::sample(&mut r, m, size).into_vec();
            s.sort_unstable();
            s
        })
        .collect();
    Ok(contrast(u, &subsets, "influence_subset").timed(start))
}

/// The same contrast over every subset of size `floor(0.7 m)`.
pub fn influence_subset_exhaustive<U: Utility + ?Sized>(u: &U) -> Result<ValueVector> {
    let start = Instant::now();
    let m = u.n_players();
    let size = subset_size(m)?;
    if m > 24 {
        return Err(invalid(format!(
            "exhaustive influence supports m <= 24, got {m}"
        )));
    }
    let mut subsets = Vec::new();
    let mut current: Vec<usize> = (0..size).collect();
    loop {
        subsets.push(current.clone());
        // advance to the next combination in lexicographic order
        let Some(pos) = (0..size).rev().find(|&i| current[i] < m - size + i) else {
            break;
        };
        current[pos] += 1;
        for i in pos + 1..size {
            current[i] = current[i - 1] + 1;
        }
    }
    Ok(contrast(u, &subsets, "influence_subset").timed(start))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::utility::FnUtility;

    #[test]
    fn indicator_game_exhaustive() {
        let u = FnUtility::new(4, |s: &[usize]| f64::from(u8::from(s.contains(&0))));
        let v = influence_subset_exhaustive(&u).unwrap();
        assert_eq!(v.meta.utility_calls, 6);
        assert_eq!(v.values[0], 1.0);
        for &x in &v.values[1..] {
            assert!((x + 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_game_gives_zero() {
        let u = FnUtility::new(6, |_: &[usize]| 0.42);
        for v in [
            data_banzhaf(&u, 500, 1).unwrap(),
            influence_subset(&u, 500, 1).unwrap(),
        ] {
            assert!(v.values.iter().all(|x| x.abs() < 1e-12));
        }
    }

    #[test]
    fn empty_side_repaired_with_warning() {
        // m = 2 gives subsets of size 1: with one draw, one point is always in
        // and the other never
        let u = FnUtility::new(2, |s: &[usize]| s.len() as f64);
        let v = influence_subset(&u, 1, 0).unwrap();
        assert_eq!(v.meta.warnings.len(), 2);
        assert_eq!(v.values, vec![0.0, 0.0]);
    }

    #[test]
    fn rejects_bad_sizes() {
        let u = FnUtility::new(1, |_: &[usize]| 0.0);
        assert!(influence_subset(&u, 10, 0).is_err());
        assert!(data_banzhaf(&u, 1, 0).is_err());
    }

    #[test]
    fn banzhaf_deterministic() {
        let u = FnUtility::new(8, |s: &[usize]| (s.len() as f64).sqrt());
        assert_eq!(
            data_banzhaf(&u, 300, 9).unwrap().values,
            data_banzhaf(&u, 300, 9).unwrap().values
        );
    }
}
