//! Marginal-contribution estimation by truncated Monte Carlo permutation
//! sampling, with a Gelman-Rubin stopping rule across independent chains.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::rng::{self, StreamRng};
use crate::utility::Utility;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceConfig {
    pub gr_threshold: f64,
    pub min_permutations: usize,
    pub max_permutations: usize,
    pub trunc_tol: f64,
    pub trunc_patience: usize,
    pub n_chains: usize,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            gr_threshold: 1.05,
            min_permutations: 300,
            max_permutations: 10_000,
            trunc_tol: 1e-8,
            trunc_patience: 10,
            n_chains: 10,
        }
    }
}

impl ConvergenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_permutations > self.max_permutations {
            return Err(invalid(format!(
                "min_permutations {} exceeds max_permutations {}",
                self.min_permutations, self.max_permutations
            )));
        }
        if self.max_permutations == 0 {
            return Err(invalid("max_permutations must be >= 1"));
        }
        if self.n_chains < 2 {
            return Err(invalid("n_chains must be >= 2"));
        }
        if !(self.gr_threshold > 0.0 && self.trunc_tol > 0.0) {
            return Err(invalid("convergence thresholds must be positive"));
        }
        if self.trunc_patience == 0 {
            return Err(invalid("trunc_patience must be >= 1"));
        }
        Ok(())
    }
}

/// Result of walking one permutation.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanOutcome {
    /// `samples[l]` is the marginal of `perm[l]` joining the first `l` points.
    pub samples: Vec<f64>,
    /// Number of prefixes evaluated (positions past this got sample 0).
    pub scanned: usize,
    pub utility_calls: u64,
}

/// Walks `perm`, evaluating the utility on each prefix until the relative
/// change has been below `trunc_tol` for `trunc_patience` positions.
pub fn scan_permutation<U: Utility + ?Sized>(
    perm: &[usize],
    u: &U,
    cfg: &ConvergenceConfig,
) -> Result<ScanOutcome> {
    check_permutation(perm, u.n_players())?;
    let empty = u.eval(&[]);
    let mut out = scan_from(perm, u, empty, cfg);
    out.utility_calls += 1;
    Ok(out)
}

fn check_permutation(perm: &[usize], m: usize) -> Result<()> {
    if perm.len() != m {
        return Err(invalid(format!(
            "permutation has length {} but the game has {m} players",
            perm.len()
        )));
    }
    let mut seen = vec![false; m];
    for &p in perm {
        if p >= m || seen[p] {
            return Err(invalid("input is not a permutation"));
        }
        seen[p] = true;
    }
    Ok(())
}

fn scan_from<U: Utility + ?Sized>(
    perm: &[usize],
    u: &U,
    empty: f64,
    cfg: &ConvergenceConfig,
) -> ScanOutcome {
    let m = perm.len();
    let mut samples = vec![0.0; m];
    let mut prev = empty;
    let mut calls = 0;
    let mut flat = 0;
    let mut scanned = m;
    for l in 1..=m {
        let cur = u.eval(&perm[..l]);
        calls += 1;
        samples[l - 1] = cur - prev;
        // relative change between prefixes l-1 and l, counted from the first
        // non-empty prefix on
        if l >= 2 && prev != 0.0 && ((cur - prev) / prev).abs() <= cfg.trunc_tol {
            flat += 1;
            if flat >= cfg.trunc_patience {
                scanned = l;
                break;
            }
        }
        prev = cur;
    }
    ScanOutcome {
        samples,
        scanned,
        utility_calls: calls,
    }
}

/// Running count, mean and sum of squared deviations.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }
}

fn rhat_from_moments(chains: &[Moments]) -> f64 {
    let l = chains[0].count as f64;
    let k = chains.len() as f64;
    let w = chains.iter().map(Moments::variance).sum::<f64>() / k;
    let mut means = Moments::default();
    chains.iter().for_each(|c| means.push(c.mean));
    let b = l * means.variance();
    if w == 0.0 {
        return if b == 0.0 { 1.0 } else { f64::INFINITY };
    }
    ((l - 1.0) / l + b / (l * w)).sqrt()
}

/// Maximum over points of the potential scale reduction factor.
///
/// Each chain is an `l x n_points` matrix: row `t` holds the chain's `t`-th
/// estimate for every point.
pub fn gelman_rubin(chains: &[Array2<f64>]) -> Result<f64> {
    if chains.len() < 2 {
        return Err(invalid("gelman_rubin needs at least two chains"));
    }
    let (l, points) = chains[0].dim();
    if l < 2 {
        return Err(invalid("gelman_rubin needs chains of length >= 2"));
    }
    if let Some(c) = chains.iter().find(|c| c.dim() != (l, points)) {
        return Err(Error::DimensionMismatch {
            expected: l,
            got: c.nrows(),
        });
    }
    let mut worst: f64 = 0.0;
    for i in 0..points {
        let moments: Vec<Moments> = chains
            .iter()
            .map(|c| {
                let mut mo = Moments::default();
                c.column(i).iter().for_each(|&x| mo.push(x));
                mo
            })
            .collect();
        worst = worst.max(rhat_from_moments(&moments));
    }
    Ok(worst)
}

/// Per-point, per-cardinality sums and counts of marginal samples, plus the
/// per-chain moments used for the stopping rule.
#[derive(Debug, Clone)]
pub struct MarginalAccumulator {
    m: usize,
    sums: Vec<f64>,
    counts: Vec<u64>,
    chains: Vec<Vec<Moments>>,
    pub permutations_used: u64,
    pub utility_calls: u64,
    pub converged: bool,
    pub rhat: f64,
}

impl MarginalAccumulator {
    pub fn new(m: usize, n_chains: usize) -> Self {
        Self {
            m,
            sums: vec![0.0; m * m],
            counts: vec![0; m * m],
            chains: vec![vec![Moments::default(); m]; n_chains],
            permutations_used: 0,
            utility_calls: 0,
            converged: false,
            rhat: f64::INFINITY,
        }
    }

    pub fn n_points(&self) -> usize {
        self.m
    }

    /// Records one scanned permutation drawn by `chain`.
    pub fn add_permutation(&mut self, chain: usize, perm: &[usize], scan: &ScanOutcome) {
        for (l, (&i, &s)) in perm.iter().zip(&scan.samples).enumerate() {
            let cell = i * self.m + l;
            self.sums[cell] += s;
            self.counts[cell] += 1;
            self.chains[chain][i].push(s);
        }
        self.permutations_used += 1;
        self.utility_calls += scan.utility_calls;
    }

    /// Stores an exact marginal `value` for point `i` at cardinality `j` (1-based).
    pub fn set_exact(&mut self, i: usize, j: usize, value: f64) {
        let cell = i * self.m + (j - 1);
        self.sums[cell] = value;
        self.counts[cell] = 1;
    }

    pub fn sum(&self, i: usize, j: usize) -> f64 {
        self.sums[i * self.m + (j - 1)]
    }

    pub fn count(&self, i: usize, j: usize) -> u64 {
        self.counts[i * self.m + (j - 1)]
    }

    /// Mean marginal of point `i` at cardinality `j` (1-based), if sampled.
    pub fn marginal(&self, i: usize, j: usize) -> Option<f64> {
        let c = self.count(i, j);
        (c > 0).then(|| self.sum(i, j) / c as f64)
    }

    pub fn samples_for(&self, i: usize) -> u64 {
        self.counts[i * self.m..(i + 1) * self.m].iter().sum()
    }

    /// Mean over every sample observed for each point.
    pub fn point_means(&self) -> Vec<f64> {
        (0..self.m)
            .map(|i| {
                let s: f64 = self.sums[i * self.m..(i + 1) * self.m].iter().sum();
                s / self.samples_for(i) as f64
            })
            .collect()
    }

    pub fn chain_moments(&self, chain: usize) -> &[Moments] {
        &self.chains[chain]
    }

    /// Gelman-Rubin statistic over the per-chain marginal samples.
    pub fn current_rhat(&self) -> f64 {
        let l = self.chains[0].first().map_or(0, |m| m.count);
        if l < 2 || self.chains.iter().any(|c| c[0].count != l) {
            return f64::INFINITY;
        }
        let mut worst: f64 = 0.0;
        let mut per_point = Vec::with_capacity(self.chains.len());
        for i in 0..self.m {
            per_point.clear();
            per_point.extend(self.chains.iter().map(|c| c[i]));
            worst = worst.max(rhat_from_moments(&per_point));
        }
        worst
    }
}

/// Truncated Monte Carlo estimation of every point's marginals.
///
/// Permutations go round-robin to `n_chains` chains, each with its own random
/// stream; the stopping rule is checked after every full round.
pub fn run_tmc<U: Utility + ?Sized>(
    u: &U,
    cfg: &ConvergenceConfig,
    seed: u64,
) -> Result<MarginalAccumulator> {
    cfg.validate()?;
    let m = u.n_players();
    if m == 0 {
        return Err(invalid(
            "marginal estimation needs a non-empty training split",
        ));
    }
    let empty = u.eval(&[]);
    let mut acc = MarginalAccumulator::new(m, cfg.n_chains);
    acc.utility_calls = 1;
    let mut rngs: Vec<StreamRng> = (0..cfg.n_chains)
        .map(|c| rng::stream(seed, "tmc-chain", c as u64))
        .collect();

    while (acc.permutations_used as usize) < cfg.max_permutations {
        let remaining = cfg.max_permutations - acc.permutations_used as usize;
        let active = remaining.min(cfg.n_chains);
        let round: Vec<(Vec<usize>, ScanOutcome)> = rngs[..active]
            .par_iter_mut()
            .map(|r| {
                let mut perm: Vec<usize> = (0..m).collect();
                perm.shuffle(r);
                let scan = scan_from(&perm, u, empty, cfg);
                (perm, scan)
            })
            .collect();
        for (chain, (perm, scan)) in round.iter().enumerate() {
            acc.add_permutation(chain, perm, scan);
        }
        if active == cfg.n_chains && acc.permutations_used as usize >= cfg.min_permutations {
            acc.rhat = acc.current_rhat();
            if acc.rhat < cfg.gr_threshold {
                acc.converged = true;
                break;
            }
        }
    }
    Ok(acc)
}

/// Exact marginals by enumerating all `2^m` subsets (small games only).
pub fn exact_marginals<U: Utility + ?Sized>(u: &U) -> Result<MarginalAccumulator> {
    let m = u.n_players();
    if m == 0 || m > 20 {
        return Err(invalid(format!(
            "exact enumeration supports 1..=20 players, got {m}"
        )));
    }
    let n_sets = 1usize << m;
    let values: Vec<f64> = (0..n_sets)
        .into_par_iter()
        .map(|mask| {
            let subset: Vec<usize> = (0..m).filter(|&i| mask >> i & 1 == 1).collect();
            u.eval(&subset)
        })
        .collect();

    // binom[n][k]
    let mut binom = vec![vec![0.0f64; m + 1]; m + 1];
    for n in 0..=m {
        binom[n][0] = 1.0;
        for k in 1..=n {
            binom[n][k] = binom[n - 1][k - 1] + if k < n { binom[n - 1][k] } else { 0.0 };
        }
    }
    let mut acc = MarginalAccumulator::new(m, 2);
    let mut sums = vec![0.0; m * m];
    for mask in 0..n_sets {
        let size = (mask as u64).count_ones() as usize;
        for i in 0..m {
            if mask >> i & 1 == 0 {
                sums[i * m + size] += values[mask | (1 << i)] - values[mask];
            }
        }
    }
    for i in 0..m {
        for j in 1..=m {
            acc.set_exact(i, j, sums[i * m + (j - 1)] / binom[m - 1][j - 1]);
        }
    }
    acc.utility_calls = n_sets as u64;
    acc.converged = true;
    acc.rhat = 1.0;
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::utility::FnUtility;
    use ndarray::array;

    fn cfg() -> ConvergenceConfig {
        ConvergenceConfig::default()
    }

    #[test]
    fn additive_game_scans_fully() {
        let u = FnUtility::new(5, |s: &[usize]| s.len() as f64 / 5.0);
        let out = scan_permutation(&[3, 1, 4, 0, 2], &u, &cfg()).unwrap();
        assert_eq!(out.scanned, 5);
        for s in out.samples {
            assert!((s - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_game_truncates_after_prefix_eleven() {
        let u = FnUtility::new(20, |_: &[usize]| 0.7);
        let perm: Vec<usize> = (0..20).collect();
        let out = scan_permutation(&perm, &u, &cfg()).unwrap();
        assert_eq!(out.scanned, 11);
        assert_eq!(out.utility_calls, 12);
        assert!(out.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn zero_utility_never_truncates() {
        let u = FnUtility::new(30, |_: &[usize]| 0.0);
        let perm: Vec<usize> = (0..30).collect();
        assert_eq!(scan_permutation(&perm, &u, &cfg()).unwrap().scanned, 30);
    }

    #[test]
    fn single_player_scan() {
        let u = FnUtility::new(1, |s: &[usize]| if s.is_empty() { 0.25 } else { 0.75 });
        let out = scan_permutation(&[0], &u, &cfg()).unwrap();
        assert_eq!(out.samples, vec![0.5]);
    }

    #[test]
    fn scan_rejects_non_permutations() {
        let u = FnUtility::new(3, |_: &[usize]| 0.0);
        assert!(scan_permutation(&[0, 0, 1], &u, &cfg()).is_err());
        assert!(scan_permutation(&[0, 1], &u, &cfg()).is_err());
        assert!(scan_permutation(&[0, 1, 3], &u, &cfg()).is_err());
    }

    #[test]
    fn gelman_rubin_examples() {
        let c = array![[1.0], [2.0], [3.0]];
        let r = gelman_rubin(&[c.clone(), c]).unwrap();
        assert!((r - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);

        let k = array![[0.4, 0.4], [0.4, 0.4]];
        assert_eq!(gelman_rubin(&[k.clone(), k.clone(), k]).unwrap(), 1.0);

        let r = gelman_rubin(&[array![[0.0], [0.0]], array![[1.0], [1.0]]]).unwrap();
        assert!(r.is_infinite());

        assert!(gelman_rubin(&[array![[1.0]], array![[1.0]]]).is_err());
        assert!(gelman_rubin(&[array![[1.0], [2.0]], array![[1.0], [2.0], [3.0]]]).is_err());
    }

    #[test]
    fn moments_match_direct_computation() {
        let xs = [0.5, -1.0, 2.0, 7.5, 0.0];
        let mut mo = Moments::default();
        xs.iter().for_each(|&x| mo.push(x));
        let mean = xs.iter().sum::<f64>() / 5.0;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 4.0;
        assert!((mo.mean - mean).abs() < 1e-14);
        assert!((mo.variance() - var).abs() < 1e-13);
    }

    #[test]
    fn additive_game_converges_at_minimum() {
        let u = FnUtility::new(4, |s: &[usize]| s.len() as f64 / 4.0);
        let acc = run_tmc(&u, &cfg(), 11).unwrap();
        assert_eq!(acc.permutations_used, 300);
        assert!(acc.converged);
        for i in 0..4 {
            for j in 1..=4 {
                assert_eq!(acc.marginal(i, j).unwrap(), 0.25);
            }
        }
    }

    #[test]
    fn tmc_respects_max_permutations() {
        let u = FnUtility::new(
            3,
            |s: &[usize]| if s.contains(&0) { 1.0 } else { 0.0 } + 0.01 * s.len() as f64,
        );
        let c = ConvergenceConfig {
            min_permutations: 2,
            max_permutations: 25,
            gr_threshold: 1e-9,
            ..cfg()
        };
        let acc = run_tmc(&u, &c, 0).unwrap();
        assert_eq!(acc.permutations_used, 25);
        assert!(!acc.converged);
        for i in 0..3 {
            assert_eq!(acc.samples_for(i), 25);
        }
    }

    #[test]
    fn exact_marginals_of_glove_game() {
        // U = 1 iff the subset holds player 0 and at least one of {1, 2}
        let u = FnUtility::new(3, |s: &[usize]| {
            f64::from(u8::from(
                s.contains(&0) && (s.contains(&1) || s.contains(&2)),
            ))
        });
        let acc = exact_marginals(&u).unwrap();
        let phi = acc.point_means();
        assert!((phi[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((phi[1] - 1.0 / 6.0).abs() < 1e-12);
        assert!((phi[2] - 1.0 / 6.0).abs() < 1e-12);
    }
}
