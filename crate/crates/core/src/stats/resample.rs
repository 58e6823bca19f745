//! Permutation p-values and BCa bootstrap intervals.

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::rank::{binomial, doubled_midranks};
use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_PERMUTATIONS: usize = 50_000;
pub const DEFAULT_RESAMPLES: usize = 10_000;

/// Statistic whose two-sided permutation distribution is used.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PermStatistic {
    #[default]
    MeanDifference,
    U,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PermutationResult {
    pub p: f64,
    pub exact: bool,
    /// Label assignments evaluated (all of them when exact).
    pub evaluated: usize,
}

/// Two-sided permutation p of the difference in means.
pub fn permutation_p(x: &[f64], y: &[f64], n_perm: usize, seed: u64) -> Result<f64> {
    Ok(permutation_test(x, y, n_perm, seed, PermStatistic::MeanDifference)?.p)
}

/// Enumerates every split when `C(n1 + n2, n1) <= n_perm`; otherwise draws
/// `n_perm` random splits and returns `(1 + hits) / (n_perm + 1)`.
pub fn permutation_test(
    x: &[f64],
    y: &[f64],
    n_perm: usize,
    seed: u64,
    statistic: PermStatistic,
) -> Result<PermutationResult> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::InvalidInput("permutation test needs non-empty samples".into()));
    }
    if n_perm == 0 {
        return Err(Error::InvalidInput("n_perm must be >= 1".into()));
    }
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    if pooled.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("permutation test input contains non-finite values".into()));
    }
    let n1 = x.len();
    let n = pooled.len();

    // Both statistics reduce to |sum over the first group − its null centre|.
    let (scores, centre, tol) = match statistic {
        PermStatistic::MeanDifference => {
            let mean = pooled.iter().sum::<f64>() / n as f64;
            let c: Vec<f64> = pooled.iter().map(|v| v - mean).collect();
            let total: f64 = c.iter().sum();
            let scale: f64 = c.iter().map(|v| v.abs()).sum();
            (c, n1 as f64 * total / n as f64, 1e-12 * scale)
        }
        PermStatistic::U => {
            let (ranks, _) = doubled_midranks(&pooled);
            let s: Vec<f64> = ranks.into_iter().map(|d| d as f64).collect();
            // doubled rank sums are exact integers
            (s, (n1 * (n + 1)) as f64, 0.0)
        }
    };
    let dev = |sum: f64| (sum - centre).abs();
    let observed = dev(scores[..n1].iter().sum());
    let threshold = observed - tol;

    if binomial(n, n1) <= n_perm as f64 {
        let (mut hits, mut total) = (0usize, 0usize);
        let mut idx: Vec<usize> = (0..n1).collect();
        loop {
            total += 1;
            if dev(idx.iter().map(|&i| scores[i]).sum()) >= threshold {
                hits += 1;
            }
            if !next_combination(&mut idx, n) {
                break;
            }
        }
        return Ok(PermutationResult {
            p: hits as f64 / total as f64,
            exact: true,
            evaluated: total,
        });
    }

    let mut r = rng::rng(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    let mut hits = 0usize;
    for _ in 0..n_perm {
        let mut sum = 0.0;
        for i in 0..n1 {
            let j = r.random_range(i..n);
            perm.swap(i, j);
            sum += scores[perm[i]];
        }
        if dev(sum) >= threshold {
            hits += 1;
        }
    }
    Ok(PermutationResult {
        p: (1 + hits) as f64 / (n_perm + 1) as f64,
        exact: false,
        evaluated: n_perm,
    })
}

/// Advances `idx` to the next `k`-subset of `0..n` in lexicographic order.
pub(crate) fn next_combination(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if idx[i] < n - k + i {
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BcaInterval {
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
    pub z0: f64,
    pub acceleration: f64,
    /// Every replicate was identical, so the interval collapsed to a point.
    pub degenerate: bool,
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Type-7 (linear interpolation) quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Plain percentile interval of bootstrap replicates.
pub fn percentile_interval(replicates: &[f64], alpha: f64) -> (f64, f64) {
    let mut s = replicates.to_vec();
    s.sort_by(f64::total_cmp);
    (quantile_sorted(&s, alpha / 2.0), quantile_sorted(&s, 1.0 - alpha / 2.0))
}

/// BCa interval from precomputed replicates and leave-one-out statistics.
pub fn bca_from_replicates(estimate: f64, replicates: &[f64], jackknife: &[f64], alpha: f64) -> Result<BcaInterval> {
    if replicates.is_empty() {
        return Err(Error::InvalidInput("no bootstrap replicates".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if replicates.iter().any(|v| !v.is_finite()) || !estimate.is_finite() {
        return Err(Error::Numerical("non-finite bootstrap statistic".into()));
    }
    let mut sorted = replicates.to_vec();
    sorted.sort_by(f64::total_cmp);
    let b = sorted.len() as f64;
    if sorted[0] == sorted[sorted.len() - 1] {
        let c = sorted[0];
        return Ok(BcaInterval {
            estimate,
            lo: c,
            hi: c,
            z0: 0.0,
            acceleration: 0.0,
            degenerate: true,
        });
    }

    let normal = std_normal();
    let below = sorted.partition_point(|&v| v < estimate) as f64;
    let prop = (below / b).clamp(0.5 / b, 1.0 - 0.5 / b);
    let z0 = normal.inverse_cdf(prop);

    let acceleration = if jackknife.len() < 2 {
        0.0
    } else {
        let m = jackknife.iter().sum::<f64>() / jackknife.len() as f64;
        let (mut s2, mut s3) = (0.0, 0.0);
        for v in jackknife {
            let d = m - v;
            s2 += d * d;
            s3 += d * d * d;
        }
        if s2 > 0.0 {
            s3 / (6.0 * s2.powf(1.5))
        } else {
            0.0
        }
    };

    let level = |z: f64| {
        let t = z0 + z;
        let denom = 1.0 - acceleration * t;
        if denom <= 0.0 {
            // the adjustment has run past the edge of the distribution
            return if t > 0.0 { 1.0 } else { 0.0 };
        }
        normal.cdf(z0 + t / denom)
    };
    let za = normal.inverse_cdf(alpha / 2.0);
    let lo = quantile_sorted(&sorted, level(za));
    let hi = quantile_sorted(&sorted, level(-za));
    Ok(BcaInterval {
        estimate,
        lo: lo.min(hi),
        hi: hi.max(lo),
        z0,
        acceleration,
        degenerate: false,
    })
}

/// Stratified bias-corrected and accelerated bootstrap interval for a
/// two-sample statistic. Each replicate resamples both groups with
/// replacement; the acceleration uses the pooled jackknife (drop one
/// observation from whichever group it belongs to).
pub fn bca_ci<F>(x: &[f64], y: &[f64], statistic: F, n_boot: usize, alpha: f64, seed: u64) -> Result<BcaInterval>
where
    F: Fn(&[f64], &[f64]) -> f64,
{
    if x.len() < 2 || y.len() < 2 {
        return Err(Error::InvalidInput("BCa needs at least 2 observations per group".into()));
    }
    if n_boot == 0 {
        return Err(Error::InvalidInput("n_boot must be >= 1".into()));
    }
    let estimate = statistic(x, y);
    let mut r = rng::rng(seed);
    let mut bx = vec![0.0; x.len()];
    let mut by = vec![0.0; y.len()];
    let mut replicates = Vec::with_capacity(n_boot);
    for _ in 0..n_boot {
        for v in bx.iter_mut() {
            *v = x[r.random_range(0..x.len())];
        }
        for v in by.iter_mut() {
            *v = y[r.random_range(0..y.len())];
        }
        replicates.push(statistic(&bx, &by));
    }

    let mut jackknife = Vec::with_capacity(x.len() + y.len());
    let mut buf = Vec::with_capacity(x.len().max(y.len()));
    for i in 0..x.len() {
        buf.clear();
        buf.extend(x.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &v)| v));
        jackknife.push(statistic(&buf, y));
    }
    for i in 0..y.len() {
        buf.clear();
        buf.extend(y.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &v)| v));
        jackknife.push(statistic(x, &buf));
    }
    bca_from_replicates(estimate, &replicates, &jackknife, alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::rank::rank_biserial_r;

    #[test]
    fn permutation_examples() {
        assert_eq!(permutation_p(&[0.0, 0.0], &[0.0, 0.0], 1000, 1).unwrap(), 1.0);
        let p = permutation_p(&[1.0, 2.0], &[3.0, 4.0], 1000, 1).unwrap();
        assert!((p - 1.0 / 3.0).abs() < 1e-15);
        let r = permutation_test(&[1.0, 2.0], &[3.0, 4.0], 1000, 1, PermStatistic::U).unwrap();
        assert!(r.exact && (r.p - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn monte_carlo_floor() {
        let x: Vec<f64> = (0..30).map(f64::from).collect();
        let y: Vec<f64> = (100..130).map(f64::from).collect();
        let r = permutation_test(&x, &y, 999, 5, PermStatistic::MeanDifference).unwrap();
        assert!(!r.exact);
        assert_eq!(r.p, 1.0 / 1000.0);
    }

    #[test]
    fn combinations_enumerate_all() {
        let mut idx = vec![0, 1];
        let mut count = 1;
        while next_combination(&mut idx, 5) {
            count += 1;
        }
        assert_eq!(count, 10);
        assert_eq!(idx, vec![3, 4]);
    }

    #[test]
    fn quantiles() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&s, 0.0), 1.0);
        assert_eq!(quantile_sorted(&s, 1.0), 4.0);
        assert!((quantile_sorted(&s, 0.5) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn constant_statistic_is_flagged() {
        let ci = bca_ci(&[1.0, 2.0, 3.0], &[4.0, 5.0], |_, _| 0.25, 200, 0.05, 3).unwrap();
        assert!(ci.degenerate);
        assert_eq!((ci.lo, ci.hi), (0.25, 0.25));
    }

    #[test]
    fn symmetric_replicates_match_percentile() {
        // half strictly below the estimate and a symmetric jackknife: z0 = 0, a = 0
        let reps: Vec<f64> = (0..1000).map(|i| (i as f64 - 499.5) / 100.0).collect();
        let ci = bca_from_replicates(0.0, &reps, &[-1.0, 1.0, -2.0, 2.0], 0.05).unwrap();
        assert_eq!(ci.z0, 0.0);
        assert_eq!(ci.acceleration, 0.0);
        let (lo, hi) = percentile_interval(&reps, 0.05);
        // agreement to the spacing of the replicate grid
        assert!((ci.lo - lo).abs() < 0.01 && (ci.hi - hi).abs() < 0.01);
    }

    #[test]
    fn interval_contains_estimate_for_clear_effect() {
        let x: Vec<f64> = (0..20).map(|i| i as f64 + 5.0).collect();
        let y: Vec<f64> = (0..20).map(f64::from).collect();
        let ci = bca_ci(&x, &y, rank_biserial_r, 2000, 0.05, 9).unwrap();
        assert!(ci.lo <= ci.estimate && ci.estimate <= ci.hi);
        assert!(ci.lo > 0.0);
    }
}
