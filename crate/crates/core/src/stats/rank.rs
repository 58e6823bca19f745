//! Rank-based tests: Mann-Whitney U, rank-biserial r and Kruskal-Wallis H.

use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

/// Exact U distribution is used when `min(n1, n2)` is at most this...
pub const EXACT_MAX_MIN_N: usize = 8;
/// ...and `n1 * n2` is at most this.
pub const EXACT_MAX_PRODUCT: usize = 400;

/// Above this many label assignments the exact Kruskal-Wallis p refuses to run.
pub const KW_EXACT_LIMIT: f64 = 2e7;

fn check_sample(name: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::InvalidInput(format!("sample {name} is empty")));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(format!("sample {name} contains non-finite values")));
    }
    Ok(())
}

/// Doubled midranks (always integers) of `values` and the tie term `Σ(t³ − t)`.
pub(crate) fn doubled_midranks(values: &[f64]) -> (Vec<u64>, f64) {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0u64; n];
    let mut ties = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let t = (j - i) as u64;
        // midrank of positions i+1..=j, doubled
        let d = 2 * i as u64 + t + 1;
        for &o in &order[i..j] {
            ranks[o] = d;
        }
        let tf = t as f64;
        ties += tf * tf * tf - tf;
        i = j;
    }
    (ranks, ties)
}

/// Midranks (1-based, ties averaged).
pub fn midranks(values: &[f64]) -> Vec<f64> {
    doubled_midranks(values).0.into_iter().map(|d| d as f64 / 2.0).collect()
}

/// `U_x = #{x_i > y_j} + ½·#{x_i = y_j}`.
pub fn u_statistic(x: &[f64], y: &[f64]) -> f64 {
    let mut xs = x.to_vec();
    let mut ys = y.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    // for each x, count y strictly below and y equal
    let (mut below, mut upto) = (0usize, 0usize);
    let mut twice = 0usize;
    for &v in &xs {
        while below < ys.len() && ys[below] < v {
            below += 1;
        }
        if upto < below {
            upto = below;
        }
        while upto < ys.len() && ys[upto] <= v {
            upto += 1;
        }
        twice += below + upto;
    }
    twice as f64 / 2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MwMethod {
    /// Exact when the sample sizes are under the thresholds, else asymptotic.
    #[default]
    Auto,
    Exact,
    Asymptotic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MwOptions {
    pub method: MwMethod,
    /// Continuity correction for the normal approximation.
    pub continuity: bool,
}

impl Default for MwOptions {
    fn default() -> Self {
        MwOptions {
            method: MwMethod::Auto,
            continuity: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MannWhitney {
    /// U of the first sample.
    pub u: f64,
    /// Two-sided p.
    pub p: f64,
    pub exact: bool,
}

pub fn mann_whitney(x: &[f64], y: &[f64]) -> Result<MannWhitney> {
    mann_whitney_with(x, y, MwOptions::default())
}

pub fn mann_whitney_with(x: &[f64], y: &[f64], opts: MwOptions) -> Result<MannWhitney> {
    check_sample("x", x)?;
    check_sample("y", y)?;
    let (n1, n2) = (x.len(), y.len());
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let (ranks, ties) = doubled_midranks(&pooled);
    let dx: u64 = ranks[..n1].iter().sum();
    // 2·U_x = D_x − n1(n1+1)
    let twice_u = dx as i64 - (n1 * (n1 + 1)) as i64;
    let u = twice_u as f64 / 2.0;
    let exact = match opts.method {
        MwMethod::Exact => true,
        MwMethod::Asymptotic => false,
        MwMethod::Auto => n1.min(n2) <= EXACT_MAX_MIN_N && n1 * n2 <= EXACT_MAX_PRODUCT,
    };
    let p = if exact {
        exact_p(&ranks, n1, twice_u)
    } else {
        asymptotic_p(u, n1, n2, ties, opts.continuity)
    };
    Ok(MannWhitney { u, p, exact })
}

/// Two-sided p from the permutation distribution of U given the observed
/// (possibly tied) ranks: `min(1, 2·min(P(U ≤ u), P(U ≥ u)))`.
fn exact_p(ranks: &[u64], n1: usize, twice_u: i64) -> f64 {
    let n = ranks.len();
    let n2 = n - n1;
    // enumerate the smaller group's doubled rank sum
    let (m, small_is_x) = if n1 <= n2 { (n1, true) } else { (n2, false) };
    let max_sum: u64 = ranks.iter().sum::<u64>() + 1;
    let width = max_sum as usize + 1;
    let mut dp = vec![0.0f64; (m + 1) * width];
    dp[0] = 1.0;
    for &d in ranks {
        let d = d as usize;
        for j in (1..=m).rev() {
            let (lo, hi) = dp.split_at_mut(j * width);
            let prev = &lo[(j - 1) * width..];
            let cur = &mut hi[..width];
            for s in (d..width).rev() {
                cur[s] += prev[s - d];
            }
        }
    }
    let counts = &dp[m * width..];
    let (mut le, mut ge, mut total) = (0.0, 0.0, 0.0);
    let (n1i, n2i) = (n1 as i64, n2 as i64);
    for (s, &c) in counts.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        let twice = if small_is_x {
            s as i64 - n1i * (n1i + 1)
        } else {
            2 * n1i * n2i - (s as i64 - n2i * (n2i + 1))
        };
        total += c;
        if twice <= twice_u {
            le += c;
        }
        if twice >= twice_u {
            ge += c;
        }
    }
    (2.0 * le.min(ge) / total).min(1.0)
}

fn asymptotic_p(u: f64, n1: usize, n2: usize, ties: f64, continuity: bool) -> f64 {
    let (a, b) = (n1 as f64, n2 as f64);
    let n = a + b;
    let mean = a * b / 2.0;
    let var = a * b / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)));
    if !(var > 0.0) {
        return 1.0;
    }
    let mut dev = (u - mean).abs();
    if continuity {
        dev = (dev - 0.5).max(0.0);
    }
    let z = dev / var.sqrt();
    statrs::function::erf::erfc(z / std::f64::consts::SQRT_2).min(1.0)
}

/// `r = 2U/(n1·n2) − 1`, positive when the first sample tends to be larger.
pub fn rank_biserial(u: f64, n1: usize, n2: usize) -> f64 {
    2.0 * u / (n1 as f64 * n2 as f64) - 1.0
}

/// Rank-biserial r of two samples.
pub fn rank_biserial_r(x: &[f64], y: &[f64]) -> f64 {
    rank_biserial(u_statistic(x, y), x.len(), y.len())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KruskalWallis {
    /// Tie-corrected H.
    pub h: f64,
    /// Chi-square p with `groups − 1` degrees of freedom.
    pub p: f64,
}

fn check_groups(groups: &[&[f64]]) -> Result<()> {
    if groups.len() < 2 {
        return Err(Error::InvalidInput("Kruskal-Wallis needs at least 2 groups".into()));
    }
    for (i, g) in groups.iter().enumerate() {
        check_sample(&format!("group {i}"), g)?;
    }
    Ok(())
}

pub fn kruskal_wallis(groups: &[&[f64]]) -> Result<KruskalWallis> {
    check_groups(groups)?;
    let pooled: Vec<f64> = groups.iter().flat_map(|g| g.iter().copied()).collect();
    let n = pooled.len() as f64;
    let (ranks, ties) = doubled_midranks(&pooled);
    let correction = 1.0 - ties / (n * n * n - n);
    if !(correction > 0.0) {
        return Ok(KruskalWallis { h: 0.0, p: 1.0 });
    }
    let mut start = 0;
    let mut sum = 0.0;
    for g in groups {
        let r: f64 = ranks[start..start + g.len()].iter().map(|&d| d as f64 / 2.0).sum();
        sum += r * r / g.len() as f64;
        start += g.len();
    }
    let h = ((12.0 / (n * (n + 1.0)) * sum - 3.0 * (n + 1.0)) / correction).max(0.0);
    let dist = ChiSquared::new((groups.len() - 1) as f64)
        .map_err(|e| Error::Numerical(format!("chi-square: {e}")))?;
    Ok(KruskalWallis { h, p: dist.sf(h) })
}

fn lcm(a: u128, b: u128) -> u128 {
    fn gcd(a: u128, b: u128) -> u128 {
        if b == 0 { a } else { gcd(b, a % b) }
    }
    a / gcd(a, b) * b
}

/// Exact permutation p of the Kruskal-Wallis H, enumerating every
/// assignment of the pooled values to groups of the observed sizes. Scores
/// are compared in exact integer arithmetic.
pub fn kruskal_wallis_exact_p(groups: &[&[f64]]) -> Result<f64> {
    check_groups(groups)?;
    let sizes: Vec<usize> = groups.iter().map(|g| g.len()).collect();
    let n: usize = sizes.iter().sum();
    let mut assignments = 1.0f64;
    let mut left = n;
    for &s in &sizes {
        assignments *= binomial(left, s);
        left -= s;
    }
    if assignments > KW_EXACT_LIMIT {
        return Err(Error::InvalidInput(format!(
            "{assignments:.3e} assignments exceed the exact Kruskal-Wallis limit"
        )));
    }
    let pooled: Vec<f64> = groups.iter().flat_map(|g| g.iter().copied()).collect();
    let (ranks, _) = doubled_midranks(&pooled);
    let l = sizes.iter().fold(1u128, |acc, &s| lcm(acc, s as u128));
    let weights: Vec<u128> = sizes.iter().map(|&s| l / s as u128).collect();

    // H is increasing in Σ D_g²/n_g, scaled here by lcm(n_g) to stay integral.
    let mut observed = 0u128;
    let mut start = 0;
    for (g, &s) in sizes.iter().enumerate() {
        let d: u128 = ranks[start..start + s].iter().map(|&r| r as u128).sum();
        observed += d * d * weights[g];
        start += s;
    }

    let mut used = vec![false; n];
    let (mut hits, mut total) = (0u64, 0u64);
    enumerate_groups(&ranks, &sizes, &weights, 0, 0, &mut used, &mut |score| {
        total += 1;
        if score >= observed {
            hits += 1;
        }
    });
    Ok(hits as f64 / total as f64)
}

fn enumerate_groups(
    ranks: &[u64],
    sizes: &[usize],
    weights: &[u128],
    group: usize,
    partial: u128,
    used: &mut [bool],
    visit: &mut impl FnMut(u128),
) {
    fn pick(
        ranks: &[u64],
        used: &mut [bool],
        from: usize,
        need: usize,
        sum: u128,
        done: &mut dyn FnMut(&mut [bool], u128),
    ) {
        if need == 0 {
            done(used, sum);
            return;
        }
        for i in from..ranks.len() {
            if !used[i] && ranks.len() - i >= need {
                used[i] = true;
                pick(ranks, used, i + 1, need - 1, sum + ranks[i] as u128, done);
                used[i] = false;
            }
        }
    }
    if group + 1 == sizes.len() {
        // the last group takes whatever is left
        let d: u128 = ranks
            .iter()
            .zip(used.iter())
            .filter(|(_, &u)| !u)
            .map(|(&r, _)| r as u128)
            .sum();
        visit(partial + d * d * weights[group]);
        return;
    }
    pick(ranks, used, 0, sizes[group], 0, &mut |used, d| {
        enumerate_groups(
            ranks,
            sizes,
            weights,
            group + 1,
            partial + d * d * weights[group],
            used,
            visit,
        );
    });
}

/// `C(n, k)` as a float.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midranks_average_ties() {
        assert_eq!(midranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        let (_, ties) = doubled_midranks(&[1.0, 1.0, 1.0, 2.0]);
        assert_eq!(ties, 24.0);
    }

    #[test]
    fn u_counts_pairs() {
        assert_eq!(u_statistic(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]), 0.0);
        assert_eq!(u_statistic(&[4.0, 5.0, 6.0], &[1.0, 2.0, 3.0]), 9.0);
        assert_eq!(u_statistic(&[1.0, 3.0], &[2.0, 4.0]), 1.0);
        assert_eq!(u_statistic(&[2.0, 2.0], &[2.0, 1.0]), 3.0);
    }

    #[test]
    fn mann_whitney_small_examples() {
        let r = mann_whitney(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(r.u, 0.0);
        assert!(r.exact);
        assert!((r.p - 0.1).abs() < 1e-15);

        let same = [1.0, 2.0, 2.0, 5.0];
        let r = mann_whitney(&same, &same).unwrap();
        assert_eq!(r.u, 8.0);
        assert_eq!(r.p, 1.0);

        // U takes 0,1,2,2,3,4 over the six splits, so P(U <= 1) = 2/6
        let r = mann_whitney(&[1.0, 3.0], &[2.0, 4.0]).unwrap();
        assert_eq!(r.u, 1.0);
        assert!((r.p - 2.0 / 3.0).abs() < 1e-15);

        assert!(mann_whitney(&[], &[1.0]).is_err());
        assert!(mann_whitney(&[f64::NAN], &[1.0]).is_err());
    }

    #[test]
    fn asymptotic_all_tied_is_one() {
        let opts = MwOptions {
            method: MwMethod::Asymptotic,
            continuity: true,
        };
        assert_eq!(mann_whitney_with(&[1.0; 20], &[1.0; 20], opts).unwrap().p, 1.0);
    }

    #[test]
    fn rank_biserial_examples() {
        assert_eq!(rank_biserial(6.0, 2, 3), 1.0);
        assert_eq!(rank_biserial(3.0, 2, 3), 0.0);
        assert_eq!(rank_biserial(0.0, 2, 2), -1.0);
    }

    #[test]
    fn kruskal_examples() {
        let g = [1.0, 2.0, 3.0];
        let r = kruskal_wallis(&[&g, &g, &g]).unwrap();
        assert_eq!(r.h, 0.0);
        assert!((r.p - 1.0).abs() < 1e-12);

        // rank sums 3, 7, 11: 12/42·(9+49+121)/2 − 21 = 32/7
        let r = kruskal_wallis(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]).unwrap();
        assert!((r.h - 32.0 / 7.0).abs() < 1e-12);

        let r = kruskal_wallis(&[&[4.0; 3], &[4.0; 2]]).unwrap();
        assert_eq!((r.h, r.p), (0.0, 1.0));
        assert!(kruskal_wallis(&[&[1.0]]).is_err());
    }

    #[test]
    fn kruskal_exact_extremes() {
        // the most extreme of 90 equally likely splits, achieved by 6 of them
        let p = kruskal_wallis_exact_p(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]).unwrap();
        assert!((p - 6.0 / 90.0).abs() < 1e-15);
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(6, 3), 20.0);
        assert_eq!(binomial(4, 5), 0.0);
        assert!((binomial(60, 30) / 118264581564861424.0 - 1.0).abs() < 1e-14);
    }
}
