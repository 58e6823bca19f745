//! The per-seed test battery and the cross-seed aggregation layer.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::holm::holm_correct_at;
use super::rank::{kruskal_wallis, mann_whitney, rank_biserial, rank_biserial_r};
use super::resample::{bca_ci, permutation_test, PermStatistic, DEFAULT_PERMUTATIONS, DEFAULT_RESAMPLES};
use crate::error::{Error, Result};
use crate::metrics::{values_by_condition, HasMetrics, Metric, MetricRecord, PromptRecord};
use crate::rng;
use crate::trace::Condition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Prompt,
    Token,
}

impl Level {
    pub fn as_str(self) -> &'static str {
        match self {
            Level::Prompt => "prompt",
            Level::Token => "token",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prompt" => Ok(Level::Prompt),
            "token" => Ok(Level::Token),
            _ => Err(Error::InvalidInput(format!("unknown level {s:?}"))),
        }
    }
}

/// An ordered pair of conditions; r is reported relative to `first`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ConditionPair {
    pub first: Condition,
    pub second: Condition,
}

impl ConditionPair {
    pub const fn new(first: Condition, second: Condition) -> Self {
        ConditionPair { first, second }
    }

    pub const ALL: [ConditionPair; 3] = [
        ConditionPair::new(Condition::T1, Condition::T2),
        ConditionPair::new(Condition::T1, Condition::T3),
        ConditionPair::new(Condition::T2, Condition::T3),
    ];

    pub fn label(&self) -> String {
        format!("{}-{}", self.first, self.second)
    }
}

impl fmt::Display for ConditionPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.first, self.second)
    }
}

impl std::str::FromStr for ConditionPair {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once(['-', '–'])
            .ok_or_else(|| Error::InvalidInput(format!("condition pair {s:?} is not of the form A-B")))?;
        Ok(ConditionPair::new(a.trim().parse()?, b.trim().parse()?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StatsConfig {
    pub alpha: f64,
    pub n_perm: usize,
    pub n_boot: usize,
    pub permutation_statistic: PermStatistic,
    /// Also run the permutation test and BCa interval at token level. Off by
    /// default: token-level results only feed the pseudoreplication ratio.
    pub token_resampling: bool,
    /// Base seed for every resampling stream.
    pub rng_seed: u64,
}

impl Default for StatsConfig {
    fn default() -> Self {
        StatsConfig {
            alpha: 0.05,
            n_perm: DEFAULT_PERMUTATIONS,
            n_boot: DEFAULT_RESAMPLES,
            permutation_statistic: PermStatistic::MeanDifference,
            token_resampling: false,
            rng_seed: 42,
        }
    }
}

impl StatsConfig {
    /// Mann-Whitney and r only; no resampling at either level.
    pub fn mw_only(&self) -> StatsConfig {
        StatsConfig {
            n_perm: 0,
            n_boot: 0,
            token_resampling: false,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseResult {
    pub pair: ConditionPair,
    pub metric: Metric,
    pub level: Level,
    pub seed: u64,
    pub n1: usize,
    pub n2: usize,
    pub mean_first: f64,
    pub mean_second: f64,
    pub u: f64,
    pub p_mw: f64,
    pub p_perm: Option<f64>,
    pub r: f64,
    pub r_ci: Option<(f64, f64)>,
    pub ci_degenerate: bool,
    /// Holm-adjusted `p_mw` within the (metric, seed, level) family.
    pub holm_p: f64,
    pub holm_significant: bool,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn stream(cfg: &StatsConfig, seed: u64, pair: ConditionPair, metric: Metric, level: Level, what: &str) -> u64 {
    rng::derive_seed(
        cfg.rng_seed,
        &[
            seed,
            rng::tag(&pair.label()),
            rng::tag(metric.as_str()),
            rng::tag(level.as_str()),
            rng::tag(what),
        ],
    )
}

/// One two-sample comparison. Holm fields describe a family of one until
/// [`run_seed`] overwrites them.
pub fn compare(
    first: &[f64],
    second: &[f64],
    pair: ConditionPair,
    metric: Metric,
    level: Level,
    seed: u64,
    cfg: &StatsConfig,
) -> Result<PairwiseResult> {
    let mw = mann_whitney(first, second)?;
    let (n1, n2) = (first.len(), second.len());
    let resample = level == Level::Prompt || cfg.token_resampling;
    let p_perm = if resample && cfg.n_perm > 0 {
        let s = stream(cfg, seed, pair, metric, level, "permutation");
        Some(permutation_test(first, second, cfg.n_perm, s, cfg.permutation_statistic)?.p)
    } else {
        None
    };
    let (r_ci, ci_degenerate) = if resample && cfg.n_boot > 0 && n1 >= 2 && n2 >= 2 {
        let s = stream(cfg, seed, pair, metric, level, "bootstrap");
        let ci = bca_ci(first, second, rank_biserial_r, cfg.n_boot, 0.05, s)?;
        (Some((ci.lo, ci.hi)), ci.degenerate)
    } else {
        (None, false)
    };
    Ok(PairwiseResult {
        pair,
        metric,
        level,
        seed,
        n1,
        n2,
        mean_first: mean(first),
        mean_second: mean(second),
        u: mw.u,
        p_mw: mw.p,
        p_perm,
        r: rank_biserial(mw.u, n1, n2),
        r_ci,
        ci_degenerate,
        holm_p: mw.p,
        holm_significant: mw.p < cfg.alpha,
    })
}

fn seed_records<R: HasMetrics + Clone>(records: &[R], seed: u64, seed_of: impl Fn(&R) -> u64) -> Vec<R> {
    records.iter().filter(|r| seed_of(r) == seed).cloned().collect()
}

fn missing(pair: ConditionPair, groups: &BTreeMap<Condition, Vec<f64>>) -> Option<Condition> {
    [pair.first, pair.second]
        .into_iter()
        .find(|c| groups.get(c).is_none_or(|v| v.is_empty()))
}

/// The full battery for one pair and metric at both levels.
pub fn run_pair(
    prompts: &[PromptRecord],
    tokens: &[MetricRecord],
    pair: ConditionPair,
    metric: Metric,
    seed: u64,
    cfg: &StatsConfig,
) -> Result<(PairwiseResult, PairwiseResult)> {
    let p = values_by_condition(&seed_records(prompts, seed, |r| r.seed), metric);
    let t = values_by_condition(&seed_records(tokens, seed, |r| r.seed), metric);
    for (level, groups) in [(Level::Prompt, &p), (Level::Token, &t)] {
        if let Some(c) = missing(pair, groups) {
            return Err(Error::InvalidInput(format!(
                "condition {c} has no {level}-level records for seed {seed}"
            )));
        }
    }
    let prompt = compare(&p[&pair.first], &p[&pair.second], pair, metric, Level::Prompt, seed, cfg)?;
    let token = compare(&t[&pair.first], &t[&pair.second], pair, metric, Level::Token, seed, cfg)?;
    Ok((prompt, token))
}

fn apply_holm(results: &mut [PairwiseResult], alpha: f64) -> Result<()> {
    let mut families: BTreeMap<(Metric, Level), Vec<usize>> = BTreeMap::new();
    for (i, r) in results.iter().enumerate() {
        families.entry((r.metric, r.level)).or_default().push(i);
    }
    for idx in families.values() {
        let p: Vec<f64> = idx.iter().map(|&i| results[i].p_mw).collect();
        for (&i, d) in idx.iter().zip(holm_correct_at(&p, alpha)?) {
            results[i].holm_p = d.adjusted;
            results[i].holm_significant = d.significant;
        }
    }
    Ok(())
}

/// Every pair × metric at both levels for one seed, with Holm applied over
/// the pairs of each (metric, level). Pairs with a missing condition are
/// skipped with a warning.
pub fn run_seed(
    prompts: &[PromptRecord],
    tokens: &[MetricRecord],
    seed: u64,
    metrics: &[Metric],
    pairs: &[ConditionPair],
    cfg: &StatsConfig,
) -> Result<Vec<PairwiseResult>> {
    let prompts = seed_records(prompts, seed, |r| r.seed);
    let tokens = seed_records(tokens, seed, |r| r.seed);
    let mut out = Vec::new();
    for &metric in metrics {
        let p = values_by_condition(&prompts, metric);
        let t = values_by_condition(&tokens, metric);
        for &pair in pairs {
            for (level, groups) in [(Level::Prompt, &p), (Level::Token, &t)] {
                if let Some(c) = missing(pair, groups) {
                    log::warn!("seed {seed}: skipping {pair} {metric} at {level} level, condition {c} is missing");
                    continue;
                }
                out.push(compare(&groups[&pair.first], &groups[&pair.second], pair, metric, level, seed, cfg)?);
            }
        }
    }
    apply_holm(&mut out, cfg.alpha)?;
    Ok(out)
}

/// Prompt-level MW p only, for scans where resampling is not needed.
pub fn prompt_p_values(
    prompts: &[PromptRecord],
    metric: Metric,
    pairs: &[ConditionPair],
) -> Result<Vec<(ConditionPair, Option<f64>)>> {
    let groups = values_by_condition(prompts, metric);
    pairs
        .iter()
        .map(|&pair| {
            if missing(pair, &groups).is_some() {
                return Ok((pair, None));
            }
            Ok((pair, Some(mann_whitney(&groups[&pair.first], &groups[&pair.second])?.p)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KruskalRecord {
    pub metric: Metric,
    pub level: Level,
    pub seed: u64,
    pub h: f64,
    pub p: f64,
}

/// Three-condition Kruskal-Wallis on prompt means, per metric.
pub fn run_kruskal(prompts: &[PromptRecord], seed: u64, metrics: &[Metric]) -> Result<Vec<KruskalRecord>> {
    let prompts = seed_records(prompts, seed, |r| r.seed);
    let mut out = Vec::new();
    for &metric in metrics {
        let g = values_by_condition(&prompts, metric);
        let groups: Vec<&[f64]> = Condition::EXPERIMENTAL
            .iter()
            .filter_map(|c| g.get(c).map(Vec::as_slice))
            .filter(|v| !v.is_empty())
            .collect();
        if groups.len() < 2 {
            continue;
        }
        let kw = kruskal_wallis(&groups)?;
        out.push(KruskalRecord {
            metric,
            level: Level::Prompt,
            seed,
            h: kw.h,
            p: kw.p,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiRunSummary {
    pub pair: ConditionPair,
    pub metric: Metric,
    pub level: Level,
    pub n_seeds: usize,
    pub sig_count: usize,
    pub sig_rate: f64,
    pub holm_count: usize,
    pub holm_rate: f64,
    /// Lower median across seeds.
    pub median_r: f64,
    /// Seeds whose r has the majority sign.
    pub direction_count: usize,
    /// +1 or −1, 0 when no seed has a nonzero r or the signs split evenly.
    pub majority_sign: i8,
    /// Lower median of `p_mw` across seeds.
    pub median_p: f64,
    /// Token sig rate over prompt sig rate; `None` when the prompt rate is 0
    /// or the other level is absent.
    pub pseudo_ratio: Option<f64>,
}

impl MultiRunSummary {
    pub fn direction_label(&self) -> String {
        format!("{}/{}", self.direction_count, self.n_seeds)
    }
}

/// Lower median (the smaller middle element for even counts).
pub fn lower_median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v[(v.len() - 1) / 2]
}

/// Aggregates per-seed results into one summary per (pair, metric, level),
/// sorted by that key.
pub fn aggregate_runs(results: &[PairwiseResult], alpha: f64) -> Vec<MultiRunSummary> {
    let mut groups: BTreeMap<(ConditionPair, Metric, Level), Vec<&PairwiseResult>> = BTreeMap::new();
    for r in results {
        groups.entry((r.pair, r.metric, r.level)).or_default().push(r);
    }
    let mut out: Vec<MultiRunSummary> = groups
        .iter()
        .map(|(&(pair, metric, level), rs)| {
            let n = rs.len();
            let sig_count = rs.iter().filter(|r| r.p_mw < alpha).count();
            let holm_count = rs.iter().filter(|r| r.holm_significant).count();
            let pos = rs.iter().filter(|r| r.r > 0.0).count();
            let neg = rs.iter().filter(|r| r.r < 0.0).count();
            let r: Vec<f64> = rs.iter().map(|r| r.r).collect();
            let p: Vec<f64> = rs.iter().map(|r| r.p_mw).collect();
            MultiRunSummary {
                pair,
                metric,
                level,
                n_seeds: n,
                sig_count,
                sig_rate: sig_count as f64 / n as f64,
                holm_count,
                holm_rate: holm_count as f64 / n as f64,
                median_r: lower_median(&r),
                direction_count: pos.max(neg),
                majority_sign: (pos as i64 - neg as i64).signum() as i8,
                median_p: lower_median(&p),
                pseudo_ratio: None,
            }
        })
        .collect();

    let rates: BTreeMap<(ConditionPair, Metric, Level), f64> =
        out.iter().map(|s| ((s.pair, s.metric, s.level), s.sig_rate)).collect();
    for s in &mut out {
        let prompt = rates.get(&(s.pair, s.metric, Level::Prompt));
        let token = rates.get(&(s.pair, s.metric, Level::Token));
        s.pseudo_ratio = match (token, prompt) {
            (Some(&t), Some(&p)) if p > 0.0 => Some(t / p),
            _ => None,
        };
    }
    out
}

/// Ratio as printed in reports: one decimal below 10, whole numbers above.
pub fn format_ratio(ratio: Option<f64>) -> String {
    match ratio {
        None => "n/a".to_string(),
        Some(r) if r < 10.0 => format!("{r:.1}×"),
        Some(r) => format!("{r:.0}×"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(seed: u64, level: Level, p: f64, r: f64) -> PairwiseResult {
        PairwiseResult {
            pair: ConditionPair::ALL[2],
            metric: Metric::MaxSim,
            level,
            seed,
            n1: 30,
            n2: 30,
            mean_first: 0.0,
            mean_second: 0.0,
            u: 0.0,
            p_mw: p,
            p_perm: None,
            r,
            r_ci: None,
            ci_degenerate: false,
            holm_p: p,
            holm_significant: p < 0.0125,
        }
    }

    #[test]
    fn aggregation_counts() {
        let mut rs = Vec::new();
        for s in 0..20 {
            let p = if s < 12 { 0.01 } else { 0.3 };
            rs.push(result(s, Level::Prompt, p, -0.31));
            let tp = if s < 4 { 0.01 } else { 0.3 };
            rs.push(result(s, Level::Token, tp, -0.05));
        }
        let out = aggregate_runs(&rs, 0.05);
        let prompt = out.iter().find(|s| s.level == Level::Prompt).unwrap();
        assert!((prompt.sig_rate - 0.6).abs() < 1e-15);
        assert_eq!(prompt.direction_label(), "20/20");
        assert_eq!(prompt.majority_sign, -1);
        let ratio = prompt.pseudo_ratio.unwrap();
        assert!((ratio - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(format_ratio(Some(ratio)), "0.3×");
        assert_eq!(format_ratio(Some(12.4)), "12×");
    }

    #[test]
    fn zero_r_counts_toward_neither_sign() {
        let rs = vec![
            result(1, Level::Prompt, 0.5, 0.0),
            result(2, Level::Prompt, 0.5, 0.2),
            result(3, Level::Prompt, 0.5, -0.1),
            result(4, Level::Prompt, 0.5, 0.3),
        ];
        let s = &aggregate_runs(&rs, 0.05)[0];
        assert_eq!(s.direction_count, 2);
        assert_eq!(s.median_r, 0.0);
        assert_eq!(s.pseudo_ratio, None);
    }

    #[test]
    fn pair_parsing() {
        assert_eq!("T2-T3".parse::<ConditionPair>().unwrap(), ConditionPair::ALL[2]);
        assert_eq!("T1–T2".parse::<ConditionPair>().unwrap(), ConditionPair::ALL[0]);
        assert!("T1".parse::<ConditionPair>().is_err());
    }
}
