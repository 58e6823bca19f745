//! Two-level nonparametric statistics: rank tests, resampling, Holm, and
//! the multi-seed aggregation layer.

mod battery;
mod holm;
mod rank;
mod resample;

pub use battery::{
    aggregate_runs, compare, format_ratio, lower_median, prompt_p_values, run_kruskal, run_pair, run_seed,
    ConditionPair, KruskalRecord, Level, MultiRunSummary, PairwiseResult, StatsConfig,
};
pub use holm::{holm_correct, holm_correct_at, HolmDecision};
pub use rank::{
    binomial, kruskal_wallis, kruskal_wallis_exact_p, mann_whitney, mann_whitney_with, midranks, rank_biserial,
    rank_biserial_r, u_statistic, KruskalWallis, MannWhitney, MwMethod, MwOptions, EXACT_MAX_MIN_N,
    EXACT_MAX_PRODUCT, KW_EXACT_LIMIT,
};
pub use resample::{
    bca_ci, bca_from_replicates, percentile_interval, permutation_p, permutation_test, quantile_sorted,
    BcaInterval, PermStatistic, PermutationResult, DEFAULT_PERMUTATIONS, DEFAULT_RESAMPLES,
};
