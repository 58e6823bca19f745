//! Calibration and the full-spectrum whitening experiment.
//!
//! Calibration is fitted once on the calibration rows and reused for every
//! experimental seed. Seeds are analyzed in parallel; results come back in
//! seed order, so output does not depend on scheduling.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{fit_kmeans, ClusterModel};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::{prompt_aggregate, table_from_whitened, FlaggedToken, PromptRecord};
use crate::stats::{aggregate_runs, run_kruskal, run_seed, ConditionPair, KruskalRecord, MultiRunSummary, PairwiseResult};
use crate::trace::{Condition, TraceSet};
use crate::whitening::{fit_pca, WhiteningModel};

/// Whitening transform plus the cluster structure of the whitened calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub whitening: WhiteningModel,
    pub clusters: ClusterModel,
}

pub fn calibration_matrix(traces: &TraceSet) -> Result<Matrix> {
    let cal = traces.filter(|r| r.condition == Condition::Calibration);
    if cal.is_empty() {
        return Err(Error::InvalidInput("traces contain no calibration rows".into()));
    }
    Ok(cal.matrix())
}

/// Fits PCA with `n_components` and k-means on the whitened calibration rows.
pub fn calibrate(traces: &TraceSet, cfg: &PipelineConfig) -> Result<Calibration> {
    let x = calibration_matrix(traces)?;
    let whitening = fit_pca(&x, cfg.whitening.n_components, cfg.whitening.epsilon)?;
    let w = whitening.whiten(&x)?;
    let clusters = fit_kmeans(&w, cfg.clustering.k, &cfg.clustering.kmeans)?;
    Ok(Calibration { whitening, clusters })
}

/// Configured seeds that have experimental rows, warning about the rest.
pub fn present_seeds(traces: &TraceSet, cfg: &PipelineConfig) -> Result<Vec<u64>> {
    let have = traces.seeds();
    let mut seeds = Vec::new();
    for &s in &cfg.seeds {
        if have.contains(&s) {
            seeds.push(s);
        } else {
            log::warn!("seed {s} has no experimental rows; skipped");
        }
    }
    if seeds.is_empty() {
        return Err(Error::InvalidInput(format!(
            "none of the configured seeds {:?} occur in the traces (found {:?})",
            cfg.seeds, have
        )));
    }
    Ok(seeds)
}

/// Experimental rows of one seed and their f64 matrix.
pub(crate) fn seed_rows(traces: &TraceSet, seed: u64) -> (TraceSet, Matrix) {
    let t = traces.filter(|r| r.condition.is_experimental() && r.seed == seed);
    let m = t.matrix();
    (t, m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub seeds: Vec<u64>,
    /// Every seed's pairwise tests at both levels, in seed order.
    pub results: Vec<PairwiseResult>,
    pub summaries: Vec<MultiRunSummary>,
    pub kruskal: Vec<KruskalRecord>,
    pub prompts: Vec<PromptRecord>,
    pub flagged: Vec<FlaggedToken>,
}

struct SeedOutput {
    results: Vec<PairwiseResult>,
    kruskal: Vec<KruskalRecord>,
    prompts: Vec<PromptRecord>,
    flagged: Vec<FlaggedToken>,
}

fn run_one_seed(traces: &TraceSet, cal: &Calibration, seed: u64, cfg: &PipelineConfig) -> Result<SeedOutput> {
    let (exp, raw) = seed_rows(traces, seed);
    let whitened = cal.whitening.whiten(&raw)?;
    let table = table_from_whitened(&exp, &raw, &whitened, &cal.clusters, &cfg.metric)?;
    let prompts = prompt_aggregate(&table.records);
    let results = run_seed(&prompts, &table.records, seed, &cfg.metrics, &ConditionPair::ALL, &cfg.stats)?;
    let kruskal = run_kruskal(&prompts, seed, &cfg.metrics)?;
    Ok(SeedOutput {
        results,
        kruskal,
        prompts,
        flagged: table.flagged,
    })
}

/// Metrics, per-seed battery and cross-seed summaries for the full-spectrum
/// whitening experiment.
pub fn run_experiment(traces: &TraceSet, cal: &Calibration, cfg: &PipelineConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let seeds = present_seeds(traces, cfg)?;
    let outputs: Vec<SeedOutput> = seeds
        .par_iter()
        .map(|&s| run_one_seed(traces, cal, s, cfg))
        .collect::<Result<_>>()?;
    let mut out = ExperimentResult {
        seeds,
        results: Vec::new(),
        summaries: Vec::new(),
        kruskal: Vec::new(),
        prompts: Vec::new(),
        flagged: Vec::new(),
    };
    for o in outputs {
        out.results.extend(o.results);
        out.kruskal.extend(o.kruskal);
        out.prompts.extend(o.prompts);
        out.flagged.extend(o.flagged);
    }
    out.summaries = aggregate_runs(&out.results, cfg.stats.alpha);
    Ok(out)
}
