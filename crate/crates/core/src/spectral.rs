//! Band-restricted analysis and the sliding eigenspectrum scan.
//!
//! A band or window is a component range `[lo, hi]` of a whitening model
//! fitted with all components. Each range gets its own clustering of the
//! band-whitened calibration, seeded from the range itself, so two analyses
//! of the same range agree bit for bit wherever they are run from.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{adapted_k, fit_kmeans, ClusterModel};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::experiment::{calibration_matrix, present_seeds, seed_rows};
use crate::matrix::Matrix;
use crate::metrics::{prompt_aggregate, table_from_whitened, Metric, MetricRecord, PromptRecord};
use crate::rng::derive_seed;
use crate::stats::{aggregate_runs, lower_median, prompt_p_values, run_seed, ConditionPair, Level, MultiRunSummary, PairwiseResult};
use crate::trace::TraceSet;
use crate::whitening::{SpectralBand, WhiteningModel};

/// Heatmap cells at or above this prompt-level sig rate are annotated.
pub const ANNOTATION_THRESHOLD: f64 = 0.15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandResult {
    pub band: SpectralBand,
    pub k_used: usize,
    /// Share of calibration variance in the band.
    pub variance_fraction: f64,
    pub summaries: Vec<MultiRunSummary>,
    pub results: Vec<PairwiseResult>,
}

impl BandResult {
    pub fn summary(&self, pair: ConditionPair, metric: Metric, level: Level) -> Option<&MultiRunSummary> {
        self.summaries
            .iter()
            .find(|s| s.pair == pair && s.metric == metric && s.level == level)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Subspace {
    band: SpectralBand,
    clusters: ClusterModel,
}

/// Cluster seed of a component range.
pub fn band_cluster_seed(base: u64, pc_lo: usize, pc_hi: usize) -> u64 {
    derive_seed(base, &[pc_lo as u64, pc_hi as u64])
}

fn fit_subspaces(cal: &Matrix, wm: &WhiteningModel, bands: &[SpectralBand], cfg: &PipelineConfig) -> Result<Vec<Subspace>> {
    bands
        .par_iter()
        .map(|band| {
            let w = wm.band_whiten(cal, band)?;
            let mut kcfg = cfg.clustering.kmeans.clone();
            kcfg.rng_seed = band_cluster_seed(kcfg.rng_seed, band.pc_lo, band.pc_hi);
            let clusters = fit_kmeans(&w, adapted_k(band.width()), &kcfg)?;
            Ok(Subspace {
                band: band.clone(),
                clusters,
            })
        })
        .collect()
}

fn check_model(wm: &WhiteningModel, bands: &[SpectralBand]) -> Result<()> {
    for b in bands {
        if b.pc_lo == 0 || b.pc_lo > b.pc_hi || b.pc_hi > wm.n_components() {
            return Err(Error::InvalidInput(format!(
                "band {} lies outside the model's {} components",
                b.label(),
                wm.n_components()
            )));
        }
    }
    Ok(())
}

fn subspace_tables(
    exp: &TraceSet,
    raw: &Matrix,
    wm: &WhiteningModel,
    sub: &Subspace,
    cfg: &PipelineConfig,
) -> Result<(Vec<PromptRecord>, Vec<MetricRecord>)> {
    let w = wm.band_whiten(raw, &sub.band)?;
    let table = table_from_whitened(exp, raw, &w, &sub.clusters, &cfg.metric)?;
    Ok((prompt_aggregate(&table.records), table.records))
}

/// Analyzes several bands in one pass over the seeds. Bands are independent:
/// the result for a band does not depend on which other bands are listed.
pub fn analyze_bands(
    traces: &TraceSet,
    wm: &WhiteningModel,
    bands: &[SpectralBand],
    cfg: &PipelineConfig,
) -> Result<Vec<BandResult>> {
    cfg.validate()?;
    check_model(wm, bands)?;
    if bands.is_empty() {
        return Ok(Vec::new());
    }
    let seeds = present_seeds(traces, cfg)?;
    let subspaces = fit_subspaces(&calibration_matrix(traces)?, wm, bands, cfg)?;

    let per_seed: Vec<Vec<Vec<PairwiseResult>>> = seeds
        .par_iter()
        .map(|&seed| {
            let (exp, raw) = seed_rows(traces, seed);
            subspaces
                .iter()
                .map(|sub| {
                    let (prompts, tokens) = subspace_tables(&exp, &raw, wm, sub, cfg)?;
                    run_seed(&prompts, &tokens, seed, &Metric::BAND, &ConditionPair::ALL, &cfg.stats)
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    subspaces
        .iter()
        .enumerate()
        .map(|(i, sub)| {
            let results: Vec<PairwiseResult> = per_seed.iter().flat_map(|s| s[i].iter().cloned()).collect();
            Ok(BandResult {
                band: sub.band.clone(),
                k_used: sub.clusters.k(),
                variance_fraction: wm.variance_fraction(&sub.band)?,
                summaries: aggregate_runs(&results, cfg.stats.alpha),
                results,
            })
        })
        .collect()
}

pub fn analyze_band(traces: &TraceSet, wm: &WhiteningModel, band: &SpectralBand, cfg: &PipelineConfig) -> Result<BandResult> {
    Ok(analyze_bands(traces, wm, std::slice::from_ref(band), cfg)?.remove(0))
}

/// Window ranges `[lo, hi]` (1-indexed, inclusive) over `n` components:
/// full windows every `step`, then one truncated window if components
/// remain uncovered.
pub fn scan_ranges(n: usize, width: usize, step: usize) -> Vec<(usize, usize)> {
    assert!(width >= 1 && step >= 1);
    let mut out = Vec::new();
    let mut lo = 1;
    while lo + width - 1 <= n {
        out.push((lo, lo + width - 1));
        lo += step;
    }
    match out.last() {
        Some(&(_, hi)) if hi < n => out.push((lo, n)),
        None if n > 0 => out.push((1, n)),
        _ => {}
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanCell {
    pub pair: ConditionPair,
    pub metric: Metric,
    /// Lower median across seeds of the prompt-level MW p; `None` if the
    /// pair was missing in every seed.
    pub median_p: Option<f64>,
    /// `median_p` times the family size, capped at 1.
    pub bonferroni_p: Option<f64>,
    pub nominal_significant: bool,
    pub bonferroni_significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedScanP {
    pub seed: u64,
    pub pair: ConditionPair,
    pub metric: Metric,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanWindow {
    pub pc_lo: usize,
    pub pc_hi: usize,
    /// Components skipped before the window (`pc_lo − 1`).
    pub offset: usize,
    pub k_used: usize,
    pub cells: Vec<ScanCell>,
    pub bonferroni_significant: bool,
    /// Filled only when per-seed scan output is requested.
    pub per_seed: Vec<SeedScanP>,
}

type WindowP = (ConditionPair, Metric, Option<f64>);

/// Family size of the scan's Bonferroni correction, applied per pair.
pub fn scan_family_size(n_windows: usize) -> usize {
    n_windows * Metric::BAND.len()
}

/// Prompt-level MW p for every window, pair and band metric, summarized by
/// the median across seeds and Bonferroni-corrected over windows × metrics
/// within each pair.
pub fn sliding_scan(traces: &TraceSet, wm: &WhiteningModel, cfg: &PipelineConfig) -> Result<Vec<ScanWindow>> {
    cfg.validate()?;
    let ranges = scan_ranges(wm.n_components(), cfg.spectral.scan_width, cfg.spectral.scan_step);
    let bands: Vec<SpectralBand> = ranges
        .iter()
        .map(|&(lo, hi)| SpectralBand::new(format!("PC {lo}-{hi}"), lo, hi))
        .collect::<Result<_>>()?;
    let seeds = present_seeds(traces, cfg)?;
    let subspaces = fit_subspaces(&calibration_matrix(traces)?, wm, &bands, cfg)?;

    // [seed][window] -> (pair, metric, p)
    let per_seed: Vec<Vec<Vec<WindowP>>> = seeds
        .par_iter()
        .map(|&seed| {
            let (exp, raw) = seed_rows(traces, seed);
            subspaces
                .iter()
                .map(|sub| {
                    let (prompts, _) = subspace_tables(&exp, &raw, wm, sub, cfg)?;
                    let mut cells = Vec::new();
                    for metric in Metric::BAND {
                        for (pair, p) in prompt_p_values(&prompts, metric, &ConditionPair::ALL)? {
                            cells.push((pair, metric, p));
                        }
                    }
                    Ok(cells)
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let family = scan_family_size(ranges.len()) as f64;
    let alpha = cfg.stats.alpha;
    Ok(subspaces
        .iter()
        .enumerate()
        .map(|(w, sub)| {
            let n_cells = per_seed[0][w].len();
            let mut cells = Vec::with_capacity(n_cells);
            let mut per = Vec::new();
            for c in 0..n_cells {
                let (pair, metric, _) = per_seed[0][w][c];
                let ps: Vec<f64> = per_seed.iter().filter_map(|s| s[w][c].2).collect();
                if cfg.spectral.scan_per_seed {
                    for (s, seed_cells) in seeds.iter().zip(&per_seed) {
                        if let Some(p) = seed_cells[w][c].2 {
                            per.push(SeedScanP { seed: *s, pair, metric, p });
                        }
                    }
                }
                let median_p = (!ps.is_empty()).then(|| lower_median(&ps));
                let bonferroni_p = median_p.map(|p| (p * family).min(1.0));
                cells.push(ScanCell {
                    pair,
                    metric,
                    median_p,
                    bonferroni_p,
                    nominal_significant: median_p.is_some_and(|p| p < alpha),
                    bonferroni_significant: bonferroni_p.is_some_and(|p| p < alpha),
                });
            }
            ScanWindow {
                pc_lo: sub.band.pc_lo,
                pc_hi: sub.band.pc_hi,
                offset: sub.band.pc_lo - 1,
                k_used: sub.clusters.k(),
                bonferroni_significant: cells.iter().any(|c| c.bonferroni_significant),
                cells,
                per_seed: per,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapCell {
    pub sig_rate: f64,
    pub median_r: f64,
    pub holm_rate: f64,
    /// Whether the cell carries its median r and Holm rate as a label.
    pub annotated: bool,
}

/// Bands × (pair × metric) of prompt-level summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Heatmap {
    pub bands: Vec<String>,
    pub columns: Vec<(ConditionPair, Metric)>,
    /// `cells[band][column]`; `None` where the band has no such summary.
    pub cells: Vec<Vec<Option<HeatmapCell>>>,
}

pub fn heatmap_matrix(results: &[BandResult]) -> Heatmap {
    if results.is_empty() {
        return Heatmap::default();
    }
    let columns: Vec<(ConditionPair, Metric)> = ConditionPair::ALL
        .iter()
        .flat_map(|&p| Metric::BAND.iter().map(move |&m| (p, m)))
        .collect();
    let cells = results
        .iter()
        .map(|b| {
            columns
                .iter()
                .map(|&(pair, metric)| {
                    b.summary(pair, metric, Level::Prompt).map(|s| HeatmapCell {
                        sig_rate: s.sig_rate,
                        median_r: s.median_r,
                        holm_rate: s.holm_rate,
                        annotated: s.sig_rate >= ANNOTATION_THRESHOLD,
                    })
                })
                .collect()
        })
        .collect();
    Heatmap {
        bands: results.iter().map(|b| b.band.label()).collect(),
        columns,
        cells,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_scan_has_23_windows() {
        let r = scan_ranges(768, 64, 32);
        assert_eq!(r.len(), 23);
        assert_eq!(r[0], (1, 64));
        assert_eq!(r[1], (33, 96));
        assert_eq!(r[22], (705, 768));
    }

    #[test]
    fn partial_last_window() {
        assert_eq!(scan_ranges(100, 64, 32), vec![(1, 64), (33, 96), (65, 100)]);
        assert_eq!(scan_ranges(10, 64, 32), vec![(1, 10)]);
        assert_eq!(scan_ranges(96, 64, 32), vec![(1, 64), (33, 96)]);
    }

    #[test]
    fn empty_heatmap() {
        let h = heatmap_matrix(&[]);
        assert!(h.bands.is_empty() && h.cells.is_empty());
    }
}
