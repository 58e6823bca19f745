//! Per-token cluster-geometry metrics and their prompt-level means.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::clustering::ClusterModel;
use crate::error::{Error, Result};
use crate::matrix::{norm, Matrix};
use crate::trace::{Condition, TraceSet};
use crate::whitening::{SpectralBand, WhiteningModel};

pub const DEFAULT_TEMPERATURE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Entropy,
    MaxSim,
    WhitenedNorm,
    RawNorm,
}

impl Metric {
    pub const ALL: [Metric; 4] = [
        Metric::Entropy,
        Metric::MaxSim,
        Metric::WhitenedNorm,
        Metric::RawNorm,
    ];
    /// Metrics computed inside a spectral band.
    pub const BAND: [Metric; 3] = [Metric::Entropy, Metric::MaxSim, Metric::WhitenedNorm];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Entropy => "entropy",
            Metric::MaxSim => "max_sim",
            Metric::WhitenedNorm => "whitened_norm",
            Metric::RawNorm => "raw_norm",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown metric {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub prompt_id: String,
    pub condition: Condition,
    pub seed: u64,
    pub token_position: u32,
    pub entropy: f64,
    pub max_sim: f64,
    pub whitened_norm: f64,
    pub raw_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub prompt_id: String,
    pub condition: Condition,
    pub seed: u64,
    pub entropy: f64,
    pub max_sim: f64,
    pub whitened_norm: f64,
    pub raw_norm: f64,
    pub token_count: usize,
}

/// Metric-value access shared by token and prompt records.
pub trait HasMetrics {
    fn condition(&self) -> Condition;
    fn value(&self, metric: Metric) -> f64;
}

impl HasMetrics for MetricRecord {
    fn condition(&self) -> Condition {
        self.condition
    }

    fn value(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Entropy => self.entropy,
            Metric::MaxSim => self.max_sim,
            Metric::WhitenedNorm => self.whitened_norm,
            Metric::RawNorm => self.raw_norm,
        }
    }
}

impl HasMetrics for PromptRecord {
    fn condition(&self) -> Condition {
        self.condition
    }

    fn value(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Entropy => self.entropy,
            Metric::MaxSim => self.max_sim,
            Metric::WhitenedNorm => self.whitened_norm,
            Metric::RawNorm => self.raw_norm,
        }
    }
}

/// Values of `metric` grouped by condition, in record order.
pub fn values_by_condition<R: HasMetrics>(records: &[R], metric: Metric) -> BTreeMap<Condition, Vec<f64>> {
    let mut out: BTreeMap<Condition, Vec<f64>> = BTreeMap::new();
    for r in records {
        out.entry(r.condition()).or_default().push(r.value(metric));
    }
    out
}

/// A token excluded from the metric table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlaggedToken {
    pub prompt_id: String,
    pub condition: Condition,
    pub seed: u64,
    pub token_position: u32,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricTable {
    pub records: Vec<MetricRecord>,
    pub flagged: Vec<FlaggedToken>,
}

/// Cosine similarity of `w` to every centroid.
pub fn centroid_similarities(w: &[f64], model: &ClusterModel) -> Result<Vec<f64>> {
    if w.len() != model.dim() {
        return Err(Error::DimensionMismatch(format!(
            "vector has dimension {} but centroids have {}",
            w.len(),
            model.dim()
        )));
    }
    let wn = norm(w);
    if wn == 0.0 {
        return Err(Error::Degenerate("zero-norm vector has no direction".into()));
    }
    model
        .centroids()
        .row_iter()
        .enumerate()
        .map(|(j, c)| {
            let cn = norm(c);
            if cn == 0.0 {
                return Err(Error::Degenerate(format!("centroid {j} has zero norm")));
            }
            Ok(crate::matrix::dot(w, c) / (wn * cn))
        })
        .collect()
}

/// Shannon entropy of `softmax(s / temperature)`, normalized by `ln k`.
pub fn membership_entropy(s: &[f64], temperature: f64) -> Result<f64> {
    let k = s.len();
    if k < 2 {
        return Err(Error::InvalidInput(format!("membership entropy needs k >= 2, got {k}")));
    }
    if !(temperature > 0.0) {
        return Err(Error::InvalidInput(format!("temperature must be positive, got {temperature}")));
    }
    let scaled: Vec<f64> = s.iter().map(|v| v / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scaled.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = weights.iter().sum();
    let h: f64 = weights
        .iter()
        .map(|w| w / z)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum();
    Ok((h / (k as f64).ln()).clamp(0.0, 1.0))
}

/// Largest similarity.
pub fn peak_alignment(s: &[f64]) -> Result<f64> {
    s.iter()
        .copied()
        .reduce(f64::max)
        .ok_or_else(|| Error::InvalidInput("peak alignment of an empty similarity vector".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub temperature: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            temperature: DEFAULT_TEMPERATURE,
        }
    }
}

/// Metrics for every experimental row of `traces`, whitened on all
/// retained components of `wm`.
pub fn compute_metric_table(
    traces: &TraceSet,
    wm: &WhiteningModel,
    cm: &ClusterModel,
    cfg: &MetricConfig,
) -> Result<MetricTable> {
    let experimental = traces.filter(|r| r.condition.is_experimental());
    let raw = experimental.matrix();
    let whitened = wm.whiten(&raw)?;
    table_from_whitened(&experimental, &raw, &whitened, cm, cfg)
}

/// As [`compute_metric_table`], whitening inside one spectral band.
pub fn compute_band_metric_table(
    traces: &TraceSet,
    wm: &WhiteningModel,
    band: &SpectralBand,
    cm: &ClusterModel,
    cfg: &MetricConfig,
) -> Result<MetricTable> {
    let experimental = traces.filter(|r| r.condition.is_experimental());
    let raw = experimental.matrix();
    let whitened = wm.band_whiten(&raw, band)?;
    table_from_whitened(&experimental, &raw, &whitened, cm, cfg)
}

/// Metrics from precomputed whitened rows; `experimental` index order must
/// match the rows of `raw` and `whitened`.
pub fn table_from_whitened(
    experimental: &TraceSet,
    raw: &Matrix,
    whitened: &Matrix,
    cm: &ClusterModel,
    cfg: &MetricConfig,
) -> Result<MetricTable> {
    if whitened.cols() != cm.dim() {
        return Err(Error::DimensionMismatch(format!(
            "whitened dimension {} does not match centroid dimension {}",
            whitened.cols(),
            cm.dim()
        )));
    }
    if cm.k() < 2 {
        return Err(Error::InvalidInput("membership entropy needs k >= 2 centroids".into()));
    }
    let c_norms: Vec<f64> = cm.centroids().row_iter().map(norm).collect();
    if let Some(j) = c_norms.iter().position(|&n| n == 0.0) {
        return Err(Error::Degenerate(format!("centroid {j} has zero norm")));
    }
    let dots = whitened.matmul_transposed(cm.centroids());

    let mut table = MetricTable::default();
    let mut sims = vec![0.0; cm.k()];
    for (i, rec) in experimental.index().iter().enumerate() {
        let w = whitened.row(i);
        let wn = norm(w);
        if wn == 0.0 || !wn.is_finite() {
            log::warn!(
                "excluding token {}/{}/{}: whitened vector has zero norm",
                rec.prompt_id,
                rec.seed,
                rec.token_position
            );
            table.flagged.push(FlaggedToken {
                prompt_id: rec.prompt_id.clone(),
                condition: rec.condition,
                seed: rec.seed,
                token_position: rec.token_position,
                reason: "zero-norm whitened vector".into(),
            });
            continue;
        }
        for ((s, d), cn) in sims.iter_mut().zip(dots.row(i)).zip(&c_norms) {
            *s = (d / (wn * cn)).clamp(-1.0, 1.0);
        }
        table.records.push(MetricRecord {
            prompt_id: rec.prompt_id.clone(),
            condition: rec.condition,
            seed: rec.seed,
            token_position: rec.token_position,
            entropy: membership_entropy(&sims, cfg.temperature)?,
            max_sim: peak_alignment(&sims)?,
            whitened_norm: wn,
            raw_norm: norm(raw.row(i)),
        });
    }
    Ok(table)
}

/// Arithmetic mean of each metric per (prompt, seed), in first-appearance order.
pub fn prompt_aggregate(records: &[MetricRecord]) -> Vec<PromptRecord> {
    let mut slot: HashMap<(&str, u64), usize> = HashMap::new();
    let mut out: Vec<PromptRecord> = Vec::new();
    for r in records {
        let i = *slot.entry((r.prompt_id.as_str(), r.seed)).or_insert_with(|| {
            out.push(PromptRecord {
                prompt_id: r.prompt_id.clone(),
                condition: r.condition,
                seed: r.seed,
                entropy: 0.0,
                max_sim: 0.0,
                whitened_norm: 0.0,
                raw_norm: 0.0,
                token_count: 0,
            });
            out.len() - 1
        });
        let p = &mut out[i];
        p.entropy += r.entropy;
        p.max_sim += r.max_sim;
        p.whitened_norm += r.whitened_norm;
        p.raw_norm += r.raw_norm;
        p.token_count += 1;
    }
    for p in &mut out {
        let n = p.token_count as f64;
        p.entropy /= n;
        p.max_sim /= n;
        p.whitened_norm /= n;
        p.raw_norm /= n;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::KMeansConfig;

    fn model(rows: &[[f64; 2]]) -> ClusterModel {
        ClusterModel::from_parts(
            Matrix::from_rows(rows).unwrap(),
            KMeansConfig::default(),
            0.0,
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn similarity_examples() {
        let m = model(&[[1.0, 0.0], [0.0, 1.0]]);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let s = centroid_similarities(&[h, h], &m).unwrap();
        assert!((s[0] - h).abs() < 1e-15 && (s[1] - h).abs() < 1e-15);
        let s = centroid_similarities(&[0.0, 3.0], &m).unwrap();
        assert_eq!(s, vec![0.0, 1.0]);
        assert!(matches!(
            centroid_similarities(&[0.0, 0.0], &m),
            Err(Error::Degenerate(_))
        ));
        let bad = model(&[[1.0, 0.0], [0.0, 0.0]]);
        assert!(centroid_similarities(&[1.0, 1.0], &bad).is_err());
    }

    #[test]
    fn orthogonal_vector_has_zero_similarity() {
        let m = ClusterModel::from_parts(
            Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 2.0, 0.0]]).unwrap(),
            KMeansConfig::default(),
            0.0,
            vec![],
        )
        .unwrap();
        assert_eq!(centroid_similarities(&[0.0, 0.0, 5.0], &m).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn entropy_limits() {
        assert!((membership_entropy(&[0.3; 7], 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(membership_entropy(&[50.0, -50.0], 1.0).unwrap() < 1e-40);
        assert!(membership_entropy(&[1.0], 1.0).is_err());
        assert!(membership_entropy(&[1.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn peak_examples() {
        assert_eq!(peak_alignment(&[0.1, 0.9, 0.3]).unwrap(), 0.9);
        assert_eq!(peak_alignment(&[-0.4, -0.2, -0.7]).unwrap(), -0.2);
        assert!(peak_alignment(&[]).is_err());
    }

    fn token(p: &str, pos: u32, max_sim: f64) -> MetricRecord {
        MetricRecord {
            prompt_id: p.into(),
            condition: Condition::T2,
            seed: 3,
            token_position: pos,
            entropy: 0.5,
            max_sim,
            whitened_norm: 1.0,
            raw_norm: 2.0,
        }
    }

    #[test]
    fn aggregation() {
        let single = prompt_aggregate(&[token("a", 0, 0.7)]);
        assert_eq!(single.len(), 1);
        assert_eq!(single[0].max_sim, 0.7);
        assert_eq!(single[0].token_count, 1);

        let two = prompt_aggregate(&[token("a", 0, 0.2), token("a", 1, 0.4), token("b", 0, 0.9)]);
        assert_eq!(two.len(), 2);
        assert!((two[0].max_sim - 0.3).abs() < 1e-15);
        assert_eq!(two[0].token_count + two[1].token_count, 3);
        assert!(prompt_aggregate(&[]).is_empty());
    }

    #[test]
    fn metric_names_round_trip() {
        for m in Metric::ALL {
            assert_eq!(m.as_str().parse::<Metric>().unwrap(), m);
        }
    }
}
