//! Pipeline configuration. Defaults are the published settings; anything a
//! caller overrides is visible in the JSON written to every output header.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clustering::{KMeansConfig, DEFAULT_K};
use crate::error::{Error, Result};
use crate::metrics::{Metric, MetricConfig};
use crate::stats::StatsConfig;
use crate::whitening::{default_bands, SpectralBand, DEFAULT_COMPONENTS, DEFAULT_EPSILON};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct PathsConfig {
    pub traces: Option<PathBuf>,
    pub calibration: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WhiteningConfig {
    /// Components kept by the full-spectrum experiment.
    pub n_components: usize,
    pub epsilon: f64,
}

impl Default for WhiteningConfig {
    fn default() -> Self {
        WhiteningConfig {
            n_components: DEFAULT_COMPONENTS,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusteringConfig {
    pub k: usize,
    #[serde(flatten)]
    pub kmeans: KMeansConfig,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        ClusteringConfig {
            k: DEFAULT_K,
            kmeans: KMeansConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectralConfig {
    pub bands: Vec<SpectralBand>,
    pub scan_width: usize,
    pub scan_step: usize,
    /// Also report every seed's p per scan window.
    pub scan_per_seed: bool,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        SpectralConfig {
            bands: default_bands(),
            scan_width: 64,
            scan_step: 32,
            scan_per_seed: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    pub whitening: WhiteningConfig,
    pub clustering: ClusteringConfig,
    pub stats: StatsConfig,
    /// Experimental seeds to analyze; seeds absent from the traces are skipped.
    pub seeds: Vec<u64>,
    pub spectral: SpectralConfig,
    pub metrics: Vec<Metric>,
    pub metric: MetricConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            paths: PathsConfig::default(),
            whitening: WhiteningConfig::default(),
            clustering: ClusteringConfig::default(),
            stats: StatsConfig::default(),
            seeds: (1..=20).collect(),
            spectral: SpectralConfig::default(),
            metrics: Metric::ALL.to_vec(),
            metric: MetricConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.whitening.n_components == 0 {
            errs.push("whitening.n_components must be >= 1".to_string());
        }
        if !(self.whitening.epsilon >= 0.0 && self.whitening.epsilon.is_finite()) {
            errs.push("whitening.epsilon must be finite and >= 0".to_string());
        }
        if self.clustering.k < 2 {
            errs.push("clustering.k must be >= 2 (entropy needs two centroids)".to_string());
        }
        let km = &self.clustering.kmeans;
        if km.batch_size == 0 || km.n_init == 0 || km.max_iterations == 0 {
            errs.push("clustering batch_size, n_init and max_iterations must be >= 1".to_string());
        }
        if !(self.stats.alpha > 0.0 && self.stats.alpha < 1.0) {
            errs.push("stats.alpha must lie in (0, 1)".to_string());
        }
        if self.seeds.is_empty() {
            errs.push("seeds must not be empty".to_string());
        }
        if self.metrics.is_empty() {
            errs.push("metrics must not be empty".to_string());
        }
        if !(self.metric.temperature > 0.0) {
            errs.push("metric.temperature must be > 0".to_string());
        }
        let sp = &self.spectral;
        if sp.scan_width == 0 || sp.scan_step == 0 {
            errs.push("scan width and step must be >= 1".to_string());
        }
        for b in &sp.bands {
            if b.pc_lo == 0 || b.pc_lo > b.pc_hi {
                errs.push(format!("band {} has an empty range", b.name));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig =
            serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// Top-level fields whose values differ from the defaults.
    pub fn overrides(&self) -> Vec<String> {
        let a = serde_json::to_value(self).expect("config serializes");
        let b = serde_json::to_value(PipelineConfig::default()).expect("config serializes");
        let mut out = Vec::new();
        diff("", &a, &b, &mut out);
        out
    }
}

fn diff(prefix: &str, a: &serde_json::Value, b: &serde_json::Value, out: &mut Vec<String>) {
    match (a, b) {
        (serde_json::Value::Object(x), serde_json::Value::Object(y)) => {
            for (k, v) in x {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                match y.get(k) {
                    Some(w) => diff(&key, v, w, out),
                    None => out.push(key),
                }
            }
        }
        _ if a != b => out.push(prefix.to_string()),
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_published_settings() {
        let c = PipelineConfig::default();
        assert_eq!(c.whitening.n_components, 256);
        assert_eq!(c.whitening.epsilon, 1e-5);
        assert_eq!(c.clustering.k, 40);
        assert_eq!(c.clustering.kmeans.batch_size, 1024);
        assert_eq!(c.clustering.kmeans.n_init, 5);
        assert_eq!(c.clustering.kmeans.rng_seed, 42);
        assert_eq!(c.stats.alpha, 0.05);
        assert_eq!(c.stats.n_perm, 50_000);
        assert_eq!(c.stats.n_boot, 10_000);
        assert_eq!(c.seeds, (1..=20).collect::<Vec<u64>>());
        assert_eq!(c.spectral.bands.len(), 6);
        assert_eq!((c.spectral.scan_width, c.spectral.scan_step), (64, 32));
        assert_eq!(c.metrics.len(), 4);
        assert!(c.overrides().is_empty());
    }

    #[test]
    fn partial_json_and_overrides() {
        let c = PipelineConfig::from_json(r#"{"clustering": {"k": 12}, "seeds": [1, 2]}"#).unwrap();
        assert_eq!(c.clustering.k, 12);
        assert_eq!(c.clustering.kmeans.batch_size, 1024);
        assert_eq!(c.overrides(), vec!["clustering.k".to_string(), "seeds".to_string()]);
        assert_eq!(PipelineConfig::from_json(&c.to_json()).unwrap(), c);
        assert!(PipelineConfig::from_json(r#"{"clustering": {"k": 1}}"#).is_err());
        assert!(PipelineConfig::from_json("{not json").is_err());
    }
}
