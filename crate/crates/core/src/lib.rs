//! Whitened cluster-geometry analysis of hidden-state traces.
//!
//! The pipeline fits a PCA whitening transform and mini-batch k-means on a
//! fixed calibration set, scores every experimental token by its membership
//! entropy, peak centroid alignment and norms, and compares conditions with
//! prompt-level and token-level nonparametric tests repeated across seeds.

// `!(x > 0.0)` is used on purpose so NaN lands on the error path.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod artifact;
pub mod clustering;
pub mod config;
pub mod error;
pub mod experiment;
pub mod matrix;
pub mod metrics;
pub mod report;
pub mod rng;
pub mod spectral;
pub mod stats;
pub mod synth;
pub mod trace;
pub mod whitening;

pub use artifact::{load_calibration, write_calibration};
pub use clustering::{adapted_k, fit_kmeans, ClusterModel, KMeansConfig};
pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use experiment::{calibrate, run_experiment, Calibration, ExperimentResult};
pub use matrix::Matrix;
pub use metrics::{compute_metric_table, prompt_aggregate, Metric, MetricRecord, MetricTable, PromptRecord};
pub use report::{build_report, Provenance, Report};
pub use spectral::{analyze_band, analyze_bands, heatmap_matrix, sliding_scan, BandResult, Heatmap, ScanWindow};
pub use synth::{gen_artifact_scenario, gen_traces, PlantTarget, PlantedEffect, SynthSpec, SynthWorld};
pub use trace::{load_trace, partition, write_trace, Condition, IndexRecord, TraceMetadata, TraceSet};
pub use whitening::{default_bands, fit_pca, SpectralBand, WhiteningModel};
