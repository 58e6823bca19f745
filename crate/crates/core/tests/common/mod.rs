#![allow(dead_code)]

use tracegeo::synth::default_eigen_profile;
use tracegeo::{PipelineConfig, SpectralBand, SynthSpec};

/// A world small enough for debug-speed tests.
pub fn small_spec() -> SynthSpec {
    SynthSpec {
        hidden_dim: 32,
        eigen_profile: default_eigen_profile(32),
        n_calibration_prompts: 10,
        tokens_per_prompt: 8,
        n_prompts_per_condition: 8,
        n_seeds: 3,
        ..SynthSpec::default()
    }
}

pub fn small_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.whitening.n_components = 16;
    cfg.clustering.k = 5;
    cfg.seeds = vec![1, 2, 3];
    cfg.stats.n_perm = 500;
    cfg.stats.n_boot = 200;
    cfg.spectral.bands = vec![
        SpectralBand::new("Low", 1, 8).unwrap(),
        SpectralBand::new("High", 9, 16).unwrap(),
    ];
    cfg
}
