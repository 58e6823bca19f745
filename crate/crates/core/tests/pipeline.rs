mod common;

use common::{small_config, small_spec};
use tracegeo::stats::Level;
use tracegeo::synth::artifact_spec;
use tracegeo::*;

#[test]
fn generator_emits_the_declared_counts() {
    let spec = small_spec();
    let t = gen_traces(&spec, 2).unwrap();
    let cal = spec.n_calibration_prompts * spec.tokens_per_prompt;
    let exp = 3 * spec.n_prompts_per_condition * spec.n_seeds * spec.tokens_per_prompt;
    assert_eq!(t.len(), cal + exp);
    assert_eq!(t.hidden_dim(), spec.hidden_dim);
    assert_eq!(t.seeds(), vec![1, 2, 3]);
    for (c, prompts) in t.prompts_by_condition() {
        let want = if c.is_experimental() { spec.n_prompts_per_condition } else { spec.n_calibration_prompts };
        assert_eq!(prompts.len(), want, "{c}");
    }
}

#[test]
fn generator_is_deterministic_per_master_seed() {
    let spec = small_spec();
    let a = gen_traces(&spec, 5).unwrap();
    assert_eq!(a.raw_vectors(), gen_traces(&spec, 5).unwrap().raw_vectors());
    assert_ne!(a.raw_vectors(), gen_traces(&spec, 6).unwrap().raw_vectors());
}

#[test]
fn artifact_scenario_plants_half_the_prompts() {
    let spec = artifact_spec();
    assert_eq!(spec.plants.len(), 1);
    assert_eq!(spec.plants[0].target_metric, PlantTarget::Entropy);
    assert_eq!(spec.plants[0].prompts, Some(spec.n_prompts_per_condition / 2));
}

#[test]
fn pipeline_runs_on_a_small_world() {
    let t = gen_traces(&small_spec(), 3).unwrap();
    let cfg = small_config();
    let cal = calibrate(&t, &cfg).unwrap();
    let res = run_experiment(&t, &cal, &cfg).unwrap();
    assert_eq!(res.seeds, vec![1, 2, 3]);
    // 3 pairs x 4 metrics x 2 levels per seed
    assert_eq!(res.results.len(), 3 * 4 * 2 * 3);
    assert_eq!(res.summaries.len(), 3 * 4 * 2);
    for s in &res.summaries {
        assert!(s.holm_rate <= s.sig_rate);
        assert_eq!(s.n_seeds, 3);
    }
    assert_eq!(res.prompts.len(), 3 * 8 * 3);
}

#[test]
fn bands_do_not_depend_on_their_neighbours() {
    let t = gen_traces(&small_spec(), 3).unwrap();
    let cfg = small_config();
    let wm = fit_pca(&experiment::calibration_matrix(&t).unwrap(), 16, 1e-5).unwrap();
    let both = analyze_bands(&t, &wm, &cfg.spectral.bands, &cfg).unwrap();
    let alone = analyze_band(&t, &wm, &cfg.spectral.bands[1], &cfg).unwrap();
    assert_eq!(both[1], alone);
    assert_eq!(heatmap_matrix(&both).bands.len(), 2);
}

#[test]
fn missing_condition_drops_its_pairs_without_failing() {
    let t = gen_traces(&small_spec(), 3).unwrap();
    let cfg = small_config();
    let cal = calibrate(&t, &cfg).unwrap();
    let without = t.filter(|r| r.condition != Condition::T3);
    let res = run_experiment(&without, &cal, &cfg).unwrap();
    assert!(res.summaries.iter().all(|s| s.pair.first != Condition::T3 && s.pair.second != Condition::T3));
    assert!(!res.summaries.is_empty());
}

#[test]
fn k_above_calibration_rows_is_an_error() {
    let t = gen_traces(&small_spec(), 3).unwrap();
    let mut cfg = small_config();
    cfg.clustering.k = 10_000;
    assert!(calibrate(&t, &cfg).is_err());
}

#[test]
fn null_mid_range_bands_stay_quiet() {
    let spec = SynthSpec { n_seeds: 10, tokens_per_prompt: 60, ..SynthSpec::default() };
    let t = gen_traces(&spec, 77).unwrap();
    let mut cfg = PipelineConfig::default();
    cfg.stats = cfg.stats.mw_only();
    cfg.seeds = (1..=10).collect();
    let wm = fit_pca(&experiment::calibration_matrix(&t).unwrap(), 768, 1e-5).unwrap();
    let mid: Vec<SpectralBand> = default_bands().into_iter().filter(|b| b.name.starts_with("Mid")).collect();
    let res = analyze_bands(&t, &wm, &mid, &cfg).unwrap();
    let rates: Vec<f64> = res
        .iter()
        .flat_map(|b| b.summaries.iter().filter(|s| s.level == Level::Prompt).map(|s| s.sig_rate))
        .collect();
    let mean = rates.iter().sum::<f64>() / rates.len() as f64;
    assert!(mean <= 0.15, "mean null sig_rate {mean}");
}
