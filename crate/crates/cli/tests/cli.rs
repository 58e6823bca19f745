use std::path::Path;
use std::process::{Command, Output};

use tracegeo::synth::default_eigen_profile;
use tracegeo::{load_trace, PipelineConfig, SpectralBand, SynthSpec};

fn tracegeo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tracegeo")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

/// Writes a small spec and config into `dir`, returning their paths.
fn inputs(dir: &Path) -> (String, String) {
    let spec = SynthSpec {
        hidden_dim: 32,
        eigen_profile: default_eigen_profile(32),
        n_calibration_prompts: 10,
        tokens_per_prompt: 8,
        n_prompts_per_condition: 6,
        n_seeds: 2,
        ..SynthSpec::default()
    };
    let mut cfg = PipelineConfig::default();
    cfg.whitening.n_components = 16;
    cfg.clustering.k = 5;
    cfg.seeds = vec![1, 2];
    cfg.stats.n_perm = 200;
    cfg.stats.n_boot = 100;
    cfg.spectral.bands = vec![SpectralBand::new("Low", 1, 8).unwrap(), SpectralBand::new("High", 9, 16).unwrap()];
    let (s, c) = (dir.join("spec.json"), dir.join("config.json"));
    std::fs::write(&s, spec.to_json()).unwrap();
    std::fs::write(&c, cfg.to_json()).unwrap();
    (s.to_string_lossy().into_owned(), c.to_string_lossy().into_owned())
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&tracegeo(&["synth", "--spec", &p(dir.path(), "missing.json"), "--out", &p(dir.path(), "t")])), 1);
    assert_eq!(code(&tracegeo(&["analyze", "--no-such-flag"])), 1);
    assert_eq!(code(&tracegeo(&["calibrate", "--trace", &p(dir.path(), "nothing")])), 1);
}

#[test]
fn synth_writes_the_declared_rows() {
    let dir = tempfile::tempdir().unwrap();
    let (spec, _) = inputs(dir.path());
    let o = tracegeo(&["synth", "--spec", &spec, "--master-seed", "3", "--out", &p(dir.path(), "t")]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let t = load_trace(dir.path().join("t")).unwrap();
    assert_eq!(t.len(), 10 * 8 + 3 * 6 * 2 * 8);
}

#[test]
fn calibrate_is_bitwise_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (spec, cfg) = inputs(dir.path());
    let trace = p(dir.path(), "t");
    assert_eq!(code(&tracegeo(&["synth", "--spec", &spec, "--out", &trace])), 0);
    for name in ["a", "b"] {
        let o = tracegeo(&["calibrate", "--config", &cfg, "--trace", &trace, "--out", &p(dir.path(), name)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for ext in ["calibration.json", "calibration.bin"] {
        let a = std::fs::read(dir.path().join(format!("a.{ext}"))).unwrap();
        let b = std::fs::read(dir.path().join(format!("b.{ext}"))).unwrap();
        assert_eq!(a, b, "{ext}");
    }
}

#[test]
fn too_many_clusters_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let (spec, _) = inputs(dir.path());
    let trace = p(dir.path(), "t");
    assert_eq!(code(&tracegeo(&["synth", "--spec", &spec, "--out", &trace])), 0);
    let mut cfg = PipelineConfig::default();
    cfg.whitening.n_components = 16;
    cfg.clustering.k = 1000;
    let path = p(dir.path(), "big_k.json");
    std::fs::write(&path, cfg.to_json()).unwrap();
    let o = tracegeo(&["calibrate", "--config", &path, "--trace", &trace, "--out", &p(dir.path(), "c")]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn analyze_tolerates_a_missing_condition() {
    let dir = tempfile::tempdir().unwrap();
    let (spec, cfg) = inputs(dir.path());
    let trace = p(dir.path(), "t");
    assert_eq!(code(&tracegeo(&["synth", "--spec", &spec, "--out", &trace])), 0);
    let t = load_trace(&trace).unwrap();
    let cut = t.filter(|r| r.condition != tracegeo::Condition::T2);
    tracegeo::write_trace(&cut, dir.path().join("cut")).unwrap();
    let cal = p(dir.path(), "cal");
    assert_eq!(code(&tracegeo(&["calibrate", "--config", &cfg, "--trace", &trace, "--out", &cal])), 0);
    let out = p(dir.path(), "res");
    let o = tracegeo(&["analyze", "--config", &cfg, "--trace", &p(dir.path(), "cut"), "--calibration", &cal, "--out", &out]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(dir.path().join("res/analyze_pairwise.csv")).unwrap();
    assert!(table.contains("T1-T3") && !table.contains("T1-T2"));
}

#[test]
fn pipeline_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let (spec, cfg) = inputs(dir.path());
    let trace = p(dir.path(), "t");
    assert_eq!(code(&tracegeo(&["synth", "--spec", &spec, "--out", &trace])), 0);
    let out = p(dir.path(), "run");
    let o = tracegeo(&["pipeline", "--config", &cfg, "--trace", &trace, "--out", &out]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("== full =="));
    for f in ["analyze_pairwise.csv", "spectral_pairwise.csv", "report_table.csv", "model.calibration.json", "run.log"] {
        assert!(dir.path().join("run").join(f).exists(), "{f}");
    }
    let again = p(dir.path(), "again");
    assert_eq!(code(&tracegeo(&["report", "--results", &out, "--out", &again])), 0);
    assert!(dir.path().join("again/report.txt").exists());
}

#[test]
fn report_on_an_empty_directory_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = tracegeo(&["report", "--results", &p(dir.path(), "")]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("no results found"));
}
