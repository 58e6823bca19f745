mod common;

use common::{small_config, small_spec};
use tracegeo::report::{read_pairwise, write_bands, write_experiment, DiscordancePoint};
use tracegeo::stats::ConditionPair;
use tracegeo::*;

fn results_dir() -> (tempfile::TempDir, ExperimentResult) {
    let dir = tempfile::tempdir().unwrap();
    let t = gen_traces(&small_spec(), 8).unwrap();
    let cfg = small_config();
    let cal = calibrate(&t, &cfg).unwrap();
    let res = run_experiment(&t, &cal, &cfg).unwrap();
    let prov = Provenance::new("test", &cfg);
    write_experiment(dir.path(), &res, &prov).unwrap();
    let wm = fit_pca(&experiment::calibration_matrix(&t).unwrap(), 16, 1e-5).unwrap();
    let bands = analyze_bands(&t, &wm, &cfg.spectral.bands, &cfg).unwrap();
    write_bands(dir.path(), &bands, &heatmap_matrix(&bands), &prov).unwrap();
    (dir, res)
}

#[test]
fn pairwise_csv_reads_back() {
    let (dir, res) = results_dir();
    let text = std::fs::read_to_string(dir.path().join("analyze_pairwise.csv")).unwrap();
    let rows = read_pairwise(&text).unwrap();
    assert_eq!(rows.len(), res.results.len());
    for ((exp, got), want) in rows.iter().zip(&res.results) {
        assert_eq!(exp, "full");
        assert_eq!((got.pair, got.metric, got.level, got.seed), (want.pair, want.metric, want.level, want.seed));
        assert!((got.p_mw - want.p_mw).abs() <= 1e-12 * want.p_mw.max(1e-300));
    }
}

#[test]
fn report_collects_every_experiment() {
    let (dir, res) = results_dir();
    let report = build_report(dir.path()).unwrap();
    let names: Vec<&str> = report.experiments.iter().map(|e| e.experiment.as_str()).collect();
    assert_eq!(names.len(), 3, "{names:?}");
    let full = report.experiments.iter().find(|e| e.experiment == "full").unwrap();
    assert_eq!(full.summaries.len(), res.summaries.len());
    assert_eq!(report.config.whitening.n_components, 16);
    assert!(report.text().contains("== full =="));

    let out = tempfile::tempdir().unwrap();
    report.write(out.path()).unwrap();
    for f in ["report_table.csv", "report_discordance.csv", "report.txt"] {
        assert!(out.path().join(f).exists(), "{f}");
    }
}

#[test]
fn one_pair_gives_one_row_per_metric_and_level() {
    let (dir, _) = results_dir();
    let path = dir.path().join("analyze_pairwise.csv");
    let text = std::fs::read_to_string(&path).unwrap();
    let keep: Vec<&str> = text
        .lines()
        .filter(|l| l.starts_with('#') || l.starts_with("experiment") || l.contains("T1-T2"))
        .collect();
    let only = tempfile::tempdir().unwrap();
    std::fs::write(only.path().join("analyze_pairwise.csv"), keep.join("\n") + "\n").unwrap();
    let report = build_report(only.path()).unwrap();
    let s = &report.experiments[0].summaries;
    assert_eq!(s.len(), 4 * 2);
    assert!(s.iter().all(|x| x.pair == ConditionPair::new(Condition::T1, Condition::T2)));
}

#[test]
fn empty_directory_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = build_report(dir.path()).unwrap_err();
    assert!(err.to_string().contains("no results found"), "{err}");
}

#[test]
fn discordance_quadrants() {
    let point = |token: f64, prompt: f64| DiscordancePoint {
        experiment: "full".into(),
        metric: Metric::Entropy,
        pair: ConditionPair::new(Condition::T1, Condition::T2),
        token_neg_log_p: token,
        prompt_neg_log_p: prompt,
    };
    assert_eq!(point(5.0, 0.2).quadrant(0.05), "token_only");
    assert_eq!(point(5.0, 2.0).quadrant(0.05), "both");
    assert_eq!(point(0.1, 2.0).quadrant(0.05), "prompt_only");
    assert_eq!(point(0.1, 0.2).quadrant(0.05), "neither");
}
