//! `tracegeo` command-line driver.
//!
//! Exit codes: 0 success (skipped pairs only warn), 1 usage error, 2 data or
//! validation error, 3 numerical failure.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tracegeo::experiment::calibration_matrix;
use tracegeo::report::{write_bands, write_experiment, write_scan, InputDigest, Provenance};
use tracegeo::trace::TracePaths;
use tracegeo::{
    analyze_bands, build_report, calibrate, fit_pca, gen_traces, heatmap_matrix, load_calibration, load_trace,
    run_experiment, sliding_scan, synth, write_calibration, write_trace, Error, PipelineConfig, SynthSpec, TraceSet,
};

#[derive(Parser)]
#[command(name = "tracegeo", version, about = "Whitened cluster-geometry analysis of hidden-state traces")]
struct Cli {
    /// Worker threads for per-seed and per-band work (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Log more (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic trace pair.
    Synth(SynthArgs),
    /// Fit whitening and clustering on the calibration rows.
    Calibrate(CalibrateArgs),
    /// Full-spectrum whitening experiment.
    Analyze(AnalyzeArgs),
    /// Per-band analysis, optionally with the sliding scan.
    Spectral(SpectralArgs),
    /// Consolidate the tables in a results directory.
    Report(ReportArgs),
    /// calibrate, analyze, spectral and report in one go.
    Pipeline(PipelineArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Scenario {
    /// Default spec with no plants.
    Null,
    /// Entropy plant on the dominant band carried by half the prompts.
    Artifact,
}

#[derive(Args)]
struct SynthArgs {
    /// Synthetic spec as JSON.
    #[arg(long, conflicts_with = "scenario")]
    spec: Option<PathBuf>,
    #[arg(long, value_enum)]
    scenario: Option<Scenario>,
    #[arg(long, default_value_t = 1)]
    master_seed: u64,
    /// Output prefix; writes PREFIX.manifest.json and PREFIX.vectors.bin.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration as JSON; omitted fields take the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Trace prefix (or either member file).
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    common: Common,
    /// Output prefix of the calibration artifact.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    common: Common,
    /// Calibration artifact prefix from `calibrate`.
    #[arg(long)]
    calibration: Option<PathBuf>,
    /// Analyze only the first N prompts of each condition.
    #[arg(long)]
    prompts_per_condition: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SpectralArgs {
    #[command(flatten)]
    common: Common,
    /// Trace whose calibration rows define the bands (default: --trace).
    #[arg(long)]
    calibration_trace: Option<PathBuf>,
    /// Also run the sliding eigenspectrum scan.
    #[arg(long)]
    scan: bool,
    #[arg(long)]
    prompts_per_condition: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory holding analyze/spectral tables.
    #[arg(long)]
    results: PathBuf,
    /// Where to write the report (default: the results directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    scan: bool,
    #[arg(long)]
    prompts_per_condition: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure classes mapped onto exit codes.
enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

type CliResult<T> = Result<T, Failure>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(Failure::Usage(msg.into()))
}

fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        usage(format!("{what} {} does not exist", path.display()))
    }
}

fn load_config(path: Option<&Path>) -> CliResult<PipelineConfig> {
    match path {
        None => Ok(PipelineConfig::default()),
        Some(p) => {
            require_file(p, "config file")?;
            Ok(PipelineConfig::load(p)?)
        }
    }
}

fn pick(flag: Option<&PathBuf>, from_config: Option<&PathBuf>, what: &str) -> CliResult<PathBuf> {
    match flag.or(from_config) {
        Some(p) => Ok(p.clone()),
        None => usage(format!("{what} is required (flag or config paths)")),
    }
}

struct LoadedTrace {
    traces: TraceSet,
    digests: Vec<InputDigest>,
}

fn open_trace(prefix: &Path) -> CliResult<LoadedTrace> {
    let paths = TracePaths::from_prefix(prefix);
    require_file(&paths.manifest, "trace manifest")?;
    require_file(&paths.vectors, "trace payload")?;
    let traces = load_trace(prefix)?;
    Ok(LoadedTrace {
        traces,
        digests: vec![InputDigest::of_file(&paths.manifest)?, InputDigest::of_file(&paths.vectors)?],
    })
}

fn subset(t: TraceSet, n: Option<usize>) -> CliResult<TraceSet> {
    match n {
        Some(0) => usage("--prompts-per-condition must be >= 1"),
        Some(n) => Ok(t.limit_prompts_per_condition(n)),
        None => Ok(t),
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Run(Error::Io { path: dir.into(), source: e }))
}

/// Appends a line to the run log in `dir`.
fn run_log(dir: &Path, line: &str) -> CliResult<()> {
    use std::io::Write as _;
    let path = dir.join("run.log");
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Failure::Run(Error::Io { path: path.clone(), source: e }))?;
    writeln!(f, "{line}").map_err(|e| Failure::Run(Error::Io { path, source: e }))?;
    log::info!("{line}");
    Ok(())
}

fn cmd_synth(a: &SynthArgs) -> CliResult<()> {
    let spec = match (&a.spec, a.scenario) {
        (Some(p), None) => {
            require_file(p, "spec file")?;
            SynthSpec::load(p)?
        }
        (None, Some(Scenario::Artifact)) => synth::artifact_spec(),
        (None, Some(Scenario::Null)) => SynthSpec::default(),
        _ => return usage("give either --spec or --scenario"),
    };
    let traces = gen_traces(&spec, a.master_seed)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let paths = write_trace(&traces, &a.out)?;
    println!("wrote {} rows to {} and {}", traces.len(), paths.manifest.display(), paths.vectors.display());
    Ok(())
}

fn cmd_calibrate(a: &CalibrateArgs) -> CliResult<()> {
    let cfg = load_config(a.common.config.as_deref())?;
    let trace = pick(a.common.trace.as_ref(), cfg.paths.traces.as_ref(), "--trace")?;
    let out = pick(a.out.as_ref(), cfg.paths.calibration.as_ref(), "--out")?;
    let t = open_trace(&trace)?;
    let cal = calibrate(&t.traces, &cfg)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let paths = write_calibration(&cal, Some(t.digests[1].sha256.clone()), &out)?;
    println!("wrote {}", paths.manifest.display());
    Ok(())
}

fn cmd_analyze(a: &AnalyzeArgs) -> CliResult<()> {
    let cfg = load_config(a.common.config.as_deref())?;
    let trace = pick(a.common.trace.as_ref(), cfg.paths.traces.as_ref(), "--trace")?;
    let cal_path = pick(a.calibration.as_ref(), cfg.paths.calibration.as_ref(), "--calibration")?;
    let out = pick(a.out.as_ref(), cfg.paths.output.as_ref(), "--out")?;
    let cal_files = tracegeo::artifact::ArtifactPaths::from_prefix(&cal_path);
    require_file(&cal_files.manifest, "calibration manifest")?;
    let t = open_trace(&trace)?;
    let cal = load_calibration(&cal_path)?;
    create_dir(&out)?;
    let traces = subset(t.traces, a.prompts_per_condition)?;
    let mut prov = Provenance::new(command_line("analyze", a.prompts_per_condition), &cfg);
    prov.inputs = t.digests;
    prov.inputs.push(InputDigest::of_file(&cal_files.manifest)?);
    prov.inputs.push(InputDigest::of_file(&cal_files.payload)?);
    let res = run_experiment(&traces, &cal, &cfg)?;
    write_experiment(&out, &res, &prov)?;
    run_log(&out, &format!("analyze: {} seeds, {} pairwise results", res.seeds.len(), res.results.len()))?;
    Ok(())
}

fn command_line(cmd: &str, n: Option<usize>) -> String {
    let mut s = cmd.to_string();
    if let Some(n) = n {
        let _ = write!(s, " --prompts-per-condition {n}");
    }
    s
}

fn run_spectral(
    traces: &TraceSet,
    cal_traces: &TraceSet,
    cfg: &PipelineConfig,
    scan: bool,
    mut prov: Provenance,
    out: &Path,
) -> CliResult<()> {
    let x = calibration_matrix(cal_traces)?;
    let wm = fit_pca(&x, cal_traces.hidden_dim().min(x.rows()), cfg.whitening.epsilon)?;
    let bands = analyze_bands(traces, &wm, &cfg.spectral.bands, cfg)?;
    write_bands(out, &bands, &heatmap_matrix(&bands), &prov)?;
    run_log(out, &format!("spectral: {} bands over {} components", bands.len(), wm.n_components()))?;
    if scan {
        prov.notes.push("scan Bonferroni family = windows x 3 band metrics, applied within each condition pair".into());
        let windows = sliding_scan(traces, &wm, cfg)?;
        write_scan(out, &windows, &prov)?;
        let hits = windows.iter().filter(|w| w.bonferroni_significant).count();
        run_log(out, &format!("scan: {} windows, {hits} Bonferroni-significant", windows.len()))?;
    }
    Ok(())
}

fn cmd_spectral(a: &SpectralArgs) -> CliResult<()> {
    let cfg = load_config(a.common.config.as_deref())?;
    let trace = pick(a.common.trace.as_ref(), cfg.paths.traces.as_ref(), "--trace")?;
    let out = pick(a.out.as_ref(), cfg.paths.output.as_ref(), "--out")?;
    let t = open_trace(&trace)?;
    let mut prov = Provenance::new(command_line("spectral", a.prompts_per_condition), &cfg);
    prov.inputs = t.digests.clone();
    let cal = match &a.calibration_trace {
        Some(p) => {
            let c = open_trace(p)?;
            prov.inputs.extend(c.digests);
            Some(c.traces)
        }
        None => None,
    };
    create_dir(&out)?;
    let traces = subset(t.traces, a.prompts_per_condition)?;
    run_spectral(&traces, cal.as_ref().unwrap_or(&traces), &cfg, a.scan, prov, &out)
}

fn cmd_report(a: &ReportArgs) -> CliResult<()> {
    if !a.results.is_dir() {
        return usage(format!("results directory {} does not exist", a.results.display()));
    }
    let report = build_report(&a.results)?;
    let out = a.out.clone().unwrap_or_else(|| a.results.clone());
    report.write(&out)?;
    print!("{}", report.text());
    Ok(())
}

fn cmd_pipeline(a: &PipelineArgs) -> CliResult<()> {
    let cfg = load_config(a.common.config.as_deref())?;
    let trace = pick(a.common.trace.as_ref(), cfg.paths.traces.as_ref(), "--trace")?;
    let out = pick(a.out.as_ref(), cfg.paths.output.as_ref(), "--out")?;
    let t = open_trace(&trace)?;
    create_dir(&out)?;
    let _ = std::fs::remove_file(out.join("run.log"));

    let cal = calibrate(&t.traces, &cfg)?;
    let artifact = write_calibration(&cal, Some(t.digests[1].sha256.clone()), out.join("model"))?;
    run_log(&out, &format!("calibrate: k={} over {} components", cal.clusters.k(), cal.whitening.n_components()))?;

    let traces = subset(t.traces, a.prompts_per_condition)?;
    let mut prov = Provenance::new(command_line("pipeline", a.prompts_per_condition), &cfg);
    prov.inputs = t.digests;
    let mut analyze_prov = prov.clone();
    analyze_prov.inputs.push(InputDigest::of_file(&artifact.manifest)?);
    analyze_prov.inputs.push(InputDigest::of_file(&artifact.payload)?);
    let res = run_experiment(&traces, &cal, &cfg)?;
    write_experiment(&out, &res, &analyze_prov)?;
    run_log(&out, &format!("analyze: {} seeds, {} pairwise results", res.seeds.len(), res.results.len()))?;

    run_spectral(&traces, &traces, &cfg, a.scan, prov, &out)?;
    let report = build_report(&out)?;
    report.write(&out)?;
    run_log(&out, "report: written")?;
    print!("{}", report.text());
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numerical(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    if let Some(j) = cli.jobs {
        if j == 0 {
            eprintln!("error: --jobs must be >= 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    }
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Spectral(a) => cmd_spectral(a),
        Command::Report(a) => cmd_report(a),
        Command::Pipeline(a) => cmd_pipeline(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
