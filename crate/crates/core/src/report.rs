//! Result tables on disk and the consolidated report built from them.
//!
//! Every file starts with `#` lines holding the effective configuration and
//! the digests of its inputs, then a comma-separated table. Inputs are named
//! by file name only, and numbers are printed in shortest round-trip form,
//! so reruns on the same inputs produce identical bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::experiment::ExperimentResult;
use crate::metrics::{Metric, PromptRecord};
use crate::spectral::{BandResult, Heatmap, ScanWindow};
use crate::stats::{aggregate_runs, format_ratio, lower_median, ConditionPair, Level, MultiRunSummary, PairwiseResult};
use crate::trace::Condition;
use crate::config::PipelineConfig;

/// Experiment label of the full-spectrum whitening experiment.
pub const FULL_EXPERIMENT: &str = "full";

const PAIRWISE_SUFFIX: &str = "_pairwise.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct InputDigest {
    pub name: String,
    pub sha256: String,
}

impl InputDigest {
    /// Digest of a file, recorded under its file name.
    pub fn of_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Ok(InputDigest {
            name: path
                .file_name()
                .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned()),
            sha256: crate::artifact::file_digest(path)?,
        })
    }
}

/// Audit trail written at the top of every output file.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub command: String,
    pub config: PipelineConfig,
    pub inputs: Vec<InputDigest>,
    pub notes: Vec<String>,
}

impl Provenance {
    pub fn new(command: impl Into<String>, config: &PipelineConfig) -> Self {
        Provenance {
            command: command.into(),
            config: config.clone(),
            inputs: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn header(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# tracegeo {} {}", env!("CARGO_PKG_VERSION"), self.command);
        let _ = writeln!(s, "# config: {}", self.config.to_json());
        let o = self.config.overrides();
        let _ = writeln!(s, "# overrides: {}", if o.is_empty() { "none".into() } else { o.join(", ") });
        for i in &self.inputs {
            let _ = writeln!(s, "# input: {} sha256={}", i.name, i.sha256);
        }
        for n in &self.notes {
            let _ = writeln!(s, "# note: {n}");
        }
        s
    }
}

fn config_from_header(text: &str) -> Option<PipelineConfig> {
    text.lines()
        .take_while(|l| l.starts_with('#'))
        .find_map(|l| l.strip_prefix("# config: "))
        .and_then(|j| serde_json::from_str(j).ok())
}

/// A header row plus string cells.
struct Table {
    columns: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(columns: &[&'static str]) -> Self {
        Table {
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    fn render(&self, header: &str) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record(r).map_err(csv_err)?;
        }
        let body = String::from_utf8(w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?)
            .expect("csv output is utf-8");
        Ok(format!("{header}{body}"))
    }

    fn write(&self, dir: &Path, name: &str, prov: &Provenance) -> Result<PathBuf> {
        let path = dir.join(name);
        std::fs::write(&path, self.render(&prov.header())?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidInput(format!("csv: {e}"))
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

const PAIRWISE_COLUMNS: [&str; 18] = [
    "experiment", "seed", "pair", "metric", "level", "n1", "n2", "mean_first", "mean_second", "u", "p_mw", "p_perm",
    "r", "r_ci_lo", "r_ci_hi", "ci_degenerate", "holm_p", "holm_significant",
];

fn pairwise_table<'a>(rows: impl IntoIterator<Item = (&'a str, &'a PairwiseResult)>) -> Table {
    let mut t = Table::new(&PAIRWISE_COLUMNS);
    for (exp, r) in rows {
        t.push(vec![
            exp.to_string(),
            r.seed.to_string(),
            r.pair.label(),
            r.metric.to_string(),
            r.level.to_string(),
            r.n1.to_string(),
            r.n2.to_string(),
            num(r.mean_first),
            num(r.mean_second),
            num(r.u),
            num(r.p_mw),
            opt(r.p_perm),
            num(r.r),
            opt(r.r_ci.map(|c| c.0)),
            opt(r.r_ci.map(|c| c.1)),
            r.ci_degenerate.to_string(),
            num(r.holm_p),
            r.holm_significant.to_string(),
        ]);
    }
    t
}

const SUMMARY_COLUMNS: [&str; 14] = [
    "experiment", "pair", "metric", "level", "n_seeds", "sig_count", "sig_rate", "holm_count", "holm_rate", "median_r",
    "direction", "majority_sign", "median_p", "pseudo_ratio",
];

fn summary_table<'a>(rows: impl IntoIterator<Item = (&'a str, &'a MultiRunSummary)>) -> Table {
    let mut t = Table::new(&SUMMARY_COLUMNS);
    for (exp, s) in rows {
        t.push(vec![
            exp.to_string(),
            s.pair.label(),
            s.metric.to_string(),
            s.level.to_string(),
            s.n_seeds.to_string(),
            s.sig_count.to_string(),
            num(s.sig_rate),
            s.holm_count.to_string(),
            num(s.holm_rate),
            num(s.median_r),
            s.direction_label(),
            s.majority_sign.to_string(),
            num(s.median_p),
            opt(s.pseudo_ratio),
        ]);
    }
    t
}

fn prompt_table(prompts: &[PromptRecord]) -> Table {
    let mut t = Table::new(&[
        "prompt_id", "condition", "seed", "entropy", "max_sim", "whitened_norm", "raw_norm", "token_count",
    ]);
    for p in prompts {
        t.push(vec![
            p.prompt_id.clone(),
            p.condition.to_string(),
            p.seed.to_string(),
            num(p.entropy),
            num(p.max_sim),
            num(p.whitened_norm),
            num(p.raw_norm),
            p.token_count.to_string(),
        ]);
    }
    t
}

/// Writes the full-spectrum experiment's tables into `dir`.
pub fn write_experiment(dir: impl AsRef<Path>, res: &ExperimentResult, prov: &Provenance) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    let full = FULL_EXPERIMENT;
    out.push(pairwise_table(res.results.iter().map(|r| (full, r))).write(dir, &format!("analyze{PAIRWISE_SUFFIX}"), prov)?);
    out.push(summary_table(res.summaries.iter().map(|s| (full, s))).write(dir, "analyze_summary.csv", prov)?);

    let mut kw = Table::new(&["seed", "metric", "level", "h", "p"]);
    for k in &res.kruskal {
        kw.push(vec![k.seed.to_string(), k.metric.to_string(), k.level.to_string(), num(k.h), num(k.p)]);
    }
    out.push(kw.write(dir, "analyze_kruskal.csv", prov)?);
    out.push(prompt_table(&res.prompts).write(dir, "analyze_prompts.csv", prov)?);

    let mut fl = Table::new(&["prompt_id", "condition", "seed", "token_position", "reason"]);
    for f in &res.flagged {
        fl.push(vec![
            f.prompt_id.clone(),
            f.condition.to_string(),
            f.seed.to_string(),
            f.token_position.to_string(),
            f.reason.clone(),
        ]);
    }
    out.push(fl.write(dir, "analyze_flagged.csv", prov)?);
    Ok(out)
}

/// Band tables: per-seed results, summaries, band bookkeeping and the
/// heatmap plot data.
pub fn write_bands(dir: impl AsRef<Path>, bands: &[BandResult], heatmap: &Heatmap, prov: &Provenance) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let labels: Vec<String> = bands.iter().map(|b| b.band.label()).collect();
    let mut out = Vec::new();
    let rows = bands
        .iter()
        .zip(&labels)
        .flat_map(|(b, l)| b.results.iter().map(move |r| (l.as_str(), r)));
    out.push(pairwise_table(rows).write(dir, &format!("spectral{PAIRWISE_SUFFIX}"), prov)?);
    let rows = bands
        .iter()
        .zip(&labels)
        .flat_map(|(b, l)| b.summaries.iter().map(move |s| (l.as_str(), s)));
    out.push(summary_table(rows).write(dir, "spectral_summary.csv", prov)?);

    let mut bt = Table::new(&["band", "name", "pc_lo", "pc_hi", "k_used", "variance_fraction", "declared_variance"]);
    for (b, l) in bands.iter().zip(&labels) {
        bt.push(vec![
            l.clone(),
            b.band.name.clone(),
            b.band.pc_lo.to_string(),
            b.band.pc_hi.to_string(),
            b.k_used.to_string(),
            num(b.variance_fraction),
            opt(b.band.declared_variance),
        ]);
    }
    out.push(bt.write(dir, "spectral_bands.csv", prov)?);

    let mut ht = Table::new(&["band", "pair", "metric", "sig_rate", "median_r", "holm_rate", "annotated"]);
    for (band, row) in heatmap.bands.iter().zip(&heatmap.cells) {
        for (&(pair, metric), cell) in heatmap.columns.iter().zip(row) {
            if let Some(c) = cell {
                ht.push(vec![
                    band.clone(),
                    pair.label(),
                    metric.to_string(),
                    num(c.sig_rate),
                    num(c.median_r),
                    num(c.holm_rate),
                    c.annotated.to_string(),
                ]);
            }
        }
    }
    out.push(ht.write(dir, "spectral_heatmap.csv", prov)?);
    Ok(out)
}

pub fn write_scan(dir: impl AsRef<Path>, scan: &[ScanWindow], prov: &Provenance) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut t = Table::new(&[
        "pc_lo", "pc_hi", "offset", "k_used", "pair", "metric", "median_p", "bonferroni_p", "nominal_significant",
        "bonferroni_significant",
    ]);
    let mut seeds = Table::new(&["pc_lo", "pc_hi", "seed", "pair", "metric", "p"]);
    for w in scan {
        for c in &w.cells {
            t.push(vec![
                w.pc_lo.to_string(),
                w.pc_hi.to_string(),
                w.offset.to_string(),
                w.k_used.to_string(),
                c.pair.label(),
                c.metric.to_string(),
                opt(c.median_p),
                opt(c.bonferroni_p),
                c.nominal_significant.to_string(),
                c.bonferroni_significant.to_string(),
            ]);
        }
        for s in &w.per_seed {
            seeds.push(vec![
                w.pc_lo.to_string(),
                w.pc_hi.to_string(),
                s.seed.to_string(),
                s.pair.label(),
                s.metric.to_string(),
                num(s.p),
            ]);
        }
    }
    let mut out = vec![t.write(dir, "spectral_scan.csv", prov)?];
    if !seeds.rows.is_empty() {
        out.push(seeds.write(dir, "spectral_scan_seeds.csv", prov)?);
    }
    Ok(out)
}

fn reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes())
}

fn field<'a>(rec: &'a csv::StringRecord, cols: &BTreeMap<String, usize>, name: &str) -> Result<&'a str> {
    cols.get(name)
        .and_then(|&i| rec.get(i))
        .ok_or_else(|| Error::InvalidInput(format!("results table lacks column {name:?}")))
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::InvalidInput(format!("cannot parse {what} from {s:?}")))
}

fn parse_opt(s: &str, what: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse(s, what).map(Some)
    }
}

fn column_map(r: &mut csv::Reader<&[u8]>) -> Result<BTreeMap<String, usize>> {
    Ok(r.headers()
        .map_err(csv_err)?
        .iter()
        .enumerate()
        .map(|(i, h)| (h.to_string(), i))
        .collect())
}

/// Parses a pairwise table back into (experiment, result) rows.
pub fn read_pairwise(text: &str) -> Result<Vec<(String, PairwiseResult)>> {
    let mut r = reader(text);
    let cols = column_map(&mut r)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let f = |n: &str| field(&rec, &cols, n);
        let lo = parse_opt(f("r_ci_lo")?, "r_ci_lo")?;
        let hi = parse_opt(f("r_ci_hi")?, "r_ci_hi")?;
        out.push((
            f("experiment")?.to_string(),
            PairwiseResult {
                pair: f("pair")?.parse()?,
                metric: f("metric")?.parse()?,
                level: f("level")?.parse()?,
                seed: parse(f("seed")?, "seed")?,
                n1: parse(f("n1")?, "n1")?,
                n2: parse(f("n2")?, "n2")?,
                mean_first: parse(f("mean_first")?, "mean_first")?,
                mean_second: parse(f("mean_second")?, "mean_second")?,
                u: parse(f("u")?, "u")?,
                p_mw: parse(f("p_mw")?, "p_mw")?,
                p_perm: parse_opt(f("p_perm")?, "p_perm")?,
                r: parse(f("r")?, "r")?,
                r_ci: lo.zip(hi),
                ci_degenerate: parse(f("ci_degenerate")?, "ci_degenerate")?,
                holm_p: parse(f("holm_p")?, "holm_p")?,
                holm_significant: parse(f("holm_significant")?, "holm_significant")?,
            },
        ));
    }
    Ok(out)
}

pub fn read_prompts(text: &str) -> Result<Vec<PromptRecord>> {
    let mut r = reader(text);
    let cols = column_map(&mut r)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let f = |n: &str| field(&rec, &cols, n);
        out.push(PromptRecord {
            prompt_id: f("prompt_id")?.to_string(),
            condition: f("condition")?.parse()?,
            seed: parse(f("seed")?, "seed")?,
            entropy: parse(f("entropy")?, "entropy")?,
            max_sim: parse(f("max_sim")?, "max_sim")?,
            whitened_norm: parse(f("whitened_norm")?, "whitened_norm")?,
            raw_norm: parse(f("raw_norm")?, "raw_norm")?,
            token_count: parse(f("token_count")?, "token_count")?,
        });
    }
    Ok(out)
}

/// One experiment's per-seed results as read from a results directory.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRuns {
    pub experiment: String,
    pub results: Vec<PairwiseResult>,
    pub summaries: Vec<MultiRunSummary>,
}

/// Mean and spread across seeds of one condition's per-seed mean.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionMean {
    pub condition: Condition,
    pub metric: Metric,
    pub n_seeds: usize,
    pub mean: f64,
    /// Sample standard deviation across seeds; 0 for one seed.
    pub sd: f64,
}

/// Median −log10 p at both levels for one experiment, metric and pair.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscordancePoint {
    pub experiment: String,
    pub metric: Metric,
    pub pair: ConditionPair,
    pub token_neg_log_p: f64,
    pub prompt_neg_log_p: f64,
}

impl DiscordancePoint {
    /// Which levels clear −log10(alpha).
    pub fn quadrant(&self, alpha: f64) -> &'static str {
        let t = -alpha.log10();
        match (self.token_neg_log_p >= t, self.prompt_neg_log_p >= t) {
            (true, true) => "both",
            (true, false) => "token_only",
            (false, true) => "prompt_only",
            (false, false) => "neither",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    /// Configuration recorded in the results' headers (defaults if absent).
    pub config: PipelineConfig,
    pub alpha: f64,
    pub experiments: Vec<ExperimentRuns>,
    pub condition_means: Vec<ConditionMean>,
    pub discordance: Vec<DiscordancePoint>,
    pub sources: Vec<InputDigest>,
}

fn neg_log10(p: f64) -> f64 {
    -p.max(f64::MIN_POSITIVE).log10()
}

/// Condition means per seed, then mean and sd over seeds.
pub fn condition_means(prompts: &[PromptRecord]) -> Vec<ConditionMean> {
    let mut out = Vec::new();
    for c in Condition::EXPERIMENTAL {
        for m in Metric::ALL {
            let mut per_seed: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
            for p in prompts.iter().filter(|p| p.condition == c) {
                let v = match m {
                    Metric::Entropy => p.entropy,
                    Metric::MaxSim => p.max_sim,
                    Metric::WhitenedNorm => p.whitened_norm,
                    Metric::RawNorm => p.raw_norm,
                };
                let e = per_seed.entry(p.seed).or_default();
                e.0 += v;
                e.1 += 1;
            }
            if per_seed.is_empty() {
                continue;
            }
            let means: Vec<f64> = per_seed.values().map(|(s, n)| s / *n as f64).collect();
            let n = means.len();
            let mean = means.iter().sum::<f64>() / n as f64;
            let sd = if n > 1 {
                (means.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            out.push(ConditionMean {
                condition: c,
                metric: m,
                n_seeds: n,
                mean,
                sd,
            });
        }
    }
    out
}

fn discordance(exp: &ExperimentRuns) -> Vec<DiscordancePoint> {
    let mut groups: BTreeMap<(Metric, ConditionPair), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in &exp.results {
        let g = groups.entry((r.metric, r.pair)).or_default();
        match r.level {
            Level::Token => g.0.push(r.p_mw),
            Level::Prompt => g.1.push(r.p_mw),
        }
    }
    groups
        .into_iter()
        .filter(|(_, (t, p))| !t.is_empty() && !p.is_empty())
        .map(|((metric, pair), (t, p))| DiscordancePoint {
            experiment: exp.experiment.clone(),
            metric,
            pair,
            token_neg_log_p: neg_log10(lower_median(&t)),
            prompt_neg_log_p: neg_log10(lower_median(&p)),
        })
        .collect()
}

/// Reads every `*_pairwise.csv` (and `analyze_prompts.csv` if present) in
/// `dir`.
pub fn build_report(dir: impl AsRef<Path>) -> Result<Report> {
    let dir = dir.as_ref();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().is_some_and(|n| n.to_string_lossy().ends_with(PAIRWISE_SUFFIX)))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no results found in {} (expected *{PAIRWISE_SUFFIX} tables)",
            dir.display()
        )));
    }
    let mut config = None;
    let mut by_exp: BTreeMap<String, Vec<PairwiseResult>> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    let mut sources = Vec::new();
    for f in &files {
        let text = std::fs::read_to_string(f).map_err(|e| Error::io(f, e))?;
        if config.is_none() {
            config = config_from_header(&text);
        }
        for (exp, r) in read_pairwise(&text)? {
            if !by_exp.contains_key(&exp) {
                order.push(exp.clone());
            }
            by_exp.entry(exp).or_default().push(r);
        }
        sources.push(InputDigest::of_file(f)?);
    }
    if by_exp.is_empty() {
        return Err(Error::InvalidInput(format!("no results found in {}: the pairwise tables are empty", dir.display())));
    }
    let config = config.unwrap_or_default();
    let alpha = config.stats.alpha;
    let experiments: Vec<ExperimentRuns> = order
        .into_iter()
        .map(|e| {
            let results = by_exp.remove(&e).unwrap_or_default();
            ExperimentRuns {
                summaries: aggregate_runs(&results, alpha),
                experiment: e,
                results,
            }
        })
        .collect();

    let prompts_path = dir.join("analyze_prompts.csv");
    let condition_means = if prompts_path.exists() {
        let text = std::fs::read_to_string(&prompts_path).map_err(|e| Error::io(&prompts_path, e))?;
        sources.push(InputDigest::of_file(&prompts_path)?);
        condition_means(&read_prompts(&text)?)
    } else {
        Vec::new()
    };
    let discordance = experiments.iter().flat_map(discordance).collect();
    Ok(Report {
        config,
        alpha,
        experiments,
        condition_means,
        discordance,
        sources,
    })
}

fn pct(v: f64) -> String {
    format!("{:.0}%", 100.0 * v)
}

impl Report {
    /// Pairwise summaries in the usual result-table layout: one
    /// row per experiment, pair and metric with both levels side by side.
    fn pairwise_table(&self) -> Table {
        let mut t = Table::new(&[
            "experiment", "pair", "metric", "prompt_sig_rate", "prompt_holm_rate", "median_r", "direction",
            "token_sig_rate", "pseudo_ratio", "display",
        ]);
        for e in &self.experiments {
            for s in e.summaries.iter().filter(|s| s.level == Level::Prompt) {
                let token = e
                    .summaries
                    .iter()
                    .find(|x| x.level == Level::Token && x.pair == s.pair && x.metric == s.metric);
                t.push(vec![
                    e.experiment.clone(),
                    s.pair.label(),
                    s.metric.to_string(),
                    num(s.sig_rate),
                    num(s.holm_rate),
                    num(s.median_r),
                    s.direction_label(),
                    opt(token.map(|x| x.sig_rate)),
                    opt(s.pseudo_ratio),
                    format!(
                        "{} {} {:+.2} {} ({})",
                        pct(s.sig_rate),
                        pct(s.holm_rate),
                        s.median_r,
                        s.direction_label(),
                        format_ratio(s.pseudo_ratio)
                    ),
                ]);
            }
        }
        t
    }

    fn means_table(&self) -> Table {
        let mut t = Table::new(&["condition", "metric", "n_seeds", "mean", "sd"]);
        for m in &self.condition_means {
            t.push(vec![
                m.condition.to_string(),
                m.metric.to_string(),
                m.n_seeds.to_string(),
                num(m.mean),
                num(m.sd),
            ]);
        }
        t
    }

    fn effects_table(&self) -> Table {
        let mut t = Table::new(&["experiment", "seed", "pair", "metric", "r", "r_ci_lo", "r_ci_hi"]);
        for e in &self.experiments {
            for r in e.results.iter().filter(|r| r.level == Level::Prompt) {
                t.push(vec![
                    e.experiment.clone(),
                    r.seed.to_string(),
                    r.pair.label(),
                    r.metric.to_string(),
                    num(r.r),
                    opt(r.r_ci.map(|c| c.0)),
                    opt(r.r_ci.map(|c| c.1)),
                ]);
            }
        }
        t
    }

    fn strip_table(&self) -> Table {
        let mut t = Table::new(&["experiment", "seed", "pair", "metric", "level", "p_mw", "neg_log10_p", "significant"]);
        for e in &self.experiments {
            for r in &e.results {
                t.push(vec![
                    e.experiment.clone(),
                    r.seed.to_string(),
                    r.pair.label(),
                    r.metric.to_string(),
                    r.level.to_string(),
                    num(r.p_mw),
                    num(neg_log10(r.p_mw)),
                    (r.p_mw < self.alpha).to_string(),
                ]);
            }
        }
        t
    }

    fn discordance_table(&self) -> Table {
        let mut t = Table::new(&["experiment", "metric", "pair", "token_neg_log10_p", "prompt_neg_log10_p", "quadrant"]);
        for d in &self.discordance {
            t.push(vec![
                d.experiment.clone(),
                d.metric.to_string(),
                d.pair.label(),
                num(d.token_neg_log_p),
                num(d.prompt_neg_log_p),
                d.quadrant(self.alpha).to_string(),
            ]);
        }
        t
    }

    /// Plain-text rendering of the pairwise summaries.
    pub fn text(&self) -> String {
        let mut s = String::new();
        for e in &self.experiments {
            let _ = writeln!(s, "== {} ==", e.experiment);
            let _ = writeln!(s, "{:<8} {:<14} {:>6} {:>6} {:>7} {:>7} {:>7}", "pair", "metric", "sig", "holm", "r", "dir", "ratio");
            for p in e.summaries.iter().filter(|x| x.level == Level::Prompt) {
                let _ = writeln!(
                    s,
                    "{:<8} {:<14} {:>6} {:>6} {:>+7.2} {:>7} {:>7}",
                    p.pair.label(),
                    p.metric.as_str(),
                    pct(p.sig_rate),
                    pct(p.holm_rate),
                    p.median_r,
                    p.direction_label(),
                    format_ratio(p.pseudo_ratio)
                );
            }
            let _ = writeln!(s);
        }
        s
    }

    /// Writes the consolidated tables into `out`.
    pub fn write(&self, out: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let out = out.as_ref();
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let mut prov = Provenance::new("report", &self.config);
        prov.inputs = self.sources.clone();
        let mut files = vec![
            self.pairwise_table().write(out, "report_table.csv", &prov)?,
            self.effects_table().write(out, "report_effect_sizes.csv", &prov)?,
            self.strip_table().write(out, "report_pvalue_strip.csv", &prov)?,
            self.discordance_table().write(out, "report_discordance.csv", &prov)?,
        ];
        if !self.condition_means.is_empty() {
            files.push(self.means_table().write(out, "report_condition_means.csv", &prov)?);
        }
        let path = out.join("report.txt");
        std::fs::write(&path, format!("{}{}", prov.header(), self.text())).map_err(|e| Error::io(&path, e))?;
        files.push(path);
        Ok(files)
    }
}
