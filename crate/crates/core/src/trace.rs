//! Hidden-state trace data model and its on-disk format.
//!
//! A trace is a file pair sharing one prefix:
//!
//! * `<prefix>.manifest.json`: UTF-8 JSON with a `metadata` object and an
//!   `index` array, one record per row (`prompt_id`, `condition`, `seed`,
//!   `token_position`, `row`).
//! * `<prefix>.vectors.bin`: raw little-endian `f32`, row-major,
//!   `index.len() × metadata.hidden_dim`, no header.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Generation condition of a row. Unknown strings fail to load.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Condition {
    T1,
    T2,
    T3,
    #[serde(rename = "CALIBRATION")]
    Calibration,
}

impl Condition {
    pub const EXPERIMENTAL: [Condition; 3] = [Condition::T1, Condition::T2, Condition::T3];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::T1 => "T1",
            Condition::T2 => "T2",
            Condition::T3 => "T3",
            Condition::Calibration => "CALIBRATION",
        }
    }

    pub fn is_experimental(self) -> bool {
        self != Condition::Calibration
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "T1" => Ok(Condition::T1),
            "T2" => Ok(Condition::T2),
            "T3" => Ok(Condition::T3),
            "CALIBRATION" => Ok(Condition::Calibration),
            other => Err(Error::InvalidInput(format!("unknown condition {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexRecord {
    pub prompt_id: String,
    pub condition: Condition,
    pub seed: u64,
    pub token_position: u32,
    pub row: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceMetadata {
    pub model_name: String,
    pub hidden_dim: usize,
    pub max_tokens: usize,
    pub creation_info: String,
}

/// Prompts of one condition, as consumed by the extractor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptGroupSpec {
    pub condition: Condition,
    pub prompts: Vec<String>,
}

/// Checks that experimental prompt groups are non-empty, cover distinct
/// experimental conditions, and have equal counts.
pub fn validate_prompt_groups(groups: &[PromptGroupSpec]) -> Result<usize> {
    let mut seen = HashSet::new();
    let mut count = None;
    for g in groups {
        if !g.condition.is_experimental() {
            return Err(Error::InvalidInput(
                "prompt groups must be experimental conditions".into(),
            ));
        }
        if !seen.insert(g.condition) {
            return Err(Error::InvalidInput(format!(
                "condition {} listed twice",
                g.condition
            )));
        }
        match count {
            None => count = Some(g.prompts.len()),
            Some(c) if c != g.prompts.len() => {
                return Err(Error::InvalidInput(format!(
                    "unequal prompt counts: {c} vs {} for {}",
                    g.prompts.len(),
                    g.condition
                )))
            }
            _ => {}
        }
    }
    match count {
        Some(c) if c > 0 => Ok(c),
        _ => Err(Error::InvalidInput("no prompts".into())),
    }
}

/// Immutable collection of per-token hidden states with their index.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSet {
    vectors: Vec<f32>,
    index: Vec<IndexRecord>,
    metadata: TraceMetadata,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    metadata: TraceMetadata,
    index: Vec<IndexRecord>,
}

/// File names of a trace pair.
#[derive(Debug, Clone)]
pub struct TracePaths {
    pub manifest: PathBuf,
    pub vectors: PathBuf,
}

impl TracePaths {
    /// Accepts either the bare prefix or the path of either member file.
    pub fn from_prefix(prefix: impl AsRef<Path>) -> Self {
        let p = prefix.as_ref().to_string_lossy().into_owned();
        let stem = p
            .strip_suffix(".manifest.json")
            .or_else(|| p.strip_suffix(".vectors.bin"))
            .unwrap_or(&p)
            .to_string();
        TracePaths {
            manifest: PathBuf::from(format!("{stem}.manifest.json")),
            vectors: PathBuf::from(format!("{stem}.vectors.bin")),
        }
    }
}

const MAX_REPORTED: usize = 20;

impl TraceSet {
    /// Builds a trace set, enforcing every invariant.
    pub fn new(vectors: Vec<f32>, index: Vec<IndexRecord>, metadata: TraceMetadata) -> Result<Self> {
        let t = TraceSet {
            vectors,
            index,
            metadata,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn empty(metadata: TraceMetadata) -> Self {
        TraceSet {
            vectors: Vec::new(),
            index: Vec::new(),
            metadata,
        }
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn hidden_dim(&self) -> usize {
        self.metadata.hidden_dim
    }

    pub fn metadata(&self) -> &TraceMetadata {
        &self.metadata
    }

    pub fn index(&self) -> &[IndexRecord] {
        &self.index
    }

    pub fn raw_vectors(&self) -> &[f32] {
        &self.vectors
    }

    pub fn row(&self, row: usize) -> &[f32] {
        let d = self.hidden_dim();
        &self.vectors[row * d..(row + 1) * d]
    }

    /// Rows in index order, widened to f64.
    pub fn matrix(&self) -> Matrix {
        let d = self.hidden_dim();
        let mut data = Vec::with_capacity(self.len() * d);
        for rec in &self.index {
            data.extend(self.row(rec.row).iter().map(|&v| f64::from(v)));
        }
        Matrix::from_vec(self.len(), d, data).expect("validated shape")
    }

    pub fn seeds(&self) -> Vec<u64> {
        let set: std::collections::BTreeSet<u64> = self
            .index
            .iter()
            .filter(|r| r.condition.is_experimental())
            .map(|r| r.seed)
            .collect();
        set.into_iter().collect()
    }

    /// Distinct prompt ids per condition, in order of first appearance.
    pub fn prompts_by_condition(&self) -> BTreeMap<Condition, Vec<String>> {
        let mut out: BTreeMap<Condition, Vec<String>> = BTreeMap::new();
        let mut seen = HashSet::new();
        for r in &self.index {
            if seen.insert((r.condition, r.prompt_id.as_str())) {
                out.entry(r.condition).or_default().push(r.prompt_id.clone());
            }
        }
        out
    }

    /// New trace set holding only the index records accepted by `keep`,
    /// in their original order, with rows renumbered.
    pub fn filter(&self, mut keep: impl FnMut(&IndexRecord) -> bool) -> TraceSet {
        let d = self.hidden_dim();
        let mut vectors = Vec::new();
        let mut index = Vec::new();
        for rec in &self.index {
            if keep(rec) {
                vectors.extend_from_slice(self.row(rec.row));
                index.push(IndexRecord {
                    row: index.len(),
                    ..rec.clone()
                });
            }
        }
        debug_assert_eq!(vectors.len(), index.len() * d);
        TraceSet {
            vectors,
            index,
            metadata: self.metadata.clone(),
        }
    }

    /// Keeps calibration rows plus the first `n` prompts (by first
    /// appearance) of each experimental condition.
    pub fn limit_prompts_per_condition(&self, n: usize) -> TraceSet {
        let keep: HashSet<(Condition, String)> = self
            .prompts_by_condition()
            .into_iter()
            .filter(|(c, _)| c.is_experimental())
            .flat_map(|(c, ids)| ids.into_iter().take(n).map(move |id| (c, id)))
            .collect();
        self.filter(|r| {
            !r.condition.is_experimental() || keep.contains(&(r.condition, r.prompt_id.clone()))
        })
    }

    fn validate(&self) -> Result<()> {
        let n = self.index.len();
        let d = self.metadata.hidden_dim;
        if self.vectors.len() != n * d {
            return Err(Error::DimensionMismatch(format!(
                "{n} index records × hidden_dim {d} needs {} floats, payload holds {}",
                n * d,
                self.vectors.len()
            )));
        }

        let mut keys = HashSet::with_capacity(n);
        for r in &self.index {
            if !keys.insert((r.prompt_id.as_str(), r.seed, r.token_position)) {
                return Err(Error::DuplicateKey {
                    prompt_id: r.prompt_id.clone(),
                    seed: r.seed,
                    token_position: r.token_position,
                });
            }
        }

        let mut problems = Vec::new();
        let mut used = vec![false; n];
        for (i, r) in self.index.iter().enumerate() {
            if r.row >= n {
                problems.push(format!("record {i} ({}): row {} out of range 0..{n}", r.prompt_id, r.row));
            } else if std::mem::replace(&mut used[r.row], true) {
                problems.push(format!("record {i} ({}): row {} referenced twice", r.prompt_id, r.row));
            }
        }

        // (prompt_id, seed) -> (condition, positions in index order)
        let mut groups: HashMap<(&str, u64), (Condition, Vec<u32>)> = HashMap::new();
        for r in &self.index {
            let g = groups
                .entry((r.prompt_id.as_str(), r.seed))
                .or_insert_with(|| (r.condition, Vec::new()));
            if g.0 != r.condition {
                problems.push(format!(
                    "prompt {} seed {}: mixes conditions {} and {}",
                    r.prompt_id, r.seed, g.0, r.condition
                ));
            }
            g.1.push(r.token_position);
        }
        let mut group_keys: Vec<_> = groups.keys().copied().collect();
        group_keys.sort_unstable();
        for key in group_keys {
            let positions = &groups[&key].1;
            let contiguous = positions
                .iter()
                .enumerate()
                .all(|(i, &p)| p as usize == i);
            if !contiguous {
                problems.push(format!(
                    "prompt {} seed {}: token positions must run 0,1,2,... in order (got {:?}{})",
                    key.0,
                    key.1,
                    &positions[..positions.len().min(8)],
                    if positions.len() > 8 { ", ..." } else { "" }
                ));
            }
        }

        let cal_seeds: std::collections::BTreeSet<u64> = self
            .index
            .iter()
            .filter(|r| r.condition == Condition::Calibration)
            .map(|r| r.seed)
            .collect();
        if cal_seeds.len() > 1 {
            problems.push(format!(
                "calibration rows carry several seeds {cal_seeds:?}; expected one fixed seed"
            ));
        }

        if problems.is_empty() {
            Ok(())
        } else {
            let total = problems.len();
            problems.truncate(MAX_REPORTED);
            if total > MAX_REPORTED {
                problems.push(format!("... and {} more", total - MAX_REPORTED));
            }
            Err(Error::Validation(problems))
        }
    }
}

/// Writes the manifest/payload pair for `t` under `prefix`.
pub fn write_trace(t: &TraceSet, prefix: impl AsRef<Path>) -> Result<TracePaths> {
    t.validate()?;
    let paths = TracePaths::from_prefix(prefix);

    let f = File::create(&paths.manifest).map_err(|e| Error::io(&paths.manifest, e))?;
    let mut w = BufWriter::new(f);
    let io = |e| Error::io(&paths.manifest, e);
    let meta = serde_json::to_string(&t.metadata).expect("metadata serializes");
    write!(w, "{{\"metadata\":{meta},\"index\":[").map_err(io)?;
    for (i, rec) in t.index.iter().enumerate() {
        let sep = if i == 0 { "\n" } else { ",\n" };
        let line = serde_json::to_string(rec).expect("record serializes");
        write!(w, "{sep}{line}").map_err(io)?;
    }
    writeln!(w, "\n]}}").map_err(io)?;
    w.flush().map_err(io)?;

    let f = File::create(&paths.vectors).map_err(|e| Error::io(&paths.vectors, e))?;
    let mut w = BufWriter::new(f);
    for v in &t.vectors {
        w.write_all(&v.to_le_bytes())
            .map_err(|e| Error::io(&paths.vectors, e))?;
    }
    w.flush().map_err(|e| Error::io(&paths.vectors, e))?;
    Ok(paths)
}

/// Loads and validates a trace pair.
pub fn load_trace(prefix: impl AsRef<Path>) -> Result<TraceSet> {
    let paths = TracePaths::from_prefix(prefix);
    let f = File::open(&paths.manifest).map_err(|e| Error::io(&paths.manifest, e))?;
    let manifest: Manifest =
        serde_json::from_reader(BufReader::new(f)).map_err(|e| Error::MalformedHeader {
            path: paths.manifest.clone(),
            message: e.to_string(),
        })?;

    let mut bytes = Vec::new();
    File::open(&paths.vectors)
        .and_then(|f| BufReader::new(f).read_to_end(&mut bytes))
        .map_err(|e| Error::io(&paths.vectors, e))?;

    let n = manifest.index.len();
    let d = manifest.metadata.hidden_dim;
    let expected = n * d * 4;
    if bytes.len() != expected {
        return Err(Error::DimensionMismatch(format!(
            "manifest declares {n} rows × {d} dims ({expected} bytes) but {} holds {} bytes",
            paths.vectors.display(),
            bytes.len()
        )));
    }
    let vectors = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    TraceSet::new(vectors, manifest.index, manifest.metadata)
}

/// Calibration rows and one experimental trace set per seed.
#[derive(Debug, Clone)]
pub struct Partition {
    pub calibration: TraceSet,
    pub experimental: BTreeMap<u64, TraceSet>,
}

/// Splits a trace set into its calibration subset and per-seed experimental subsets.
pub fn partition(t: &TraceSet) -> Result<Partition> {
    let calibration = t.filter(|r| r.condition == Condition::Calibration);
    if calibration.is_empty() {
        return Err(Error::InvalidInput("trace set has no CALIBRATION rows".into()));
    }
    let experimental = t
        .seeds()
        .into_iter()
        .map(|s| (s, t.filter(|r| r.condition.is_experimental() && r.seed == s)))
        .collect();
    Ok(Partition {
        calibration,
        experimental,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(d: usize) -> TraceMetadata {
        TraceMetadata {
            model_name: "test".into(),
            hidden_dim: d,
            max_tokens: 4,
            creation_info: "unit".into(),
        }
    }

    fn rec(p: &str, c: Condition, seed: u64, pos: u32, row: usize) -> IndexRecord {
        IndexRecord {
            prompt_id: p.into(),
            condition: c,
            seed,
            token_position: pos,
            row,
        }
    }

    fn small() -> TraceSet {
        let index = vec![
            rec("cal0", Condition::Calibration, 42, 0, 0),
            rec("cal0", Condition::Calibration, 42, 1, 1),
            rec("a", Condition::T1, 1, 0, 2),
            rec("b", Condition::T3, 2, 0, 3),
            rec("b", Condition::T3, 2, 1, 4),
        ];
        let vectors = (0..10).map(|v| v as f32).collect();
        TraceSet::new(vectors, index, meta(2)).unwrap()
    }

    #[test]
    fn gap_in_positions_is_rejected() {
        let index = vec![
            rec("a", Condition::T1, 1, 0, 0),
            rec("a", Condition::T1, 1, 2, 1),
        ];
        let err = TraceSet::new(vec![0.0; 4], index, meta(2)).unwrap_err();
        assert!(matches!(err, Error::Validation(ref v) if v[0].contains("prompt a seed 1")));
    }

    #[test]
    fn duplicate_key_is_reported() {
        let index = vec![
            rec("a", Condition::T1, 1, 0, 0),
            rec("a", Condition::T1, 1, 0, 1),
        ];
        let err = TraceSet::new(vec![0.0; 4], index, meta(2)).unwrap_err();
        assert!(matches!(err, Error::DuplicateKey { .. }));
    }

    #[test]
    fn mixed_calibration_seeds_rejected() {
        let index = vec![
            rec("c0", Condition::Calibration, 42, 0, 0),
            rec("c1", Condition::Calibration, 7, 0, 1),
        ];
        assert!(TraceSet::new(vec![0.0; 4], index, meta(2)).is_err());
    }

    #[test]
    fn partition_splits_by_seed() {
        let t = small();
        let p = partition(&t).unwrap();
        assert_eq!(p.calibration.len(), 2);
        assert_eq!(p.experimental.keys().copied().collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(p.experimental[&2].row(1), &[8.0, 9.0]);
    }

    #[test]
    fn partition_of_calibration_only() {
        let t = small().filter(|r| r.condition == Condition::Calibration);
        let p = partition(&t).unwrap();
        assert_eq!(p.calibration, t);
        assert!(p.experimental.is_empty());
    }

    #[test]
    fn partition_without_calibration_fails() {
        let t = small().filter(|r| r.condition != Condition::Calibration);
        assert!(partition(&t).is_err());
    }

    #[test]
    fn prefix_accepts_member_names() {
        let p = TracePaths::from_prefix("out/run.manifest.json");
        assert_eq!(p.vectors, PathBuf::from("out/run.vectors.bin"));
    }

    #[test]
    fn prompt_group_counts_must_match() {
        let g = |c, n: usize| PromptGroupSpec {
            condition: c,
            prompts: (0..n).map(|i| format!("p{i}")).collect(),
        };
        assert_eq!(
            validate_prompt_groups(&[g(Condition::T1, 3), g(Condition::T2, 3)]).unwrap(),
            3
        );
        assert!(validate_prompt_groups(&[g(Condition::T1, 3), g(Condition::T2, 2)]).is_err());
        assert!(validate_prompt_groups(&[g(Condition::Calibration, 3)]).is_err());
    }
}
