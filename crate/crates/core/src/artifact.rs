//! On-disk calibration artifact: the whitening model and the cluster model
//! fitted on it, stored as a JSON manifest plus a little-endian f64 payload.
//!
//! The payload holds, in order, the mean (`d`), the eigenvectors (`d × c`,
//! row-major), the eigenvalues (`c`) and the centroids (`k × c`, row-major).
//! Nothing time-dependent is written, so refitting the same inputs gives
//! byte-identical files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clustering::{ClusterModel, KMeansConfig};
use crate::error::{Error, Result};
use crate::experiment::Calibration;
use crate::matrix::Matrix;
use crate::whitening::WhiteningModel;

const FORMAT: &str = "tracegeo-calibration/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format: String,
    dim: usize,
    n_components: usize,
    k: usize,
    epsilon: f64,
    total_variance: f64,
    kmeans: KMeansConfig,
    inertia: f64,
    restart_inertias: Vec<f64>,
    /// Digest of the trace the calibration was fitted on, if known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source_digest: Option<String>,
    payload_sha256: String,
}

#[derive(Debug, Clone)]
pub struct ArtifactPaths {
    pub manifest: PathBuf,
    pub payload: PathBuf,
}

impl ArtifactPaths {
    /// Accepts the bare prefix or either member file.
    pub fn from_prefix(prefix: impl AsRef<Path>) -> Self {
        let p = prefix.as_ref().to_string_lossy().into_owned();
        let stem = p
            .strip_suffix(".calibration.json")
            .or_else(|| p.strip_suffix(".calibration.bin"))
            .unwrap_or(&p)
            .to_string();
        ArtifactPaths {
            manifest: PathBuf::from(format!("{stem}.calibration.json")),
            payload: PathBuf::from(format!("{stem}.calibration.bin")),
        }
    }
}

fn payload(cal: &Calibration) -> Vec<u8> {
    let w = &cal.whitening;
    let parts: [&[f64]; 4] = [
        w.mean(),
        w.eigenvectors().as_slice(),
        w.eigenvalues(),
        cal.clusters.centroids().as_slice(),
    ];
    let n: usize = parts.iter().map(|p| p.len()).sum();
    let mut out = Vec::with_capacity(n * 8);
    for v in parts.iter().flat_map(|p| p.iter()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// SHA-256 of a file's contents.
pub fn file_digest(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let mut h = Sha256::new();
    let mut f = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

pub fn write_calibration(cal: &Calibration, source_digest: Option<String>, prefix: impl AsRef<Path>) -> Result<ArtifactPaths> {
    let paths = ArtifactPaths::from_prefix(prefix);
    let bytes = payload(cal);
    let w = &cal.whitening;
    let manifest = Manifest {
        format: FORMAT.into(),
        dim: w.dim(),
        n_components: w.n_components(),
        k: cal.clusters.k(),
        epsilon: w.epsilon(),
        total_variance: w.total_variance(),
        kmeans: cal.clusters.config().clone(),
        inertia: cal.clusters.inertia(),
        restart_inertias: cal.clusters.restart_inertias().to_vec(),
        source_digest,
        payload_sha256: sha256_hex(&bytes),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&paths.manifest, text + "\n").map_err(|e| Error::io(&paths.manifest, e))?;
    let f = File::create(&paths.payload).map_err(|e| Error::io(&paths.payload, e))?;
    let mut out = BufWriter::new(f);
    out.write_all(&bytes)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(&paths.payload, e))?;
    Ok(paths)
}

pub fn load_calibration(prefix: impl AsRef<Path>) -> Result<Calibration> {
    let paths = ArtifactPaths::from_prefix(prefix);
    let text = std::fs::read_to_string(&paths.manifest).map_err(|e| Error::io(&paths.manifest, e))?;
    let bad = |message: String| Error::MalformedHeader {
        path: paths.manifest.clone(),
        message,
    };
    let m: Manifest = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    if m.format != FORMAT {
        return Err(bad(format!("unknown format {:?}, expected {FORMAT:?}", m.format)));
    }
    let bytes = std::fs::read(&paths.payload).map_err(|e| Error::io(&paths.payload, e))?;
    let (d, c, k) = (m.dim, m.n_components, m.k);
    let expected = (d + d * c + c + k * c) * 8;
    if bytes.len() != expected {
        return Err(Error::DimensionMismatch(format!(
            "calibration manifest declares d={d}, c={c}, k={k} ({expected} bytes) but the payload holds {}",
            bytes.len()
        )));
    }
    if sha256_hex(&bytes) != m.payload_sha256 {
        return Err(bad("payload digest does not match the manifest".into()));
    }
    let mut vals = bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")));
    let mut take = |n: usize| -> Vec<f64> { vals.by_ref().take(n).collect() };
    let mean = take(d);
    let vectors = Matrix::from_vec(d, c, take(d * c))?;
    let eigenvalues = take(c);
    let centroids = Matrix::from_vec(k, c, take(k * c))?;
    Ok(Calibration {
        whitening: WhiteningModel::from_parts(mean, vectors, eigenvalues, m.total_variance, m.epsilon)?,
        clusters: ClusterModel::from_parts(centroids, m.kmeans, m.inertia, m.restart_inertias)?,
    })
}
