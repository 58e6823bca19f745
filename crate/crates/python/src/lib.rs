//! Python bindings: the exact tests, the per-token metrics and the file-level
//! pipeline stages. Arrays cross the boundary as plain lists.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use tracegeo::metrics::{membership_entropy, peak_alignment};
use tracegeo::report::{write_bands, write_experiment, Provenance};
use tracegeo::stats;
use tracegeo::{Error, PipelineConfig, SynthSpec};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Numerical(_) | Error::Io { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn config(json: Option<&str>) -> PyResult<PipelineConfig> {
    json.map_or_else(|| Ok(PipelineConfig::default()), |j| PipelineConfig::from_json(j).map_err(py_err))
}

/// Returns (U of x, two-sided p).
#[pyfunction]
fn mann_whitney(x: Vec<f64>, y: Vec<f64>) -> PyResult<(f64, f64)> {
    let m = stats::mann_whitney(&x, &y).map_err(py_err)?;
    Ok((m.u, m.p))
}

#[pyfunction]
fn rank_biserial(x: Vec<f64>, y: Vec<f64>) -> f64 {
    stats::rank_biserial_r(&x, &y)
}

/// Returns (H, p).
#[pyfunction]
fn kruskal_wallis(groups: Vec<Vec<f64>>) -> PyResult<(f64, f64)> {
    let g: Vec<&[f64]> = groups.iter().map(Vec::as_slice).collect();
    let k = stats::kruskal_wallis(&g).map_err(py_err)?;
    Ok((k.h, k.p))
}

/// Returns a list of (adjusted p, significant).
#[pyfunction]
#[pyo3(signature = (p_values, alpha = 0.05))]
fn holm_correct(p_values: Vec<f64>, alpha: f64) -> PyResult<Vec<(f64, bool)>> {
    Ok(stats::holm_correct_at(&p_values, alpha)
        .map_err(py_err)?
        .into_iter()
        .map(|d| (d.adjusted, d.significant))
        .collect())
}

#[pyfunction]
#[pyo3(signature = (x, y, n_perm = 50_000, seed = 42))]
fn permutation_p(x: Vec<f64>, y: Vec<f64>, n_perm: usize, seed: u64) -> PyResult<f64> {
    stats::permutation_p(&x, &y, n_perm, seed).map_err(py_err)
}

/// Normalized membership entropy of one token's centroid cosines.
#[pyfunction]
#[pyo3(signature = (similarities, temperature = 1.0))]
fn entropy(similarities: Vec<f64>, temperature: f64) -> PyResult<f64> {
    membership_entropy(&similarities, temperature).map_err(py_err)
}

#[pyfunction]
fn max_sim(similarities: Vec<f64>) -> PyResult<f64> {
    peak_alignment(&similarities).map_err(py_err)
}

#[pyfunction]
fn adapted_k(band_dim: usize) -> usize {
    tracegeo::adapted_k(band_dim)
}

/// Default bands as (name, pc_lo, pc_hi, declared variance share).
#[pyfunction]
fn default_bands() -> Vec<(String, usize, usize, Option<f64>)> {
    tracegeo::default_bands()
        .into_iter()
        .map(|b| (b.name, b.pc_lo, b.pc_hi, b.declared_variance))
        .collect()
}

/// Writes a synthetic trace pair under `out_prefix` and returns its row
/// count. `spec_json` of None uses the default spec; `scenario="artifact"`
/// selects the artifact scenario.
#[pyfunction]
#[pyo3(signature = (out_prefix, master_seed = 1, spec_json = None, scenario = None))]
fn synth(out_prefix: &str, master_seed: u64, spec_json: Option<&str>, scenario: Option<&str>) -> PyResult<usize> {
    let spec = match (spec_json, scenario) {
        (Some(j), None) => SynthSpec::from_json(j).map_err(py_err)?,
        (None, Some("artifact")) => tracegeo::synth::artifact_spec(),
        (None, Some("null")) | (None, None) => SynthSpec::default(),
        _ => return Err(PyValueError::new_err("give spec_json or scenario ('null' or 'artifact'), not both")),
    };
    let t = tracegeo::gen_traces(&spec, master_seed).map_err(py_err)?;
    tracegeo::write_trace(&t, out_prefix).map_err(py_err)?;
    Ok(t.len())
}

/// Calibrates, runs the full-spectrum experiment and the default bands on a
/// trace, writes the tables into `out_dir` and returns the report text.
#[pyfunction]
#[pyo3(signature = (trace_prefix, out_dir, config_json = None))]
fn pipeline(py: Python<'_>, trace_prefix: &str, out_dir: &str, config_json: Option<&str>) -> PyResult<String> {
    let cfg = config(config_json)?;
    let (trace_prefix, out_dir) = (trace_prefix.to_string(), out_dir.to_string());
    py.allow_threads(move || -> Result<String, Error> {
        let t = tracegeo::load_trace(&trace_prefix)?;
        let cal = tracegeo::calibrate(&t, &cfg)?;
        let prov = Provenance::new("python pipeline", &cfg);
        let res = tracegeo::run_experiment(&t, &cal, &cfg)?;
        write_experiment(&out_dir, &res, &prov)?;
        let x = tracegeo::experiment::calibration_matrix(&t)?;
        let wm = tracegeo::fit_pca(&x, t.hidden_dim().min(x.rows()), cfg.whitening.epsilon)?;
        let bands = tracegeo::analyze_bands(&t, &wm, &cfg.spectral.bands, &cfg)?;
        write_bands(&out_dir, &bands, &tracegeo::heatmap_matrix(&bands), &prov)?;
        let report = tracegeo::build_report(&out_dir)?;
        report.write(&out_dir)?;
        Ok(report.text())
    })
    .map_err(py_err)
}

#[pymodule]
fn tracegeo_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(mann_whitney, m)?)?;
    m.add_function(wrap_pyfunction!(rank_biserial, m)?)?;
    m.add_function(wrap_pyfunction!(kruskal_wallis, m)?)?;
    m.add_function(wrap_pyfunction!(holm_correct, m)?)?;
    m.add_function(wrap_pyfunction!(permutation_p, m)?)?;
    m.add_function(wrap_pyfunction!(entropy, m)?)?;
    m.add_function(wrap_pyfunction!(max_sim, m)?)?;
    m.add_function(wrap_pyfunction!(adapted_k, m)?)?;
    m.add_function(wrap_pyfunction!(default_bands, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(pipeline, m)?)?;
    Ok(())
}
