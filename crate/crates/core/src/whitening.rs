//! Calibration PCA and the whitening transform
//! `w = (h − μ) · W` with `W[:, i] = v_i / sqrt(λ_i + ε)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const DEFAULT_EPSILON: f64 = 1e-5;
/// Components kept for the full-spectrum whitening experiment.
pub const DEFAULT_COMPONENTS: usize = 256;

/// Fitted calibration PCA.
///
/// Eigenvalues use the population (divide-by-n) convention and are sorted in
/// non-increasing order. Each eigenvector is sign-normalized so that its
/// largest-magnitude entry is positive (first index wins ties).
#[derive(Debug, Clone, PartialEq)]
pub struct WhiteningModel {
    mean: Vec<f64>,
    eigenvectors: Matrix,
    eigenvalues: Vec<f64>,
    total_variance: f64,
    epsilon: f64,
}

/// A contiguous, 1-indexed, inclusive range of principal components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralBand {
    pub name: String,
    pub pc_lo: usize,
    pub pc_hi: usize,
    /// Nominal share of variance; informational only (an upper bound for the tail).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub declared_variance: Option<f64>,
}

impl SpectralBand {
    pub fn new(name: impl Into<String>, pc_lo: usize, pc_hi: usize) -> Result<Self> {
        if pc_lo == 0 || pc_lo > pc_hi {
            return Err(Error::InvalidInput(format!(
                "band needs 1 <= pc_lo <= pc_hi, got {pc_lo}..{pc_hi}"
            )));
        }
        Ok(SpectralBand {
            name: name.into(),
            pc_lo,
            pc_hi,
            declared_variance: None,
        })
    }

    pub fn width(&self) -> usize {
        self.pc_hi + 1 - self.pc_lo
    }

    pub fn label(&self) -> String {
        format!("{} ({}-{})", self.name, self.pc_lo, self.pc_hi)
    }

    pub fn overlaps(&self, lo: usize, hi: usize) -> bool {
        self.pc_lo <= hi && lo <= self.pc_hi
    }
}

/// The six bands used by the spectral decomposition, covering PCs 1–768.
pub fn default_bands() -> Vec<SpectralBand> {
    [
        ("Dominant", 1, 16, 0.980),
        ("Transition", 17, 48, 0.007),
        ("Mid-range A", 49, 128, 0.006),
        ("Mid-range B", 129, 256, 0.004),
        ("Lower", 257, 512, 0.003),
        ("Tail", 513, 768, 0.001),
    ]
    .into_iter()
    .map(|(name, pc_lo, pc_hi, declared_variance)| SpectralBand {
        name: name.to_string(),
        pc_lo,
        pc_hi,
        declared_variance: Some(declared_variance),
    })
    .collect()
}

fn normalize_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Fits the calibration mean and principal axes, retaining `n_components`.
///
/// The decomposition is an SVD of the centered data matrix; eigenvalues are
/// `s_i² / n`. With `n <= D` the trailing eigenvalues are zero.
pub fn fit_pca(calibration: &Matrix, n_components: usize, epsilon: f64) -> Result<WhiteningModel> {
    let (n, d) = (calibration.rows(), calibration.cols());
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "PCA needs at least 2 calibration vectors, got {n}"
        )));
    }
    if d == 0 || n_components == 0 || n_components > d {
        return Err(Error::InvalidInput(format!(
            "cannot retain {n_components} components of a {d}-dimensional space"
        )));
    }
    if !calibration.all_finite() {
        return Err(Error::InvalidInput("calibration contains non-finite values".into()));
    }
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidInput(format!("epsilon must be finite and >= 0, got {epsilon}")));
    }

    let mean = calibration.column_means();
    let centered = faer::Mat::<f64>::from_fn(n, d, |i, j| calibration.get(i, j) - mean[j]);
    let svd = if n >= d {
        centered.thin_svd()
    } else {
        centered.svd()
    }
    .map_err(|e| Error::Numerical(format!("SVD did not converge: {e:?}")))?;

    let v = svd.V();
    let s = svd.S().column_vector();
    let nf = n as f64;
    let mut eigenvalues: Vec<f64> = (0..d)
        .map(|i| if i < s.nrows() { s[i] * s[i] / nf } else { 0.0 })
        .collect();
    // Ordering is already non-increasing; clean up rounding at exact ties.
    for i in 1..d {
        if eigenvalues[i] > eigenvalues[i - 1] {
            eigenvalues[i] = eigenvalues[i - 1];
        }
    }
    let total_variance = eigenvalues.iter().sum();

    let mut eigenvectors = Matrix::zeros(d, n_components);
    let mut col = vec![0.0; d];
    for c in 0..n_components {
        for (r, x) in col.iter_mut().enumerate() {
            *x = v[(r, c)];
        }
        normalize_sign(&mut col);
        for (r, &x) in col.iter().enumerate() {
            eigenvectors.set(r, c, x);
        }
    }
    eigenvalues.truncate(n_components);

    Ok(WhiteningModel {
        mean,
        eigenvectors,
        eigenvalues,
        total_variance,
        epsilon,
    })
}

impl WhiteningModel {
    /// Reassembles a model from stored parts, checking shapes.
    pub fn from_parts(
        mean: Vec<f64>,
        eigenvectors: Matrix,
        eigenvalues: Vec<f64>,
        total_variance: f64,
        epsilon: f64,
    ) -> Result<Self> {
        if eigenvectors.rows() != mean.len() || eigenvectors.cols() != eigenvalues.len() {
            return Err(Error::DimensionMismatch(format!(
                "mean has {} entries, eigenvectors are {}x{}, {} eigenvalues",
                mean.len(),
                eigenvectors.rows(),
                eigenvectors.cols(),
                eigenvalues.len()
            )));
        }
        if eigenvalues.windows(2).any(|w| w[1] > w[0]) || eigenvalues.iter().any(|&l| l < 0.0) {
            return Err(Error::InvalidInput(
                "eigenvalues must be non-negative and non-increasing".into(),
            ));
        }
        Ok(WhiteningModel {
            mean,
            eigenvectors,
            eigenvalues,
            total_variance,
            epsilon,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn n_components(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// `D × n_components`, one eigenvector per column.
    pub fn eigenvectors(&self) -> &Matrix {
        &self.eigenvectors
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Sum of all calibration eigenvalues, including discarded components.
    pub fn total_variance(&self) -> f64 {
        self.total_variance
    }

    /// Share of calibration variance carried by the retained components.
    pub fn retained_variance_fraction(&self) -> f64 {
        self.eigenvalues.iter().sum::<f64>() / self.total_variance
    }

    pub fn variance_fraction(&self, band: &SpectralBand) -> Result<f64> {
        self.check_band(band)?;
        let s: f64 = self.eigenvalues[band.pc_lo - 1..band.pc_hi].iter().sum();
        Ok(if self.total_variance > 0.0 {
            s / self.total_variance
        } else {
            0.0
        })
    }

    /// Copy of the model truncated to its leading `n` components.
    pub fn truncated(&self, n: usize) -> Result<WhiteningModel> {
        if n == 0 || n > self.n_components() {
            return Err(Error::InvalidInput(format!(
                "cannot truncate {} components to {n}",
                self.n_components()
            )));
        }
        Ok(WhiteningModel {
            mean: self.mean.clone(),
            eigenvectors: self.eigenvectors.column_range(0, n),
            eigenvalues: self.eigenvalues[..n].to_vec(),
            total_variance: self.total_variance,
            epsilon: self.epsilon,
        })
    }

    fn check_band(&self, band: &SpectralBand) -> Result<()> {
        if band.pc_lo == 0 || band.pc_lo > band.pc_hi || band.pc_hi > self.n_components() {
            return Err(Error::InvalidInput(format!(
                "band {} out of range for a model with {} components",
                band.label(),
                self.n_components()
            )));
        }
        Ok(())
    }

    fn check_dim(&self, vectors: &Matrix) -> Result<()> {
        if vectors.cols() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "vectors have dimension {} but the whitening model expects {}",
                vectors.cols(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// Projection matrix for components `[lo, hi)` (0-indexed).
    fn projection(&self, lo: usize, hi: usize) -> Matrix {
        let mut w = self.eigenvectors.column_range(lo, hi);
        let scale: Vec<f64> = self.eigenvalues[lo..hi]
            .iter()
            .map(|&l| 1.0 / (l + self.epsilon).sqrt())
            .collect();
        for r in 0..w.rows() {
            for (x, s) in w.row_mut(r).iter_mut().zip(&scale) {
                *x *= s;
            }
        }
        w
    }

    fn transform(&self, vectors: &Matrix, lo: usize, hi: usize) -> Result<Matrix> {
        self.check_dim(vectors)?;
        let mut centered = vectors.clone();
        for i in 0..centered.rows() {
            for (x, m) in centered.row_mut(i).iter_mut().zip(&self.mean) {
                *x -= m;
            }
        }
        Ok(centered.matmul(&self.projection(lo, hi)))
    }

    /// Whitens `vectors` (`m × D`) onto all retained components.
    pub fn whiten(&self, vectors: &Matrix) -> Result<Matrix> {
        self.transform(vectors, 0, self.n_components())
    }

    /// Whitens within a band's subspace only.
    pub fn band_whiten(&self, vectors: &Matrix, band: &SpectralBand) -> Result<Matrix> {
        self.check_band(band)?;
        self.transform(vectors, band.pc_lo - 1, band.pc_hi)
    }
}

/// Free-function form of [`WhiteningModel::whiten`].
pub fn whiten(model: &WhiteningModel, vectors: &Matrix) -> Result<Matrix> {
    model.whiten(vectors)
}

/// Free-function form of [`WhiteningModel::band_whiten`].
pub fn band_whiten(model: &WhiteningModel, vectors: &Matrix, band: &SpectralBand) -> Result<Matrix> {
    model.band_whiten(vectors, band)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cross() -> Matrix {
        Matrix::from_rows(&[[1.0, 0.0], [-1.0, 0.0], [0.0, 2.0], [0.0, -2.0]]).unwrap()
    }

    #[test]
    fn hand_computed_cross() {
        // covariance (divide by 4) is diag(0.5, 2.0)
        let m = fit_pca(&cross(), 2, DEFAULT_EPSILON).unwrap();
        assert_eq!(m.mean(), &[0.0, 0.0]);
        assert!((m.eigenvalues()[0] - 2.0).abs() < 1e-12);
        assert!((m.eigenvalues()[1] - 0.5).abs() < 1e-12);
        let v1 = m.eigenvectors().column(0);
        assert!(v1[0].abs() < 1e-12 && (v1[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_data_whitens_to_zero() {
        let data = Matrix::from_fn(5, 3, |_, j| j as f64 + 0.5);
        let m = fit_pca(&data, 3, DEFAULT_EPSILON).unwrap();
        assert!(m.eigenvalues().iter().all(|&l| l == 0.0));
        let w = m.whiten(&data).unwrap();
        assert!(w.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn mean_maps_to_origin_and_axis_to_unit() {
        let m = fit_pca(&cross(), 2, DEFAULT_EPSILON).unwrap();
        let l1 = m.eigenvalues()[0];
        let v1 = m.eigenvectors().column(0);
        let h = Matrix::from_rows(&[
            m.mean().to_vec(),
            m.mean().iter().zip(&v1).map(|(mu, v)| mu + v * l1.sqrt()).collect(),
        ])
        .unwrap();
        let w = m.whiten(&h).unwrap();
        assert_eq!(w.row(0), &[0.0, 0.0]);
        let expect = l1.sqrt() / (l1 + DEFAULT_EPSILON).sqrt();
        assert!((w.get(1, 0) - expect).abs() < 1e-12);
        assert!(w.get(1, 1).abs() < 1e-12);
    }

    #[test]
    fn too_few_rows_and_nan_rejected() {
        assert!(fit_pca(&Matrix::zeros(1, 3), 3, 1e-5).is_err());
        let mut bad = Matrix::zeros(4, 2);
        bad.set(2, 1, f64::NAN);
        assert!(fit_pca(&bad, 2, 1e-5).is_err());
    }

    #[test]
    fn dimension_and_band_errors() {
        let m = fit_pca(&cross(), 2, DEFAULT_EPSILON).unwrap();
        assert!(m.whiten(&Matrix::zeros(1, 3)).is_err());
        let band = SpectralBand::new("x", 2, 3).unwrap();
        assert!(m.band_whiten(&cross(), &band).is_err());
        assert!(SpectralBand::new("bad", 3, 2).is_err());
    }

    #[test]
    fn default_band_layout() {
        let b = default_bands();
        assert_eq!(b.len(), 6);
        assert_eq!((b[0].name.as_str(), b[0].pc_lo, b[0].pc_hi), ("Dominant", 1, 16));
        assert_eq!((b[5].name.as_str(), b[5].pc_lo, b[5].pc_hi), ("Tail", 513, 768));
        let mut next = 1;
        for band in &b {
            assert_eq!(band.pc_lo, next);
            next = band.pc_hi + 1;
        }
        assert_eq!(next, 769);
    }

    #[test]
    fn sign_rule_prefers_first_index_on_ties() {
        let mut v = vec![-0.5, 0.5, 0.1];
        normalize_sign(&mut v);
        assert_eq!(v, vec![0.5, -0.5, -0.1]);
    }
}
