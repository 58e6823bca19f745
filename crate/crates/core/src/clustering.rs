//! Mini-batch k-means (per-centroid learning rate `1/count`) with k-means++
//! seeding and best-of-`n_init` restarts.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{squared_distance, Matrix};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansConfig {
    pub batch_size: usize,
    pub n_init: usize,
    pub rng_seed: u64,
    /// Mini-batches per restart.
    pub max_iterations: usize,
    /// Early stop once no centroid moves more than this within a batch; 0 disables.
    pub tolerance: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            batch_size: 1024,
            n_init: 5,
            rng_seed: 42,
            max_iterations: 100,
            tolerance: 1e-4,
        }
    }
}

pub const DEFAULT_K: usize = 40;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    centroids: Matrix,
    config: KMeansConfig,
    inertia: f64,
    restart_inertias: Vec<f64>,
}

impl ClusterModel {
    pub fn from_parts(
        centroids: Matrix,
        config: KMeansConfig,
        inertia: f64,
        restart_inertias: Vec<f64>,
    ) -> Result<Self> {
        if centroids.rows() == 0 || centroids.cols() == 0 {
            return Err(Error::InvalidInput("cluster model needs k >= 1 centroids".into()));
        }
        if !(inertia >= 0.0) {
            return Err(Error::InvalidInput(format!("inertia must be >= 0, got {inertia}")));
        }
        Ok(ClusterModel {
            centroids,
            config,
            inertia,
            restart_inertias,
        })
    }

    pub fn k(&self) -> usize {
        self.centroids.rows()
    }

    pub fn dim(&self) -> usize {
        self.centroids.cols()
    }

    pub fn centroids(&self) -> &Matrix {
        &self.centroids
    }

    pub fn config(&self) -> &KMeansConfig {
        &self.config
    }

    /// Sum of squared distances of the training data to their nearest centroid.
    pub fn inertia(&self) -> f64 {
        self.inertia
    }

    /// Full-data inertia of every restart, in restart order.
    pub fn restart_inertias(&self) -> &[f64] {
        &self.restart_inertias
    }

    pub fn predict(&self, data: &Matrix) -> Vec<usize> {
        nearest(data, &self.centroids).into_iter().map(|(c, _)| c).collect()
    }
}

/// Cluster count for a band of `band_dim` components: `max(10, min(40, ⌊band_dim/2⌋))`.
pub fn adapted_k(band_dim: usize) -> usize {
    (band_dim / 2).clamp(10, DEFAULT_K)
}

/// Nearest centroid (lowest index on ties) and squared distance per row.
pub(crate) fn nearest(data: &Matrix, centroids: &Matrix) -> Vec<(usize, f64)> {
    let k = centroids.rows();
    let c_norms: Vec<f64> = centroids.row_iter().map(|c| c.iter().map(|x| x * x).sum()).collect();
    let cross = data.matmul_transposed(centroids);
    (0..data.rows())
        .map(|i| {
            let x = data.row(i);
            let x_norm: f64 = x.iter().map(|v| v * v).sum();
            let g = cross.row(i);
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for j in 0..k {
                let d = x_norm + c_norms[j] - 2.0 * g[j];
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            // Exact distance for the winner; the expanded form loses precision near zero.
            (best, squared_distance(x, centroids.row(best)))
        })
        .collect()
}

/// k-means++ seeding: first centroid uniform, the rest by D² sampling.
pub fn kmeans_plus_plus(data: &Matrix, k: usize, seed: u64) -> Result<Matrix> {
    let n = data.rows();
    let mut rng = rng::rng(seed);
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..n));
    let mut d2: Vec<f64> = data
        .row_iter()
        .map(|x| squared_distance(x, data.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidInput(format!(
                "data has fewer than k = {k} distinct points"
            )));
        }
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &d) in d2.iter().enumerate() {
            if d > 0.0 {
                acc += d;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
        }
        let pick = pick.expect("positive total implies a candidate");
        chosen.push(pick);
        let c = data.row(pick);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(squared_distance(data.row(i), c));
        }
    }
    Ok(data.select_rows(&chosen))
}

fn validate(data: &Matrix, k: usize, cfg: &KMeansConfig) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be >= 1".into()));
    }
    if data.cols() == 0 {
        return Err(Error::InvalidInput("data must have at least one dimension".into()));
    }
    if data.rows() < k {
        return Err(Error::InvalidInput(format!(
            "need n >= k, got n = {} and k = {k}",
            data.rows()
        )));
    }
    if !data.all_finite() {
        return Err(Error::InvalidInput("clustering data contains non-finite values".into()));
    }
    if cfg.batch_size == 0 || cfg.n_init == 0 {
        return Err(Error::InvalidInput("batch_size and n_init must be >= 1".into()));
    }
    Ok(())
}

/// Runs mini-batch updates from `init` and returns the centroids plus
/// their full-data inertia. A batch size of at least `n` uses every point
/// once per iteration.
pub fn refine_minibatch(data: &Matrix, init: Matrix, cfg: &KMeansConfig, seed: u64) -> Result<(Matrix, f64)> {
    validate(data, init.rows(), cfg)?;
    if init.cols() != data.cols() {
        return Err(Error::DimensionMismatch(format!(
            "initial centroids have dimension {}, data {}",
            init.cols(),
            data.cols()
        )));
    }
    let n = data.rows();
    let k = init.rows();
    let mut rng = rng::rng(rng::derive_seed(seed, &[rng::tag("minibatch")]));
    let mut centroids = init;
    let mut counts = vec![0u64; k];
    let full_batch = cfg.batch_size >= n;
    let mut batch_idx: Vec<usize> = (0..n.min(cfg.batch_size)).collect();

    for _ in 0..cfg.max_iterations {
        if !full_batch {
            for b in batch_idx.iter_mut() {
                *b = rng.random_range(0..n);
            }
        }
        let batch = data.select_rows(&batch_idx);
        let assign = nearest(&batch, &centroids);
        let before = centroids.clone();
        for (x, &(c, _)) in batch.row_iter().zip(&assign) {
            counts[c] += 1;
            let eta = 1.0 / counts[c] as f64;
            for (ci, xi) in centroids.row_mut(c).iter_mut().zip(x) {
                *ci += eta * (xi - *ci);
            }
        }
        let moved = (0..k)
            .map(|c| squared_distance(before.row(c), centroids.row(c)).sqrt())
            .fold(0.0, f64::max);
        if moved < cfg.tolerance {
            break;
        }
    }

    relocate_empty(data, &mut centroids);
    let inertia = nearest(data, &centroids).iter().map(|&(_, d)| d).sum();
    Ok((centroids, inertia))
}

/// Moves every centroid that owns no point onto the point farthest from its
/// current nearest centroid. Duplicated centroids count as empty because
/// ties resolve to the lower index.
fn relocate_empty(data: &Matrix, centroids: &mut Matrix) {
    let k = centroids.rows();
    for _ in 0..k {
        let assign = nearest(data, centroids);
        let mut owned = vec![false; k];
        for &(c, _) in &assign {
            owned[c] = true;
        }
        let Some(empty) = owned.iter().position(|&o| !o) else {
            return;
        };
        let far = assign
            .iter()
            .enumerate()
            .fold((0, -1.0), |best, (i, &(_, d))| if d > best.1 { (i, d) } else { best });
        if far.1 <= 0.0 {
            return;
        }
        centroids.row_mut(empty).copy_from_slice(data.row(far.0));
    }
}

/// Fits `k` centroids. Restart `r` is seeded with `rng_seed + r`; the restart
/// with the lowest full-data inertia wins (earliest on ties).
pub fn fit_kmeans(data: &Matrix, k: usize, cfg: &KMeansConfig) -> Result<ClusterModel> {
    validate(data, k, cfg)?;
    let mut best: Option<(Matrix, f64)> = None;
    let mut restart_inertias = Vec::with_capacity(cfg.n_init);
    for r in 0..cfg.n_init {
        let seed = cfg.rng_seed.wrapping_add(r as u64);
        let init = kmeans_plus_plus(data, k, seed)?;
        let (centroids, inertia) = refine_minibatch(data, init, cfg, seed)?;
        restart_inertias.push(inertia);
        if best.as_ref().is_none_or(|b| inertia < b.1) {
            best = Some((centroids, inertia));
        }
    }
    let (centroids, inertia) = best.expect("n_init >= 1");
    ClusterModel::from_parts(centroids, cfg.clone(), inertia, restart_inertias)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adapted_k_rule() {
        assert_eq!(adapted_k(16), 10);
        assert_eq!(adapted_k(32), 16);
        assert_eq!(adapted_k(64), 32);
        assert_eq!(adapted_k(80), 40);
        assert_eq!(adapted_k(128), 40);
        assert_eq!(adapted_k(1), 10);
        assert_eq!(adapted_k(21), 10);
        assert_eq!(adapted_k(23), 11);
    }

    #[test]
    fn k_equals_n_has_zero_inertia() {
        let data = Matrix::from_fn(6, 2, |i, j| (i * 3 + j * j) as f64);
        let m = fit_kmeans(&data, 6, &KMeansConfig::default()).unwrap();
        assert_eq!(m.inertia(), 0.0);
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let data = Matrix::from_fn(50, 3, |i, j| ((i * 7 + j * 13) % 11) as f64 - 5.0);
        let m = fit_kmeans(&data, 1, &KMeansConfig::default()).unwrap();
        let mean = data.column_means();
        for (c, mu) in m.centroids().row(0).iter().zip(&mean) {
            assert!((c - mu).abs() < 1e-12);
        }
        let total: f64 = data.row_iter().map(|x| squared_distance(x, &mean)).sum();
        assert!((m.inertia() - total).abs() < 1e-9 * total);
    }

    #[test]
    fn errors() {
        let data = Matrix::zeros(3, 2);
        assert!(fit_kmeans(&data, 4, &KMeansConfig::default()).is_err());
        // three identical points cannot seed two distinct centroids
        assert!(fit_kmeans(&data, 2, &KMeansConfig::default()).is_err());
        let mut nan = Matrix::from_fn(4, 2, |i, _| i as f64);
        nan.set(0, 0, f64::INFINITY);
        assert!(fit_kmeans(&nan, 2, &KMeansConfig::default()).is_err());
    }

    #[test]
    fn empty_centroid_moves_to_farthest_point() {
        let data = Matrix::from_rows(&[[0.0], [1.0], [10.0]]).unwrap();
        let mut c = Matrix::from_rows(&[[0.5], [100.0]]).unwrap();
        relocate_empty(&data, &mut c);
        assert_eq!(c.row(1), &[10.0]);
    }
}
