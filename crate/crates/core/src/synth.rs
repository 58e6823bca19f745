//! Synthetic traces with a known spectrum and planted condition effects.
//!
//! Tokens are generated in a latent basis where component `i` has variance
//! `λ_i`, then rotated into the hidden space by a product of random
//! Householder reflections. In latent units (unit variance per component)
//! a token of prompt `p` is
//!
//! ```text
//! z_t = sqrt(φ)·o_p + sqrt(1 − φ)·e_t,    e_t = ρ·e_{t−1} + sqrt(1 − ρ²)·ξ_t
//! ```
//!
//! where `o_p` is the prompt offset and `φ` the prompt share of variance.
//! Calibration offsets are the "wells" the clustering later finds; an
//! experimental prompt's offset mixes a part that persists across seeds
//! with a fresh draw per seed. Plants act on prompt offsets, so every
//! planted effect is a prompt-level effect.

use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::rng::{self, tag, CALIBRATION_SEED};
use crate::trace::{Condition, IndexRecord, TraceMetadata, TraceSet};
use crate::whitening::default_bands;

/// Sum of the default eigenvalues; raw token norms land near its square root.
pub const TOTAL_VARIANCE: f64 = 6.0e4;

/// Pull toward the designated well shared by all three levels of a max-sim
/// plant; `gap` then moves each level further along the same path. Max-sim
/// barely responds to weak pulls, so without a shared base the first step
/// would be invisible.
const MAX_SIM_BASE_PULL: f64 = 0.4;

/// Default entropy plant offset length at the lowest level, in latent units.
pub const ENTROPY_AMPLITUDE: f64 = 14.0;

/// Per-band shares of the default spectrum; they add to one.
const BAND_SHARES: [f64; 6] = [0.9795, 0.007, 0.006, 0.004, 0.003, 0.0005];

/// Householder reflections composing the latent-to-hidden rotation.
const REFLECTIONS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PlantTarget {
    MaxSim,
    Entropy,
    Norm,
}

/// A condition effect confined to a range of latent components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedEffect {
    pub target_metric: PlantTarget,
    /// 1-indexed inclusive component range.
    pub band: (usize, usize),
    /// Conditions from highest to lowest value of the target metric.
    pub ordering: [Condition; 3],
    /// Shift per adjacent level.
    pub gap: f64,
    /// Only the first `prompts` prompts of each condition carry the plant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompts: Option<usize>,
    /// Offset length of an entropy plant at its lowest level, in latent
    /// units. Defaults to [`ENTROPY_AMPLITUDE`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
}

impl PlantedEffect {
    /// 0 for the lowest condition in the ordering, 2 for the highest.
    pub fn level(&self, c: Condition) -> Option<usize> {
        self.ordering.iter().position(|&o| o == c).map(|i| 2 - i)
    }

    fn applies(&self, c: Condition, prompt: usize) -> Option<usize> {
        if self.prompts.is_some_and(|n| prompt >= n) {
            return None;
        }
        self.level(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub hidden_dim: usize,
    /// Latent variances, non-increasing; components past its end are zero.
    pub eigen_profile: Vec<f64>,
    pub n_calibration_prompts: usize,
    pub tokens_per_prompt: usize,
    pub n_prompts_per_condition: usize,
    pub n_seeds: usize,
    pub plants: Vec<PlantedEffect>,
    /// AR(1) coefficient of token noise within a prompt.
    pub ar_coefficient: f64,
    /// Share of a well axis's variance carried by the prompt offset.
    pub prompt_share: f64,
    /// Share of an experimental prompt offset that persists across seeds.
    pub prompt_persistence: f64,
    /// Center and rotate calibration token noise to an exact isotropic
    /// sample covariance.
    pub moment_matched_calibration: bool,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            hidden_dim: 768,
            eigen_profile: default_eigen_profile(768),
            n_calibration_prompts: 40,
            tokens_per_prompt: 60,
            n_prompts_per_condition: 30,
            n_seeds: 20,
            plants: Vec::new(),
            ar_coefficient: 0.5,
            prompt_share: 0.8,
            prompt_persistence: 0.0,
            moment_matched_calibration: true,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let l = self.eigen_profile.len();
        if self.hidden_dim == 0 {
            errs.push("hidden_dim must be >= 1".to_string());
        }
        if l == 0 || l > self.hidden_dim {
            errs.push(format!("eigen_profile length {l} must lie in 1..={}", self.hidden_dim));
        }
        if self.eigen_profile.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            errs.push("eigen_profile values must be positive and finite".to_string());
        }
        if self.eigen_profile.windows(2).any(|w| w[1] > w[0]) {
            errs.push("eigen_profile must be non-increasing".to_string());
        }
        if self.n_calibration_prompts < 2 || self.tokens_per_prompt == 0 || self.n_prompts_per_condition == 0 {
            errs.push("need >= 2 calibration prompts, >= 1 token and >= 1 prompt per condition".to_string());
        }
        for (name, v) in [
            ("ar_coefficient", self.ar_coefficient),
            ("prompt_share", self.prompt_share),
            ("prompt_persistence", self.prompt_persistence),
        ] {
            if !(0.0..1.0).contains(&v) {
                errs.push(format!("{name} = {v} is out of range"));
            }
        }
        for (i, p) in self.plants.iter().enumerate() {
            let (lo, hi) = p.band;
            if lo == 0 || lo > hi || hi > self.hidden_dim {
                errs.push(format!("plant {i}: band {lo}..{hi} exceeds hidden_dim {}", self.hidden_dim));
            } else if hi > l {
                errs.push(format!("plant {i}: band {lo}..{hi} exceeds the {l}-component eigen_profile"));
            }
            if !(p.gap >= 0.0 && p.gap.is_finite()) {
                errs.push(format!("plant {i}: gap must be >= 0"));
            }
            let mut ord = p.ordering.to_vec();
            ord.sort();
            ord.dedup();
            if ord.len() != 3 || ord.iter().any(|c| !c.is_experimental()) {
                errs.push(format!("plant {i}: ordering must be a permutation of T1, T2, T3"));
            }
            if p.amplitude.is_some_and(|a| !(a >= 0.0 && a.is_finite())) {
                errs.push(format!("plant {i}: amplitude must be >= 0"));
            }
        }
        let wells = self.well_axes();
        for (i, p) in self.plants.iter().enumerate() {
            if p.target_metric == PlantTarget::MaxSim && !wells.iter().any(|&a| a + 1 >= p.band.0 && a < p.band.1) {
                errs.push(format!(
                    "plant {i}: a max-sim plant needs a band that includes one of the first {} components, where the clusters live",
                    wells.last().map_or(0, |a| a + 1)
                ));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }

    /// Parses a spec; without an explicit `eigen_profile` the default
    /// profile for the given `hidden_dim` is used.
    pub fn from_json(text: &str) -> Result<Self> {
        let bad = |e: serde_json::Error| Error::InvalidInput(format!("synth spec: {e}"));
        let v: serde_json::Value = serde_json::from_str(text).map_err(bad)?;
        let explicit = v.get("eigen_profile").is_some();
        let mut spec: SynthSpec = serde_json::from_value(v).map_err(bad)?;
        if !explicit {
            spec.eigen_profile = default_eigen_profile(spec.hidden_dim);
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    fn latent_dim(&self) -> usize {
        self.eigen_profile.len()
    }

    /// Axes that carry calibration wells: the leading axes outside every
    /// entropy plant's void, as many as zero-mean orthogonal columns over the
    /// calibration prompts allow.
    fn well_axes(&self) -> Vec<usize> {
        let voids = self.void_axes();
        (0..self.latent_dim())
            .filter(|i| !voids.contains(i))
            .take(self.n_calibration_prompts.saturating_sub(1))
            .collect()
    }

    /// Well-free axes entropy plants displace prompts along: the last quarter
    /// (at least one) of each entropy band, 0-based, deduplicated.
    fn void_axes(&self) -> Vec<usize> {
        let mut axes: Vec<usize> = self
            .plants
            .iter()
            .filter(|p| p.target_metric == PlantTarget::Entropy)
            .flat_map(|p| void_range(p.band))
            .collect();
        axes.sort_unstable();
        axes.dedup();
        axes
    }
}

fn void_range((lo, hi): (usize, usize)) -> std::ops::Range<usize> {
    let w = hi + 1 - lo;
    hi - w.div_ceil(4)..hi
}

/// Piecewise-geometric spectrum: each default band holds its share of
/// [`TOTAL_VARIANCE`] and decays by a factor of two across its width. For
/// other dimensions the band edges scale proportionally.
pub fn default_eigen_profile(hidden_dim: usize) -> Vec<f64> {
    band_profile(hidden_dim, &BAND_SHARES)
}

/// Piecewise-geometric spectrum with the given per-band shares of
/// [`TOTAL_VARIANCE`] over the default band layout. Values are capped at
/// their predecessor so the profile never increases; at 768 dimensions no
/// cap binds and the shares are exact.
pub fn band_profile(hidden_dim: usize, shares: &[f64; 6]) -> Vec<f64> {
    let bands = default_bands();
    let mut out = Vec::with_capacity(hidden_dim);
    let mut start = 0;
    for (i, (band, &share)) in bands.iter().zip(shares).enumerate() {
        let end = if i + 1 == bands.len() {
            hidden_dim
        } else {
            (band.pc_hi * hidden_dim).div_ceil(768).clamp(start + 1, hidden_dim)
        };
        let w = end.saturating_sub(start);
        if w == 0 {
            continue;
        }
        let ratio = if w > 1 { 0.5f64.powf(1.0 / (w - 1) as f64) } else { 1.0 };
        let weights: Vec<f64> = (0..w).map(|j| ratio.powi(j as i32)).collect();
        let total: f64 = weights.iter().sum();
        for x in &weights {
            // narrow bands at small dimensions could otherwise step upward
            let v = TOTAL_VARIANCE * share * x / total;
            out.push(out.last().map_or(v, |&p: &f64| v.min(p)));
        }
        start = end;
    }
    out
}

fn normals(r: &mut rng::Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(r)).collect()
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = dot(&v, &v).sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// Orthonormalizes `cols` (each of length n) against `fixed` and each other.
fn gram_schmidt(fixed: &[Vec<f64>], cols: &mut [Vec<f64>]) {
    let mut basis: Vec<Vec<f64>> = fixed.iter().map(|v| unit(v.clone())).collect();
    for c in cols.iter_mut() {
        for _ in 0..2 {
            for b in &basis {
                let d = dot(c, b);
                c.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
            }
        }
        *c = unit(std::mem::take(c));
        basis.push(c.clone());
    }
}

/// The latent structure behind one synthetic data set: spectrum, rotation,
/// calibration wells and persistent prompt offsets. Everything is a pure
/// function of `(spec, master_seed)`.
#[derive(Debug, Clone)]
pub struct SynthWorld {
    spec: SynthSpec,
    master_seed: u64,
    sqrt_lambda: Vec<f64>,
    reflectors: Vec<Vec<f64>>,
    /// Calibration prompt offsets in latent units, one row per prompt.
    wells: Matrix,
    /// Axes with prompt structure; every other axis is token noise only.
    well_axes: Vec<bool>,
}

impl SynthWorld {
    pub fn new(spec: SynthSpec, master_seed: u64) -> Result<Self> {
        spec.validate()?;
        let l = spec.latent_dim();
        let d = spec.hidden_dim;
        let mut r = rng::rng_from(master_seed, &[tag("rotation")]);
        let reflectors = (0..REFLECTIONS).map(|_| unit(normals(&mut r, d))).collect();

        // Calibration wells live on the leading free axes only, as a
        // balanced design: orthogonal zero-mean columns with unit second
        // moment over the prompts. Together with moment-matched token noise
        // this makes the calibration covariance exactly diagonal in the
        // latent basis, so principal components coincide with latent axes
        // and a plant on a component range stays in that range.
        let n = spec.n_calibration_prompts;
        let mut r = rng::rng_from(master_seed, &[tag("wells")]);
        let axes = spec.well_axes();
        let mut lead: Vec<Vec<f64>> = axes.iter().map(|_| normals(&mut r, n)).collect();
        gram_schmidt(&[vec![1.0; n]], &mut lead);
        let mut cols = vec![vec![0.0; n]; l];
        let mut well_axes = vec![false; l];
        for (&i, c) in axes.iter().zip(lead) {
            cols[i].iter_mut().zip(c).for_each(|(x, v)| *x = v * (n as f64).sqrt());
            well_axes[i] = true;
        }
        let wells = Matrix::from_fn(n, l, |p, i| cols[i][p]);

        Ok(SynthWorld {
            sqrt_lambda: spec.eigen_profile.iter().map(|v| v.sqrt()).collect(),
            spec,
            master_seed,
            reflectors,
            wells,
            well_axes,
        })
    }

    pub fn spec(&self) -> &SynthSpec {
        &self.spec
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn latent_dim(&self) -> usize {
        self.spec.latent_dim()
    }

    /// Calibration prompt offsets in latent units.
    pub fn wells(&self) -> &Matrix {
        &self.wells
    }

    pub fn prompt_id(condition: Condition, prompt: usize) -> String {
        match condition {
            Condition::Calibration => format!("CAL-{prompt:02}"),
            c => format!("{c}-{prompt:02}"),
        }
    }

    fn noise(&self, r: &mut rng::Rng) -> Matrix {
        let (t, l) = (self.spec.tokens_per_prompt, self.latent_dim());
        let rho = self.spec.ar_coefficient;
        let innov = (1.0 - rho * rho).sqrt();
        let mut e = Matrix::zeros(t, l);
        for j in 0..t {
            for i in 0..l {
                let xi: f64 = StandardNormal.sample(r);
                let v = if j == 0 { xi } else { rho * e.get(j - 1, i) + innov * xi };
                e.set(j, i, v);
            }
        }
        e
    }

    /// Mixes an offset with token noise. Well axes split their variance
    /// between offset and noise; other axes add unit noise to whatever
    /// offset they carry.
    fn tokens(&self, offset: &[f64], noise: &Matrix) -> Matrix {
        let phi = self.spec.prompt_share;
        let (a, b) = (phi.sqrt(), (1.0 - phi).sqrt());
        let mut z = Matrix::zeros(noise.rows(), noise.cols());
        for t in 0..noise.rows() {
            let e = noise.row(t);
            let out = z.row_mut(t);
            for i in 0..out.len() {
                out[i] = if self.well_axes[i] { a * offset[i] + b * e[i] } else { a * offset[i] + e[i] };
            }
        }
        z
    }

    fn calibration_noise(&self, prompt: usize) -> Matrix {
        let mut r = rng::rng_from(self.master_seed, &[tag("calibration-tokens"), prompt as u64]);
        self.noise(&mut r)
    }

    /// Latent tokens of one calibration prompt, without moment matching.
    pub fn calibration_latents(&self, prompt: usize) -> Matrix {
        self.tokens(self.wells.row(prompt), &self.calibration_noise(prompt))
    }

    /// All calibration tokens in latent units, prompt by prompt. With
    /// `moment_matched_calibration` the token noise is centered within each
    /// prompt and rotated to an exactly isotropic sample covariance, so
    /// sampling spread does not leak into the measured spectrum. The prompt
    /// offsets are left alone.
    pub fn calibration_latent_matrix(&self) -> Result<Matrix> {
        let (t, l) = (self.spec.tokens_per_prompt, self.latent_dim());
        let np = self.spec.n_calibration_prompts;
        let blocks: Vec<Matrix> = (0..np).into_par_iter().map(|p| self.calibration_noise(p)).collect();
        let n = np * t;
        let mut e = Matrix::zeros(n, l);
        for (p, b) in blocks.iter().enumerate() {
            let mean = b.column_means();
            for j in 0..t {
                let row = e.row_mut(p * t + j);
                row.copy_from_slice(b.row(j));
                if self.spec.moment_matched_calibration {
                    row.iter_mut().zip(&mean).for_each(|(x, m)| *x -= m);
                }
            }
        }
        if self.spec.moment_matched_calibration && n >= l + np {
            let m = faer::Mat::<f64>::from_fn(n, l, |i, j| e.get(i, j));
            let svd = m
                .thin_svd()
                .map_err(|_| Error::Numerical("calibration noise SVD did not converge".into()))?;
            let q = svd.U() * svd.V().transpose();
            let scale = (n as f64).sqrt();
            e = Matrix::from_fn(n, l, |i, j| scale * q[(i, j)]);
        }
        let mut z = Matrix::zeros(n, l);
        for p in 0..np {
            let rows: Vec<usize> = (p * t..(p + 1) * t).collect();
            let block = self.tokens(self.wells.row(p), &e.select_rows(&rows));
            for j in 0..t {
                z.row_mut(p * t + j).copy_from_slice(block.row(j));
            }
        }
        Ok(z)
    }

    fn persistent_offset(&self, condition: Condition, prompt: usize) -> Vec<f64> {
        let mut r = rng::rng_from(self.master_seed, &[tag("persistent"), tag(condition.as_str()), prompt as u64]);
        normals(&mut r, self.latent_dim())
    }

    /// Offset of an experimental prompt in one seed, before plants.
    pub fn base_offset(&self, condition: Condition, prompt: usize, seed: u64) -> Vec<f64> {
        let k = self.spec.prompt_persistence;
        let persistent = self.persistent_offset(condition, prompt);
        let mut r = rng::rng_from(
            self.master_seed,
            &[tag("fresh"), tag(condition.as_str()), prompt as u64, seed],
        );
        let fresh = normals(&mut r, self.latent_dim());
        let mut o: Vec<f64> = persistent
            .iter()
            .zip(&fresh)
            .map(|(p, f)| k.sqrt() * p + (1.0 - k).sqrt() * f)
            .collect();
        for (x, &w) in o.iter_mut().zip(&self.well_axes) {
            if !w {
                *x = 0.0;
            }
        }
        o
    }

    /// Calibration well that a max-sim plant pulls this prompt toward.
    pub fn plant_well(&self, plant: usize, condition: Condition, prompt: usize) -> usize {
        let mut r = rng::rng_from(
            self.master_seed,
            &[tag("plant-well"), plant as u64, tag(condition.as_str()), prompt as u64],
        );
        r.random_range(0..self.spec.n_calibration_prompts)
    }

    /// Latent tokens of an experimental prompt in one seed, plants applied.
    pub fn prompt_latents(&self, condition: Condition, prompt: usize, seed: u64) -> Matrix {
        let mut offset = self.base_offset(condition, prompt, seed);
        for (pi, p) in self.spec.plants.iter().enumerate() {
            if p.target_metric != PlantTarget::MaxSim {
                continue;
            }
            if let Some(level) = p.applies(condition, prompt) {
                let c = (MAX_SIM_BASE_PULL + p.gap * level as f64).min(1.0);
                // well rows and base offsets have the same expected length, so
                // the pull moves direction without changing the norm
                let well = self.wells.row(self.plant_well(pi, condition, prompt));
                let s = (1.0 - c * c).sqrt();
                for i in p.band.0 - 1..p.band.1 {
                    if self.well_axes[i] {
                        offset[i] = c * well[i] + s * offset[i];
                    }
                }
            }
        }
        let mut r = rng::rng_from(
            self.master_seed,
            &[tag("tokens"), tag(condition.as_str()), prompt as u64, seed],
        );
        let noise = self.noise(&mut r);
        let mut z = self.tokens(&offset, &noise);

        for (pi, p) in self.spec.plants.iter().enumerate() {
            let Some(level) = p.applies(condition, prompt) else {
                continue;
            };
            match p.target_metric {
                PlantTarget::MaxSim => {}
                PlantTarget::Entropy => {
                    // A displacement off the wells lowers every centroid
                    // similarity at once; higher levels move further.
                    let len = p.amplitude.unwrap_or(ENTROPY_AMPLITUDE) * (1.0 + p.gap * level as f64);
                    let axes = void_range(p.band);
                    let mut r = rng::rng_from(
                        self.master_seed,
                        &[tag("void"), pi as u64],
                    );
                    let dir = unit(normals(&mut r, axes.len()));
                    for t in 0..z.rows() {
                        z.row_mut(t)[axes.clone()].iter_mut().zip(&dir).for_each(|(x, u)| *x += len * u);
                    }
                }
                PlantTarget::Norm => {
                    let f = 1.0 + p.gap * level as f64;
                    for t in 0..z.rows() {
                        z.row_mut(t)[p.band.0 - 1..p.band.1].iter_mut().for_each(|x| *x *= f);
                    }
                }
            }
        }
        z
    }

    /// Maps latent tokens to hidden states.
    pub fn embed(&self, z: &Matrix) -> Matrix {
        let d = self.spec.hidden_dim;
        let mut out = Matrix::zeros(z.rows(), d);
        for t in 0..z.rows() {
            let h = out.row_mut(t);
            for (i, (x, s)) in z.row(t).iter().zip(&self.sqrt_lambda).enumerate() {
                h[i] = x * s;
            }
            for v in self.reflectors.iter().rev() {
                let c = 2.0 * dot(h, v);
                h.iter_mut().zip(v).for_each(|(x, y)| *x -= c * y);
            }
        }
        out
    }

    /// Hidden-space direction of latent component `i` (0-based).
    pub fn axis(&self, i: usize) -> Vec<f64> {
        let mut e = Matrix::zeros(1, self.latent_dim());
        e.set(0, i, 1.0 / self.sqrt_lambda[i]);
        self.embed(&e).into_vec()
    }

    pub fn generate(&self) -> Result<TraceSet> {
        let spec = &self.spec;
        let t = spec.tokens_per_prompt;
        let mut blocks: Vec<(Condition, usize, u64)> = (0..spec.n_calibration_prompts)
            .map(|p| (Condition::Calibration, p, CALIBRATION_SEED))
            .collect();
        for seed in 1..=spec.n_seeds as u64 {
            for c in Condition::EXPERIMENTAL {
                blocks.extend((0..spec.n_prompts_per_condition).map(|p| (c, p, seed)));
            }
        }
        let cal = self.calibration_latent_matrix()?;
        let rows: Vec<Vec<f32>> = blocks
            .par_iter()
            .map(|&(c, p, seed)| {
                let z = if c == Condition::Calibration {
                    cal.select_rows(&(p * t..(p + 1) * t).collect::<Vec<_>>())
                } else {
                    self.prompt_latents(c, p, seed)
                };
                self.embed(&z).as_slice().iter().map(|&v| v as f32).collect()
            })
            .collect();
        let mut vectors = Vec::with_capacity(blocks.len() * t * spec.hidden_dim);
        let mut index = Vec::with_capacity(blocks.len() * t);
        for (&(c, p, seed), block) in blocks.iter().zip(rows) {
            vectors.extend(block);
            let id = Self::prompt_id(c, p);
            for pos in 0..t {
                index.push(IndexRecord {
                    prompt_id: id.clone(),
                    condition: c,
                    seed,
                    token_position: pos as u32,
                    row: index.len(),
                });
            }
        }
        let metadata = TraceMetadata {
            model_name: "synthetic".into(),
            hidden_dim: spec.hidden_dim,
            max_tokens: t,
            creation_info: format!("synth master_seed={} plants={}", self.master_seed, spec.plants.len()),
        };
        TraceSet::new(vectors, index, metadata)
    }
}

/// Deterministic synthetic trace set for `(spec, master_seed)`.
pub fn gen_traces(spec: &SynthSpec, master_seed: u64) -> Result<TraceSet> {
    SynthWorld::new(spec.clone(), master_seed)?.generate()
}

/// Prompts per condition that carry the plant in the artifact scenario.
pub const ARTIFACT_PLANTED_PROMPTS: usize = 15;

/// Default spec plus an entropy plant on the dominant band (PCs 1–16),
/// ordered T1 > T2 > T3, carried by the first 15 of 30 prompts.
pub fn artifact_spec() -> SynthSpec {
    SynthSpec {
        plants: vec![PlantedEffect {
            target_metric: PlantTarget::Entropy,
            band: (1, 16),
            ordering: [Condition::T1, Condition::T2, Condition::T3],
            gap: 0.2,
            prompts: Some(ARTIFACT_PLANTED_PROMPTS),
            amplitude: None,
        }],
        ..SynthSpec::default()
    }
}

pub fn gen_artifact_scenario(master_seed: u64) -> TraceSet {
    gen_traces(&artifact_spec(), master_seed).expect("the artifact spec is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthSpec {
        SynthSpec {
            hidden_dim: 24,
            eigen_profile: default_eigen_profile(24),
            n_calibration_prompts: 6,
            tokens_per_prompt: 4,
            n_prompts_per_condition: 3,
            n_seeds: 2,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn default_profile_shape() {
        let p = default_eigen_profile(768);
        assert_eq!(p.len(), 768);
        assert!(p.windows(2).all(|w| w[1] <= w[0]));
        let total: f64 = p.iter().sum();
        assert!((total - TOTAL_VARIANCE).abs() < 1e-6);
        let top: f64 = p[..16].iter().sum();
        assert!((top / total - 0.9795).abs() < 1e-12);
        assert!(p[767] > 1e-2);
    }

    #[test]
    fn wells_are_balanced_on_leading_components() {
        let w = SynthWorld::new(SynthSpec::default(), 3).unwrap();
        let n = w.wells().rows() as f64;
        for i in 0..16 {
            let c = w.wells().column(i);
            let m: f64 = c.iter().sum::<f64>() / n;
            let s: f64 = c.iter().map(|x| x * x).sum::<f64>() / n;
            assert!(m.abs() < 1e-12 && (s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn counts_and_determinism() {
        let spec = small();
        let a = gen_traces(&spec, 7).unwrap();
        let b = gen_traces(&spec, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), (6 + 2 * 3 * 3) * 4);
        assert_ne!(a, gen_traces(&spec, 8).unwrap());
        let one = gen_traces(&SynthSpec { n_seeds: 1, ..small() }, 7).unwrap();
        assert_eq!(one.seeds(), vec![1]);
    }

    #[test]
    fn validation() {
        let mut spec = small();
        spec.plants.push(PlantedEffect {
            target_metric: PlantTarget::Norm,
            band: (20, 30),
            ordering: [Condition::T1, Condition::T2, Condition::T3],
            gap: 0.1,
            prompts: None,
            amplitude: None,
        });
        assert!(matches!(gen_traces(&spec, 1), Err(Error::Validation(_))));
        spec.plants[0].band = (2, 4);
        spec.plants[0].ordering = [Condition::T1, Condition::T1, Condition::T3];
        assert!(gen_traces(&spec, 1).is_err());
        let bad = SynthSpec {
            eigen_profile: vec![1.0, 2.0],
            ..small()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn levels_follow_ordering() {
        let p = PlantedEffect {
            target_metric: PlantTarget::MaxSim,
            band: (1, 2),
            ordering: [Condition::T2, Condition::T1, Condition::T3],
            gap: 0.1,
            prompts: Some(2),
            amplitude: None,
        };
        assert_eq!(p.level(Condition::T2), Some(2));
        assert_eq!(p.level(Condition::T3), Some(0));
        assert_eq!(p.applies(Condition::T1, 1), Some(1));
        assert_eq!(p.applies(Condition::T1, 2), None);
    }

    #[test]
    fn spec_round_trips_as_json() {
        let spec = artifact_spec();
        assert_eq!(SynthSpec::from_json(&spec.to_json()).unwrap(), spec);
        let partial = SynthSpec::from_json(r#"{"n_seeds": 3}"#).unwrap();
        assert_eq!(partial.n_seeds, 3);
        assert_eq!(partial.hidden_dim, 768);
    }
}
