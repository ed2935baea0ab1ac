//! Seeded generators for synthetic community-detection instances.
//!
//! Loadings are drawn around community centers, latent factors are standard
//! normal, and observations follow the linear-Gaussian factor model. Every
//! draw comes from one ChaCha stream derived from `seed`, so an instance is a
//! pure function of its configuration.

use nalgebra::DMatrix;
use rand::seq::index;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::distributions::{seeded_rng, CategoricalParams, GammaParams, MvNormalParams, Sampler, WishartParams};
use crate::error::{Error, Result};
use crate::model::Dataset;

/// Maximum number of redraws when a random mask would empty a series.
const MASK_ATTEMPTS: usize = 100;

/// Placement of the community centers in loading space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CommunityLayout {
    /// `μ_k ~ N(0, mean_variance · I)`.
    GaussianMeans,
    /// Nine centers in three triads (requires `p = 2`, `k = 9`).
    Sierpinski { scale: f64 },
    /// Fixed centers, one row per community.
    Explicit { means: Vec<Vec<f64>> },
}

/// Distribution of the within-community precision `Λ_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum WithinPrecision {
    /// `Λ_k ~ Wishart(ν, I)` in the mean-`νI` convention.
    Wishart { nu: f64 },
    /// `Λ_k = precision · I` for every community.
    Isotropic { precision: f64 },
}

impl WithinPrecision {
    /// Scalar `c` with `E[Λ] = c I`.
    pub fn expected_scalar(&self) -> f64 {
        match *self {
            WithinPrecision::Wishart { nu } => nu,
            WithinPrecision::Isotropic { precision } => precision,
        }
    }
}

/// How community labels are assigned to series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SizeDistribution {
    /// `g_i ~ Categorical(1/K, ..., 1/K)`.
    Uniform,
    /// `g_i ~ Categorical(weights)`.
    Weights { weights: Vec<f64> },
    /// Sizes as equal as possible, order shuffled.
    Balanced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n: usize,
    pub t: usize,
    pub p: usize,
    pub k: usize,
    pub layout: CommunityLayout,
    /// Variance of each center coordinate under [`CommunityLayout::GaussianMeans`].
    pub mean_variance: f64,
    pub within_precision: WithinPrecision,
    /// Shape and rate of the noise precision.
    pub noise_gamma: (f64, f64),
    pub sizes: SizeDistribution,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    /// The five-community, two-factor benchmark.
    fn default() -> Self {
        Self {
            n: 50,
            t: 100,
            p: 2,
            k: 5,
            layout: CommunityLayout::GaussianMeans,
            mean_variance: 1.0,
            within_precision: WithinPrecision::Wishart { nu: 50.0 },
            noise_gamma: (100.0, 10.0),
            sizes: SizeDistribution::Uniform,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    /// Separation-controlled instance: `Λ = 10 I₂`, `var[μ] = h² / 10`.
    pub fn with_separation(n: usize, t: usize, k: usize, h: f64, seed: u64) -> Self {
        let precision = 10.0;
        Self {
            n,
            t,
            k,
            mean_variance: h * h / precision,
            within_precision: WithinPrecision::Isotropic { precision },
            seed,
            ..Self::default()
        }
    }

    /// Nine communities in three triads, equal sizes.
    pub fn sierpinski(n: usize, t: usize, scale: f64, within_precision: f64, seed: u64) -> Self {
        Self {
            n,
            t,
            p: 2,
            k: 9,
            layout: CommunityLayout::Sierpinski { scale },
            within_precision: WithinPrecision::Isotropic { precision: within_precision },
            sizes: SizeDistribution::Balanced,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.n < self.k {
            return Err(Error::InvalidParameter(format!("need n >= k >= 1, got n = {}, k = {}", self.n, self.k)));
        }
        if self.t == 0 || self.p == 0 {
            return Err(Error::InvalidParameter("t and p must be at least 1".into()));
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.noise_gamma.0) || !positive(self.noise_gamma.1) {
            return Err(Error::InvalidParameter("noise shape and rate must be positive".into()));
        }
        match self.within_precision {
            WithinPrecision::Wishart { nu } if !(nu.is_finite() && nu > self.p as f64 - 1.0) => {
                return Err(Error::InvalidParameter(format!("Wishart shape {nu} must exceed p - 1")));
            }
            WithinPrecision::Isotropic { precision } if !positive(precision) => {
                return Err(Error::InvalidParameter("within precision must be positive".into()));
            }
            _ => {}
        }
        match &self.layout {
            CommunityLayout::GaussianMeans if !positive(self.mean_variance) => {
                return Err(Error::InvalidParameter("mean_variance must be positive".into()));
            }
            CommunityLayout::Sierpinski { scale } => {
                if self.p != 2 || self.k != 9 {
                    return Err(Error::InvalidParameter("the triad layout needs p = 2 and k = 9".into()));
                }
                if !positive(*scale) {
                    return Err(Error::InvalidParameter("layout scale must be positive".into()));
                }
            }
            CommunityLayout::Explicit { means } => {
                if means.len() != self.k || means.iter().any(|m| m.len() != self.p) {
                    return Err(Error::InvalidParameter(format!("explicit layout needs {} means of length {}", self.k, self.p)));
                }
                if means.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidParameter("explicit means must be finite".into()));
                }
            }
            _ => {}
        }
        if let SizeDistribution::Weights { weights } = &self.sizes {
            if weights.len() != self.k {
                return Err(Error::InvalidParameter(format!("{} size weights for k = {}", weights.len(), self.k)));
            }
        }
        Ok(())
    }
}

/// Parameters the data were generated from. Labels are zero-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub labels: Vec<usize>,
    /// `n × p`
    pub loadings: DMatrix<f64>,
    /// `K × p`
    pub centers: DMatrix<f64>,
    pub precisions: Vec<DMatrix<f64>>,
    /// `T × p`
    pub latent: DMatrix<f64>,
    pub noise: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SyntheticInstance {
    pub dataset: Dataset,
    pub truth: GroundTruth,
}

fn standard_normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Draw an instance.
pub fn generate(config: &GeneratorConfig) -> Result<SyntheticInstance> {
    config.validate()?;
    let GeneratorConfig { n, t, p, k, .. } = *config;
    let mut rng = seeded_rng(config.seed, 0);

    let centers = match &config.layout {
        CommunityLayout::GaussianMeans => standard_normal_matrix(k, p, &mut rng) * config.mean_variance.sqrt(),
        CommunityLayout::Sierpinski { scale } => {
            let pts = sierpinski_layout(2, *scale)?;
            DMatrix::from_fn(k, p, |r, c| pts[r][c])
        }
        CommunityLayout::Explicit { means } => DMatrix::from_fn(k, p, |r, c| means[r][c]),
    };

    let precisions: Vec<DMatrix<f64>> = match config.within_precision {
        WithinPrecision::Wishart { nu } => {
            let w = WishartParams::new(nu, DMatrix::identity(p, p))?;
            (0..k).map(|_| w.draw(&mut rng)).collect()
        }
        WithinPrecision::Isotropic { precision } => vec![DMatrix::identity(p, p) * precision; k],
    };

    let labels: Vec<usize> = match &config.sizes {
        SizeDistribution::Uniform => {
            let cat = CategoricalParams::uniform(k);
            (0..n).map(|_| cat.draw(&mut rng)).collect()
        }
        SizeDistribution::Weights { weights } => {
            let total: f64 = weights.iter().sum();
            let cat = CategoricalParams::new(weights.iter().map(|w| w / total).collect())?;
            (0..n).map(|_| cat.draw(&mut rng)).collect()
        }
        SizeDistribution::Balanced => {
            let mut labels: Vec<usize> = (0..n).map(|i| i % k).collect();
            labels.shuffle(&mut rng);
            labels
        }
    };

    let mut loadings = DMatrix::zeros(n, p);
    for (i, &g) in labels.iter().enumerate() {
        let q = MvNormalParams::new(centers.row(g).transpose(), precisions[g].clone())?;
        loadings.row_mut(i).copy_from(&q.draw(&mut rng).transpose());
    }

    let latent = standard_normal_matrix(t, p, &mut rng);
    let noise_dist = GammaParams::new(config.noise_gamma.0, config.noise_gamma.1)?;
    let noise: Vec<f64> = (0..n).map(|_| noise_dist.draw(&mut rng)).collect();

    let mut values = &latent * loadings.transpose();
    for (i, tau) in noise.iter().enumerate() {
        let sd = tau.sqrt().recip();
        for r in 0..t {
            values[(r, i)] += sd * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let dataset = Dataset::from_matrix(values)?;
    Ok(SyntheticInstance { dataset, truth: GroundTruth { labels, loadings, centers, precisions, latent, noise } })
}

/// Separation `h = sqrt(E[Λ] · var[μ])` of an isotropic configuration.
pub fn separation(config: &GeneratorConfig) -> Result<f64> {
    match config.layout {
        CommunityLayout::GaussianMeans => Ok((config.within_precision.expected_scalar() * config.mean_variance).sqrt()),
        _ => Err(Error::InvalidParameter(
            "separation is defined for Gaussian center layouts only; report per-axis center spread instead".into(),
        )),
    }
}

/// Two-level triad layout: three triads of three points.
///
/// Triad centroids form an equilateral triangle of side `scale`; each triad
/// is an equilateral triangle of side `scale / 3` with the same orientation.
/// Everything is centered at the origin.
pub fn sierpinski_layout(levels: usize, scale: f64) -> Result<Vec<[f64; 2]>> {
    if levels != 2 {
        return Err(Error::InvalidParameter(format!("only two levels are supported, got {levels}")));
    }
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::InvalidParameter("layout scale must be positive".into()));
    }
    // unit vectors to the vertices of an upward triangle
    let vertex = |j: usize| {
        let angle = std::f64::consts::FRAC_PI_2 + j as f64 * 2.0 * std::f64::consts::FRAC_PI_3;
        [angle.cos(), angle.sin()]
    };
    let outer = scale / 3f64.sqrt();
    let inner = outer / 3.0;
    let mut points = Vec::with_capacity(9);
    for a in 0..3 {
        let c = vertex(a);
        for b in 0..3 {
            let v = vertex(b);
            points.push([outer * c[0] + inner * v[0], outer * c[1] + inner * v[1]]);
        }
    }
    Ok(points)
}

/// Triad index of each of the nine layout communities.
pub fn triad_of(label: usize) -> usize {
    label / 3
}

/// Mask `⌊fraction · T · n⌋` currently observed cells uniformly at random,
/// redrawing when a series would lose every observation.
pub fn mask_random(dataset: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidParameter(format!("mask fraction {fraction} outside [0, 1)")));
    }
    let (t, n) = (dataset.n_times(), dataset.n_series());
    let count = (fraction * (t * n) as f64).floor() as usize;
    if count == 0 {
        return Ok(dataset.clone());
    }
    let observed: Vec<(usize, usize)> =
        (0..n).flat_map(|i| (0..t).map(move |r| (r, i))).filter(|&(r, i)| dataset.is_observed(r, i)).collect();
    if count > observed.len() {
        return Err(Error::InvalidParameter(format!("cannot mask {count} of {} observed cells", observed.len())));
    }
    let mut rng = seeded_rng(seed, 0);
    for _ in 0..MASK_ATTEMPTS {
        let mut mask = dataset.mask().clone();
        let mut remaining: Vec<usize> = (0..n).map(|i| dataset.observed_in_series(i)).collect();
        for j in index::sample(&mut rng, observed.len(), count) {
            let (r, i) = observed[j];
            mask[(r, i)] = false;
            remaining[i] -= 1;
        }
        if remaining.iter().all(|&c| c > 0) {
            return dataset.with_mask(mask);
        }
    }
    Err(Error::Validation(format!("masking {count} cells empties a series in {MASK_ATTEMPTS} attempts")))
}
