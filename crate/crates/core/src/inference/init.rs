//! Starting points for coordinate ascent: probabilistic PCA for the factor
//! model, k-means on the loadings for the assignments, and one pass of the
//! community updates to make the mixture factors consistent with both.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::distributions::{seeded_rng, DirichletParams, GammaParams, MvNormalParams};
use crate::error::{Error, Result};
use crate::kmeans::kmeans;
use crate::model::{Dataset, Hyperparameters, PosteriorState};

use super::updates;

/// Relative size of the initial loading covariance against the data variance.
const INITIAL_SPREAD: f64 = 1e-2;
/// Smallest residual variance relative to the data variance.
const MIN_RESIDUAL: f64 = 1e-12;
/// Singular values below this fraction of the largest count as zero.
const RANK_TOLERANCE: f64 = 1e-10;

/// Maximum-likelihood probabilistic PCA of the (mean-imputed, centered) data.
///
/// The fit is deterministic; [`PpcaSolution::initialize`] applies a random
/// rotation, which leaves the likelihood unchanged, to give each restart a
/// different starting basis.
#[derive(Debug, Clone)]
pub struct PpcaSolution {
    /// `n × p` loadings `V_p (L_p - σ² I)^½`.
    pub loadings: DMatrix<f64>,
    /// Mean-imputed, centered data, `T × n`.
    pub centered: DMatrix<f64>,
    /// Mean of the discarded eigenvalues of the sample covariance.
    pub residual_variance: f64,
    /// Average per-series variance.
    pub data_variance: f64,
}

/// Initial values for the factor-model part of the posterior.
#[derive(Debug, Clone)]
pub struct PpcaInit {
    pub latent: Vec<MvNormalParams>,
    pub loadings: Vec<MvNormalParams>,
    pub noise: Vec<GammaParams>,
    pub residual_variance: f64,
}

impl PpcaSolution {
    pub fn fit(data: &Dataset, p: usize) -> Result<Self> {
        let (t, n) = (data.n_times(), data.n_series());
        if p == 0 {
            return Err(Error::InvalidParameter("p must be at least 1".into()));
        }
        if p > t.min(n) {
            return Err(Error::Rank { p, rank: t.min(n) });
        }
        let mut centered = DMatrix::zeros(t, n);
        for i in 0..n {
            let mean = data.filled().column(i).sum() / data.observed_in_series(i) as f64;
            for r in 0..t {
                if data.is_observed(r, i) {
                    centered[(r, i)] = data.filled()[(r, i)] - mean;
                }
            }
        }
        let total_variance = centered.norm_squared() / t as f64;
        let data_variance = total_variance / n as f64;

        let svd = centered.clone().svd(false, true);
        let v_t = svd.v_t.as_ref().expect("requested right singular vectors");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let top = svd.singular_values[order[0]];
        let rank = order.iter().filter(|&&j| svd.singular_values[j] > RANK_TOLERANCE * top).count();
        if top <= 0.0 || rank < p {
            return Err(Error::Rank { p, rank });
        }
        let eig: Vec<f64> = order.iter().map(|&j| svd.singular_values[j].powi(2) / t as f64).collect();
        let kept: f64 = eig[..p].iter().sum();
        let residual = if n > p { ((total_variance - kept) / (n - p) as f64).max(0.0) } else { 0.0 };
        let residual_variance = residual.max(MIN_RESIDUAL * data_variance);

        let mut loadings = DMatrix::zeros(n, p);
        for (q, &j) in order[..p].iter().enumerate() {
            let s = (eig[q] - residual_variance).max(0.0).sqrt();
            for i in 0..n {
                loadings[(i, q)] = v_t[(j, i)] * s;
            }
        }
        Ok(Self { loadings, centered, residual_variance, data_variance })
    }

    /// Posterior factors for `x`, `A` and `τ` in a randomly rotated basis.
    pub fn initialize<R: Rng + ?Sized>(&self, data: &Dataset, hyper: &Hyperparameters, rng: &mut R) -> Result<PpcaInit> {
        let p = self.loadings.ncols();
        let rotation = random_rotation(p, rng);
        let a = &self.loadings * rotation;
        let sigma2 = self.residual_variance;

        // PPCA posterior of the latent factors: N(M⁻¹Aᵀy, σ² M⁻¹), M = AᵀA + σ²I
        let mut m = a.tr_mul(&a);
        for q in 0..p {
            m[(q, q)] += sigma2;
        }
        let m_chol = crate::linalg::cholesky(&m, "PPCA latent system")?;
        let projected = &self.centered * &a;
        let latent_precision = &m / sigma2;
        let latent = (0..data.n_times())
            .map(|t| {
                let mean = m_chol.solve(&projected.row(t).transpose());
                MvNormalParams::new(mean, latent_precision.clone())
            })
            .collect::<Result<Vec<_>>>()?;

        let loading_precision = DMatrix::identity(p, p) / (INITIAL_SPREAD * self.data_variance.max(f64::MIN_POSITIVE));
        let loadings = (0..data.n_series())
            .map(|i| MvNormalParams::new(a.row(i).transpose(), loading_precision.clone()))
            .collect::<Result<Vec<_>>>()?;

        let noise = (0..data.n_series())
            .map(|i| {
                let shape = hyper.noise_alpha + 0.5 * data.observed_in_series(i) as f64;
                GammaParams::new(shape, shape * sigma2)
            })
            .collect::<Result<Vec<_>>>()?;

        Ok(PpcaInit { latent, loadings, noise, residual_variance: sigma2 })
    }
}

/// Haar-distributed orthogonal matrix from the QR decomposition of a
/// Gaussian matrix with the sign convention fixed.
pub fn random_rotation<R: Rng + ?Sized>(p: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(p, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for c in 0..p {
        if r[(c, c)] < 0.0 {
            q.column_mut(c).neg_mut();
        }
    }
    q
}

/// PPCA initialization for `x`, `A` and `τ`.
pub fn ppca_init(data: &Dataset, hyper: &Hyperparameters, seed: u64) -> Result<PpcaInit> {
    PpcaSolution::fit(data, hyper.p)?.initialize(data, hyper, &mut seeded_rng(seed, 0))
}

/// Hard assignments from the best of `runs` k-means runs on the loading means.
pub fn kmeans_init<R: Rng + ?Sized>(loadings: &[MvNormalParams], k_max: usize, runs: usize, rng: &mut R) -> Result<Vec<usize>> {
    let n = loadings.len();
    if k_max > n {
        return Err(Error::InvalidParameter(format!("k_max = {k_max} exceeds the number of series {n}")));
    }
    let p = loadings.first().map(|l| l.dim()).unwrap_or(0);
    let points = DMatrix::from_fn(n, p, |i, q| loadings[i].mean()[q]);
    Ok(kmeans(&points, k_max, runs, rng)?.labels)
}

/// Assemble a full posterior from the PPCA factors and hard labels, then
/// bring the community factors in line with them by running the μ, Λ, ρ
/// and λ updates once.
pub fn assemble_state(init: PpcaInit, labels: &[usize], hyper: &Hyperparameters) -> Result<PosteriorState> {
    let p = hyper.p;
    let k = hyper.k_max;
    let n = init.loadings.len();
    let mut responsibilities = DMatrix::zeros(n, k);
    for (i, &l) in labels.iter().enumerate() {
        if l >= k {
            return Err(Error::InvalidParameter(format!("label {l} out of range for k_max = {k}")));
        }
        responsibilities[(i, l)] = 1.0;
    }
    let ard_prior = hyper.ard_prior()?;
    let mut state = PosteriorState {
        latent: init.latent,
        noise: init.noise,
        loadings: init.loadings,
        centers: vec![MvNormalParams::new(DVector::zeros(p), DMatrix::identity(p, p))?; k],
        precisions: vec![hyper.wishart_prior()?; k],
        responsibilities,
        sizes: DirichletParams::symmetric(k, hyper.dirichlet_gamma)?,
        ard: vec![vec![ard_prior; p]; k],
    };
    updates::update_community_means(&mut state, hyper)?;
    updates::update_community_precisions(&mut state, hyper)?;
    updates::update_community_sizes(&mut state, hyper)?;
    updates::update_ard(&mut state, hyper)?;
    Ok(state)
}
