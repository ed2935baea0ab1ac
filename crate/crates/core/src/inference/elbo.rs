//! Evidence lower bound, with every additive constant kept so values can be
//! compared across `p`, `K` and the prior precision.

use crate::distributions::categorical_entropy;
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{Dataset, Hyperparameters, PosteriorState};

use super::updates::{expected_residuals, CommunityMoments};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// The bound split into its expected log-joint pieces and the entropy.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ElboTerms {
    pub likelihood: f64,
    pub latent_prior: f64,
    pub noise_prior: f64,
    pub loadings_prior: f64,
    pub centers_prior: f64,
    pub precisions_prior: f64,
    pub ard_prior: f64,
    pub assignments_prior: f64,
    pub sizes_prior: f64,
    pub entropy: f64,
}

impl ElboTerms {
    pub fn total(&self) -> f64 {
        self.likelihood
            + self.latent_prior
            + self.noise_prior
            + self.loadings_prior
            + self.centers_prior
            + self.precisions_prior
            + self.ard_prior
            + self.assignments_prior
            + self.sizes_prior
            + self.entropy
    }
}

pub fn elbo_terms(state: &PosteriorState, data: &Dataset, hyper: &Hyperparameters) -> Result<ElboTerms> {
    let p = state.p() as f64;
    let mut terms = ElboTerms::default();

    // E[log p(y | x, τ, A)]
    let residuals = expected_residuals(state, data)?;
    for (i, r) in residuals.iter().enumerate() {
        let q = &state.noise[i];
        let count = data.observed_in_series(i) as f64;
        terms.likelihood += 0.5 * count * (q.expected_log() - LN_2PI) - 0.5 * q.mean() * r;
    }

    // E[log p(x)]
    for q in &state.latent {
        let second_trace = q.covariance().trace() + q.mean().norm_squared();
        terms.latent_prior += -0.5 * p * LN_2PI - 0.5 * second_trace;
    }

    // E[log p(τ)]
    let noise_prior = hyper.noise_prior()?;
    for q in &state.noise {
        terms.noise_prior += noise_prior.expected_ln_pdf(q.mean(), q.expected_log());
    }

    // E[log p(A | μ, Λ, z)]
    let community = CommunityMoments::new(state);
    for (i, q) in state.loadings.iter().enumerate() {
        let second = q.second_moment();
        for k in 0..state.k_max() {
            let r = state.responsibilities[(i, k)];
            if r == 0.0 {
                continue;
            }
            let lam = &community.precision_mean[k];
            let quad = linalg::trace_product(lam, &second)
                - 2.0 * linalg::bilinear(&community.center_mean[k], lam, q.mean())
                + community.center_quad[k];
            terms.loadings_prior += r * (0.5 * community.log_det[k] - 0.5 * p * LN_2PI - 0.5 * quad);
        }
    }

    // E[log p(μ | λ)] and E[log p(λ)]
    let ard_prior = hyper.ard_prior()?;
    for (center, ard) in state.centers.iter().zip(&state.ard) {
        for (q, lam) in ard.iter().enumerate() {
            let second = center.covariance()[(q, q)] + center.mean()[q].powi(2);
            terms.centers_prior += 0.5 * (lam.expected_log() - LN_2PI) - 0.5 * lam.mean() * second;
            terms.ard_prior += ard_prior.expected_ln_pdf(lam.mean(), lam.expected_log());
        }
    }

    // E[log p(Λ)]
    let wishart_prior = hyper.wishart_prior()?;
    for (mean, log_det) in community.precision_mean.iter().zip(&community.log_det) {
        terms.precisions_prior += wishart_prior.expected_ln_pdf(mean, *log_det);
    }

    // E[log p(z | ρ)] and E[log p(ρ)]
    let log_sizes = state.sizes.expected_log();
    for row in state.responsibilities.row_iter() {
        terms.assignments_prior += row.iter().zip(&log_sizes).map(|(r, l)| if *r == 0.0 { 0.0 } else { r * l }).sum::<f64>();
    }
    terms.sizes_prior = hyper.sizes_prior()?.expected_ln_pdf(&log_sizes);

    // entropies
    let mut entropy = 0.0;
    entropy += state.latent.iter().map(|q| q.entropy()).sum::<f64>();
    entropy += state.noise.iter().map(|q| q.entropy()).sum::<f64>();
    entropy += state.loadings.iter().map(|q| q.entropy()).sum::<f64>();
    entropy += state.centers.iter().map(|q| q.entropy()).sum::<f64>();
    entropy += state.precisions.iter().map(|q| q.entropy()).sum::<f64>();
    entropy += state.ard.iter().flatten().map(|q| q.entropy()).sum::<f64>();
    entropy += state.responsibilities.row_iter().map(|row| categorical_entropy(row.clone_owned().as_slice())).sum::<f64>();
    entropy += state.sizes.entropy();
    terms.entropy = entropy;

    let total = terms.total();
    if !total.is_finite() {
        return Err(Error::NonFinite(format!("ELBO evaluated to {total} ({terms:?})")));
    }
    Ok(terms)
}

/// Evidence lower bound `E_q[log p(y, Θ)] - E_q[log q(Θ)]`.
pub fn compute_elbo(state: &PosteriorState, data: &Dataset, hyper: &Hyperparameters) -> Result<f64> {
    Ok(elbo_terms(state, data, hyper)?.total())
}
