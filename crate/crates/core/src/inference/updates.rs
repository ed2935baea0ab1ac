//! Closed-form coordinate updates, one per posterior factor.
//!
//! Every update replaces its factor by the optimum of the evidence lower
//! bound with all other factors held fixed, so any sequence of updates is
//! monotone in the bound. Sums over observations skip masked cells.

use nalgebra::{DMatrix, DVector};

use crate::distributions::{softmax, DirichletParams, GammaParams, MvNormalParams, WishartParams};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{Dataset, Hyperparameters, PosteriorState};

/// Asymmetry (relative) above which a Wishart scale signals a bug upstream.
const ASYMMETRY_LIMIT: f64 = 1e-10;

pub(crate) fn latent_means(state: &PosteriorState) -> DMatrix<f64> {
    let p = state.p();
    DMatrix::from_fn(state.n_times(), p, |t, q| state.latent[t].mean()[q])
}

/// `Σ_{t observed} y_ti E[x_t]` for every series, as an `n × p` matrix.
pub(crate) fn data_latent_cross(state: &PosteriorState, data: &Dataset) -> DMatrix<f64> {
    data.filled().tr_mul(&latent_means(state))
}

/// `Σ_{t observed in i} E[x_t x_tᵀ]` for every series.
pub(crate) fn latent_second_sums(state: &PosteriorState, data: &Dataset) -> Vec<DMatrix<f64>> {
    let p = state.p();
    let second: Vec<DMatrix<f64>> = state.latent.iter().map(|q| q.second_moment()).collect();
    let mut full = DMatrix::zeros(p, p);
    for s in &second {
        full += s;
    }
    (0..data.n_series())
        .map(|i| {
            let missing = data.missing_in_series(i);
            if missing.is_empty() {
                return full.clone();
            }
            let mut acc = DMatrix::zeros(p, p);
            for (t, s) in second.iter().enumerate() {
                if data.is_observed(t, i) {
                    acc += s;
                }
            }
            acc
        })
        .collect()
}

fn check_shapes(state: &PosteriorState, data: &Dataset) -> Result<()> {
    if state.n_times() != data.n_times() || state.n_series() != data.n_series() {
        return Err(Error::Dimension(format!(
            "state is {}x{} but data is {}x{}",
            state.n_times(),
            state.n_series(),
            data.n_times(),
            data.n_series()
        )));
    }
    Ok(())
}

/// q(x_t): precision `I + Σ_i E[τ_i] E[A_i A_iᵀ]`, linear term
/// `Σ_i E[τ_i] E[A_i] y_ti`, both over observed `i` at time `t`.
pub fn update_latent_factors(state: &mut PosteriorState, data: &Dataset, _hyper: &Hyperparameters) -> Result<()> {
    check_shapes(state, data)?;
    let n = data.n_series();
    let p = state.p();
    let tau: Vec<f64> = state.noise.iter().map(|g| g.mean()).collect();
    let weighted: Vec<DMatrix<f64>> =
        state.loadings.iter().zip(&tau).map(|(q, &t)| q.second_moment() * t).collect();
    let mut full = DMatrix::identity(p, p);
    for w in &weighted {
        full += w;
    }
    let scaled_means = DMatrix::from_fn(n, p, |i, q| tau[i] * state.loadings[i].mean()[q]);
    let linear = data.filled() * scaled_means;
    for t in 0..data.n_times() {
        let precision = if data.missing_at_time(t).is_empty() {
            full.clone()
        } else {
            let mut acc = DMatrix::identity(p, p);
            for (i, w) in weighted.iter().enumerate() {
                if data.is_observed(t, i) {
                    acc += w;
                }
            }
            acc
        };
        let h = linear.row(t).transpose();
        state.latent[t] = MvNormalParams::from_natural(precision, &h, "latent factor precision")?;
    }
    Ok(())
}

/// Expected squared residual `Σ_{t observed} E[(y_ti - A_iᵀ x_t)²]` per series.
pub(crate) fn expected_residuals(state: &PosteriorState, data: &Dataset) -> Result<Vec<f64>> {
    let cross = data_latent_cross(state, data);
    let sums = latent_second_sums(state, data);
    (0..data.n_series())
        .map(|i| {
            let q = &state.loadings[i];
            let m = q.mean();
            let linear: f64 = (0..m.len()).map(|k| m[k] * cross[(i, k)]).sum();
            let quad = linalg::trace_product(&q.second_moment(), &sums[i]);
            let r = data.sum_sq_in_series(i) - 2.0 * linear + quad;
            let scale = data.sum_sq_in_series(i) + quad.abs();
            if r < -1e-9 * scale.max(1.0) {
                return Err(Error::NonFinite(format!("negative expected residual {r} for series {i}")));
            }
            Ok(r.max(0.0))
        })
        .collect()
}

/// q(τ_i) = Gamma(α + T_i/2, β + ½ Σ_t E[(y_ti - A_iᵀx_t)²]).
pub fn update_noise_precision(state: &mut PosteriorState, data: &Dataset, hyper: &Hyperparameters) -> Result<()> {
    check_shapes(state, data)?;
    let residuals = expected_residuals(state, data)?;
    for (i, r) in residuals.into_iter().enumerate() {
        let shape = hyper.noise_alpha + 0.5 * data.observed_in_series(i) as f64;
        let rate = hyper.noise_beta + 0.5 * r;
        state.noise[i] = GammaParams::new(shape, rate)?;
    }
    Ok(())
}

/// q(A_i): precision `E[τ_i] Σ_t E[x_t x_tᵀ] + Σ_k E[z_ik] E[Λ_k]`, linear term
/// `E[τ_i] Σ_t E[x_t] y_ti + Σ_k E[z_ik] E[Λ_k] E[μ_k]`.
pub fn update_factor_loadings(state: &mut PosteriorState, data: &Dataset, _hyper: &Hyperparameters) -> Result<()> {
    check_shapes(state, data)?;
    let k_max = state.k_max();
    let cross = data_latent_cross(state, data);
    let sums = latent_second_sums(state, data);
    let prec_means: Vec<DMatrix<f64>> = state.precisions.iter().map(|w| w.mean()).collect();
    let prec_centers: Vec<DVector<f64>> =
        prec_means.iter().zip(&state.centers).map(|(l, mu)| l * mu.mean()).collect();
    for i in 0..data.n_series() {
        let tau = state.noise[i].mean();
        let mut precision = &sums[i] * tau;
        let mut linear = cross.row(i).transpose() * tau;
        for k in 0..k_max {
            let r = state.responsibilities[(i, k)];
            if r == 0.0 {
                continue;
            }
            precision += &prec_means[k] * r;
            linear.axpy(r, &prec_centers[k], 1.0);
        }
        state.loadings[i] = MvNormalParams::from_natural(precision, &linear, "factor loading precision")?;
    }
    Ok(())
}

/// q(μ_k): precision `diag(E[λ_k]) + N_k E[Λ_k]`, linear term
/// `E[Λ_k] Σ_i E[z_ik] E[A_i]`.
pub fn update_community_means(state: &mut PosteriorState, _hyper: &Hyperparameters) -> Result<()> {
    let p = state.p();
    let n = state.n_series();
    for k in 0..state.k_max() {
        let lambda = state.precisions[k].mean();
        let mut weight = 0.0;
        let mut acc = DVector::zeros(p);
        for i in 0..n {
            let r = state.responsibilities[(i, k)];
            weight += r;
            acc.axpy(r, state.loadings[i].mean(), 1.0);
        }
        let mut precision = &lambda * weight;
        for q in 0..p {
            precision[(q, q)] += state.ard[k][q].mean();
        }
        let linear = &lambda * acc;
        state.centers[k] = MvNormalParams::from_natural(precision, &linear, "community mean precision")?;
    }
    Ok(())
}

/// q(Λ_k) = Wishart(ν + N_k, W + Σ_i E[z_ik] E[(A_i - μ_k)(A_i - μ_k)ᵀ]).
pub fn update_community_precisions(state: &mut PosteriorState, hyper: &Hyperparameters) -> Result<()> {
    let p = state.p();
    let n = state.n_series();
    let prior_scale = hyper.wishart_scale();
    let loading_second: Vec<DMatrix<f64>> = state.loadings.iter().map(|q| q.second_moment()).collect();
    for k in 0..state.k_max() {
        let center = &state.centers[k];
        let mut weight = 0.0;
        let mut weighted_sum = DVector::zeros(p);
        let mut scatter = DMatrix::zeros(p, p);
        for i in 0..n {
            let r = state.responsibilities[(i, k)];
            if r == 0.0 {
                continue;
            }
            weight += r;
            weighted_sum.axpy(r, state.loadings[i].mean(), 1.0);
            scatter += &loading_second[i] * r;
        }
        let mut scale = prior_scale.clone() + scatter;
        scale.ger(-1.0, &weighted_sum, center.mean(), 1.0);
        scale.ger(-1.0, center.mean(), &weighted_sum, 1.0);
        scale += center.second_moment() * weight;
        let asym = linalg::relative_asymmetry(&scale);
        if asym > ASYMMETRY_LIMIT {
            return Err(Error::NotPositiveDefinite(format!(
                "community {k} precision scale is asymmetric (relative {asym:e})"
            )));
        }
        linalg::symmetrize(&mut scale);
        state.precisions[k] = WishartParams::new(hyper.wishart_nu() + weight, scale)?;
    }
    Ok(())
}

/// Unnormalized log-responsibilities for a single series.
pub(crate) fn assignment_logits(
    loading: &MvNormalParams,
    loading_second: &DMatrix<f64>,
    community: &CommunityMoments,
    log_sizes: &[f64],
) -> Vec<f64> {
    (0..community.precision_mean.len())
        .map(|k| {
            let lam = &community.precision_mean[k];
            let quad = linalg::trace_product(lam, loading_second)
                - 2.0 * linalg::bilinear(&community.center_mean[k], lam, loading.mean())
                + community.center_quad[k];
            0.5 * community.log_det[k] - 0.5 * quad + log_sizes[k]
        })
        .collect()
}

/// Per-community moments reused across series.
pub(crate) struct CommunityMoments {
    pub precision_mean: Vec<DMatrix<f64>>,
    pub log_det: Vec<f64>,
    pub center_mean: Vec<DVector<f64>>,
    /// `tr(E[Λ_k] E[μ_k μ_kᵀ])`
    pub center_quad: Vec<f64>,
}

impl CommunityMoments {
    pub fn new(state: &PosteriorState) -> Self {
        let precision_mean: Vec<DMatrix<f64>> = state.precisions.iter().map(|w| w.mean()).collect();
        let log_det = state.precisions.iter().map(|w| w.expected_log_det()).collect();
        let center_mean = state.centers.iter().map(|c| c.mean().clone()).collect();
        let center_quad = state
            .centers
            .iter()
            .zip(&precision_mean)
            .map(|(c, l)| linalg::trace_product(l, &c.second_moment()))
            .collect();
        Self { precision_mean, log_det, center_mean, center_quad }
    }
}

/// q(z_i): softmax over k of `½E[log det Λ_k] - ½E[(A_i-μ_k)ᵀΛ_k(A_i-μ_k)] + E[log ρ_k]`.
pub fn update_assignments(state: &mut PosteriorState, _hyper: &Hyperparameters) -> Result<()> {
    let moments = CommunityMoments::new(state);
    let log_sizes = state.sizes.expected_log();
    for i in 0..state.n_series() {
        let second = state.loadings[i].second_moment();
        let logits = assignment_logits(&state.loadings[i], &second, &moments, &log_sizes);
        if logits.iter().any(|l| l.is_nan()) {
            return Err(Error::NonFinite(format!("assignment logits for series {i}")));
        }
        for (k, r) in softmax(&logits).into_iter().enumerate() {
            state.responsibilities[(i, k)] = r;
        }
    }
    Ok(())
}

/// q(ρ) = Dirichlet(γ + N_k).
pub fn update_community_sizes(state: &mut PosteriorState, hyper: &Hyperparameters) -> Result<()> {
    let conc = state.community_weights().into_iter().map(|w| hyper.dirichlet_gamma + w).collect();
    state.sizes = DirichletParams::new(conc)?;
    Ok(())
}

/// q(λ_kq) = Gamma(a + ½, b + ½ E[μ_kq²]).
pub fn update_ard(state: &mut PosteriorState, hyper: &Hyperparameters) -> Result<()> {
    for k in 0..state.k_max() {
        let c = &state.centers[k];
        for q in 0..state.p() {
            let second = c.covariance()[(q, q)] + c.mean()[q].powi(2);
            state.ard[k][q] = GammaParams::new(hyper.ard_a + 0.5, hyper.ard_b + 0.5 * second)?;
        }
    }
    Ok(())
}
