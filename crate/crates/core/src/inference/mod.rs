//! Coordinate-ascent variational inference for the latent-factor mixture.
//!
//! A fit runs `n_restarts` independent restarts. Each restart initializes
//! the factor model by probabilistic PCA (in a random rotation), assigns
//! series to communities by k-means on the loadings, and then sweeps the
//! closed-form factor updates until the relative ELBO gain drops below
//! `elbo_rel_tol`. The restart with the highest final ELBO wins.

mod elbo;
mod init;
mod updates;

use std::collections::BTreeSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::distributions::seeded_rng;
use crate::error::{Error, Result};
use crate::model::{validate, Dataset, FitResult, Hyperparameters, PosteriorState};
use crate::par;

pub use elbo::{compute_elbo, elbo_terms, ElboTerms};
pub use init::{assemble_state, kmeans_init, ppca_init, random_rotation, PpcaInit, PpcaSolution};
pub use updates::{
    update_ard, update_assignments, update_community_means, update_community_precisions, update_community_sizes,
    update_factor_loadings, update_latent_factors, update_noise_precision,
};

/// Community precision used in known-K mode, standing in for `E[Λ] → ∞`.
pub const KNOWN_K_PRIOR_PRECISION: f64 = 1e6;

/// One posterior factor, used to spell out the update order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    /// x
    Latent,
    /// τ
    Noise,
    /// A
    Loadings,
    /// μ
    Centers,
    /// Λ
    Precisions,
    /// z
    Assignments,
    /// ρ
    Sizes,
    /// λ
    Ard,
}

impl Factor {
    pub const DEFAULT_ORDER: [Factor; 8] = [
        Factor::Latent,
        Factor::Noise,
        Factor::Loadings,
        Factor::Centers,
        Factor::Precisions,
        Factor::Assignments,
        Factor::Sizes,
        Factor::Ard,
    ];
}

/// Apply the closed-form update of one factor.
pub fn apply_update(factor: Factor, state: &mut PosteriorState, data: &Dataset, hyper: &Hyperparameters) -> Result<()> {
    match factor {
        Factor::Latent => update_latent_factors(state, data, hyper),
        Factor::Noise => update_noise_precision(state, data, hyper),
        Factor::Loadings => update_factor_loadings(state, data, hyper),
        Factor::Centers => update_community_means(state, hyper),
        Factor::Precisions => update_community_precisions(state, hyper),
        Factor::Assignments => update_assignments(state, hyper),
        Factor::Sizes => update_community_sizes(state, hyper),
        Factor::Ard => update_ard(state, hyper),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub max_sweeps: usize,
    pub elbo_rel_tol: f64,
    pub n_restarts: usize,
    pub kmeans_runs: usize,
    pub seed: u64,
    pub update_order: Vec<Factor>,
    pub known_k_mode: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_sweeps: 1000,
            elbo_rel_tol: 1e-6,
            n_restarts: 50,
            kmeans_runs: 10,
            seed: 0,
            update_order: Factor::DEFAULT_ORDER.to_vec(),
            known_k_mode: false,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.elbo_rel_tol.is_finite() && self.elbo_rel_tol > 0.0) {
            return Err(Error::Validation("elbo_rel_tol must be positive".into()));
        }
        if self.n_restarts == 0 || self.kmeans_runs == 0 || self.max_sweeps == 0 {
            return Err(Error::Validation("n_restarts, kmeans_runs and max_sweeps must be at least 1".into()));
        }
        let distinct: BTreeSet<_> = self.update_order.iter().collect();
        if self.update_order.len() != Factor::DEFAULT_ORDER.len() || distinct.len() != Factor::DEFAULT_ORDER.len() {
            return Err(Error::Validation("update_order must list every factor exactly once".into()));
        }
        Ok(())
    }

    /// Hyperparameters actually used for fitting: known-K mode replaces the
    /// prior precision by [`KNOWN_K_PRIOR_PRECISION`].
    pub fn effective_hyper(&self, hyper: &Hyperparameters) -> Hyperparameters {
        let mut h = hyper.clone();
        if self.known_k_mode {
            h.prior_precision = KNOWN_K_PRIOR_PRECISION;
        }
        h
    }
}

/// ELBO values of one coordinate-ascent run.
#[derive(Debug, Clone, PartialEq)]
pub struct CaviTrace {
    /// Bound after initialization, before the first sweep.
    pub initial: f64,
    /// Bound after each full sweep.
    pub elbo: Vec<f64>,
    pub converged: bool,
}

impl CaviTrace {
    /// Largest relative decrease between consecutive values, starting from
    /// the initial bound.
    pub fn max_relative_decrease(&self) -> f64 {
        std::iter::once(&self.initial)
            .chain(&self.elbo)
            .zip(&self.elbo)
            .map(|(prev, next)| (prev - next) / prev.abs())
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Run full sweeps in `config.update_order` until the relative ELBO gain
/// `(L_t - L_{t-1}) / |L_{t-1}|` falls below the tolerance.
pub fn run_cavi(state: &mut PosteriorState, data: &Dataset, hyper: &Hyperparameters, config: &FitConfig) -> Result<CaviTrace> {
    let mut elbo = Vec::new();
    let mut converged = false;
    let initial = compute_elbo(state, data, hyper)?;
    let mut previous = initial;
    for _ in 0..config.max_sweeps {
        for &factor in &config.update_order {
            apply_update(factor, state, data, hyper)?;
        }
        let current = compute_elbo(state, data, hyper)?;
        elbo.push(current);
        let gain = (current - previous) / previous.abs();
        previous = current;
        if gain < config.elbo_rel_tol {
            converged = true;
            break;
        }
    }
    Ok(CaviTrace { initial, elbo, converged })
}

/// `ĝ_i = argmax_k E[z_ik]` (lowest index on ties) and the number of
/// distinct labels.
pub fn extract_labels(state: &PosteriorState) -> (Vec<usize>, usize) {
    let labels: Vec<usize> = state
        .responsibilities
        .row_iter()
        .map(|row| {
            let mut best = 0;
            for k in 1..row.len() {
                if row[k] > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect();
    let k_hat = labels.iter().collect::<BTreeSet<_>>().len();
    (labels, k_hat)
}

struct RestartOutcome {
    state: PosteriorState,
    trace: CaviTrace,
}

fn run_restart(
    data: &Dataset,
    hyper: &Hyperparameters,
    config: &FitConfig,
    solution: &PpcaSolution,
    restart: usize,
) -> Result<RestartOutcome> {
    let mut rng = seeded_rng(config.seed, restart as u64);
    let init = solution.initialize(data, hyper, &mut rng)?;
    let labels = kmeans_init(&init.loadings, hyper.k_max, config.kmeans_runs, &mut rng)?;
    let mut state = assemble_state(init, &labels, hyper)?;
    let trace = run_cavi(&mut state, data, hyper, config)?;
    Ok(RestartOutcome { state, trace })
}

/// Fit the model with multiple restarts and keep the best.
pub fn fit(data: &Dataset, hyper: &Hyperparameters, config: &FitConfig) -> Result<FitResult> {
    let started = Instant::now();
    config.validate()?;
    validate(data, hyper)?;
    let hyper = config.effective_hyper(hyper);
    let solution = PpcaSolution::fit(data, hyper.p)?;
    let outcomes = par::map_range(config.n_restarts, |r| run_restart(data, &hyper, config, &solution, r));

    let mut best: Option<(usize, RestartOutcome)> = None;
    let mut restart_k_hats = Vec::new();
    let mut restart_elbos = Vec::new();
    let mut restart_failures = Vec::new();
    let mut total_sweeps = 0;
    let mut max_relative_decrease = f64::NEG_INFINITY;
    for (r, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(o) => {
                let score = *o.trace.elbo.last().unwrap_or(&f64::NEG_INFINITY);
                restart_k_hats.push(extract_labels(&o.state).1);
                restart_elbos.push(score);
                total_sweeps += o.trace.elbo.len();
                max_relative_decrease = max_relative_decrease.max(o.trace.max_relative_decrease());
                let better = match &best {
                    None => true,
                    Some((_, b)) => score > *b.trace.elbo.last().unwrap_or(&f64::NEG_INFINITY),
                };
                if better {
                    best = Some((r, o));
                }
            }
            Err(e) => restart_failures.push((r, e.to_string())),
        }
    }
    let Some((restart_index, best)) = best else {
        let first = restart_failures.first().map(|(_, e)| e.clone()).unwrap_or_default();
        return Err(Error::AllRestartsFailed(config.n_restarts, first));
    };
    let (labels, k_hat) = extract_labels(&best.state);
    Ok(FitResult {
        state: best.state,
        elbo_trace: best.trace.elbo,
        converged: best.trace.converged,
        labels,
        k_hat,
        restart_index,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        restart_k_hats,
        restart_elbos,
        restart_failures,
        total_sweeps,
        max_relative_decrease,
    })
}
