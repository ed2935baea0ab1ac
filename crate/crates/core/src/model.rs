//! Data, hyperparameters and the variational posterior.
//!
//! Symbol map for the generative model
//!
//! ```text
//! y_ti ~ Normal(Σ_q x_tq A_iq, 1/τ_i)        A_i ~ Σ_k z_ik Normal(μ_k, Λ_k⁻¹)
//! x_t  ~ Normal(0, I_p)                      μ_kq ~ Normal(0, 1/λ_kq)
//! τ_i  ~ Gamma(α, β)                         λ_kq ~ Gamma(a, b)
//! Λ_k  ~ Wishart(ν, W), W = p w I_p, ν = p   g_i ~ Categorical(ρ), ρ ~ Dirichlet(γ 1_K)
//! ```
//!
//! | symbol        | lives in                                         |
//! |---------------|--------------------------------------------------|
//! | y, n, T       | [`Dataset`] (`values`, `n_series`, `n_times`)    |
//! | p, K          | [`Hyperparameters::p`], [`Hyperparameters::k_max`] |
//! | w             | [`Hyperparameters::prior_precision`] (= w⁻¹)     |
//! | a, b          | [`Hyperparameters::ard_a`], [`Hyperparameters::ard_b`] |
//! | α, β          | [`Hyperparameters::noise_alpha`], [`Hyperparameters::noise_beta`] |
//! | γ             | [`Hyperparameters::dirichlet_gamma`]             |
//! | ν, W          | [`Hyperparameters::wishart_nu`], [`Hyperparameters::wishart_scale`] |
//! | x             | [`PosteriorState::latent`]                       |
//! | τ             | [`PosteriorState::noise`]                        |
//! | A             | [`PosteriorState::loadings`]                     |
//! | μ             | [`PosteriorState::centers`]                      |
//! | Λ             | [`PosteriorState::precisions`]                   |
//! | z, g          | [`PosteriorState::responsibilities`], [`FitResult::labels`] |
//! | ρ             | [`PosteriorState::sizes`]                        |
//! | λ             | [`PosteriorState::ard`]                          |

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::distributions::{DirichletParams, GammaParams, MvNormalParams, WishartParams};
use crate::error::{Error, Result};

/// Observed signals: a `T × n` matrix (rows are time steps or attributes,
/// columns are series) with an observation mask.
#[derive(Debug, Clone)]
pub struct Dataset {
    values: DMatrix<f64>,
    mask: DMatrix<bool>,
    series_ids: Vec<String>,
    timestamps: Option<Vec<String>>,
    // derived
    filled: DMatrix<f64>,
    missing_by_time: Vec<Vec<usize>>,
    missing_by_series: Vec<Vec<usize>>,
    observed_per_series: Vec<usize>,
    sum_sq_per_series: Vec<f64>,
}

impl Dataset {
    /// Build a dataset. Values under a `false` mask bit are never read and may
    /// hold anything, including NaN.
    pub fn new(
        values: DMatrix<f64>,
        mask: DMatrix<bool>,
        series_ids: Vec<String>,
        timestamps: Option<Vec<String>>,
    ) -> Result<Self> {
        let (t, n) = values.shape();
        if t == 0 || n == 0 {
            return Err(Error::Validation("dataset must have at least one row and one series".into()));
        }
        if mask.shape() != (t, n) {
            return Err(Error::Dimension(format!("mask is {:?} but values are {:?}", mask.shape(), (t, n))));
        }
        if series_ids.len() != n {
            return Err(Error::Dimension(format!("{} series ids for {n} series", series_ids.len())));
        }
        if let Some(ts) = &timestamps {
            if ts.len() != t {
                return Err(Error::Dimension(format!("{} timestamps for {t} rows", ts.len())));
            }
        }
        let mut filled = DMatrix::zeros(t, n);
        let mut missing_by_time = vec![Vec::new(); t];
        let mut missing_by_series = vec![Vec::new(); n];
        let mut observed_per_series = vec![0usize; n];
        let mut sum_sq_per_series = vec![0.0; n];
        for i in 0..n {
            for ti in 0..t {
                if mask[(ti, i)] {
                    let v = values[(ti, i)];
                    if !v.is_finite() {
                        return Err(Error::Validation(format!(
                            "series '{}' has a non-finite observed value at row {ti}",
                            series_ids[i]
                        )));
                    }
                    filled[(ti, i)] = v;
                    observed_per_series[i] += 1;
                    sum_sq_per_series[i] += v * v;
                } else {
                    missing_by_time[ti].push(i);
                    missing_by_series[i].push(ti);
                }
            }
            if observed_per_series[i] == 0 {
                return Err(Error::Validation(format!("series '{}' has no observed entries", series_ids[i])));
            }
        }
        Ok(Self {
            values,
            mask,
            series_ids,
            timestamps,
            filled,
            missing_by_time,
            missing_by_series,
            observed_per_series,
            sum_sq_per_series,
        })
    }

    /// Fully observed dataset except for non-finite cells, which become missing.
    pub fn from_matrix(values: DMatrix<f64>) -> Result<Self> {
        let mask = values.map(|v| v.is_finite());
        let ids = (0..values.ncols()).map(|i| format!("s{i}")).collect();
        Self::new(values, mask, ids, None)
    }

    pub fn n_times(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_series(&self) -> usize {
        self.values.ncols()
    }

    /// Raw values. Masked cells hold arbitrary content.
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn mask(&self) -> &DMatrix<bool> {
        &self.mask
    }

    pub fn is_observed(&self, t: usize, i: usize) -> bool {
        self.mask[(t, i)]
    }

    /// Observed value or `None`.
    pub fn get(&self, t: usize, i: usize) -> Option<f64> {
        self.mask[(t, i)].then(|| self.values[(t, i)])
    }

    /// Values with masked cells replaced by zero, so sums over observed
    /// cells can be written as plain matrix products.
    pub fn filled(&self) -> &DMatrix<f64> {
        &self.filled
    }

    pub fn series_ids(&self) -> &[String] {
        &self.series_ids
    }

    pub fn timestamps(&self) -> Option<&[String]> {
        self.timestamps.as_deref()
    }

    pub fn missing_at_time(&self, t: usize) -> &[usize] {
        &self.missing_by_time[t]
    }

    pub fn missing_in_series(&self, i: usize) -> &[usize] {
        &self.missing_by_series[i]
    }

    pub fn observed_in_series(&self, i: usize) -> usize {
        self.observed_per_series[i]
    }

    pub fn observed_count(&self) -> usize {
        self.observed_per_series.iter().sum()
    }

    /// `Σ_t y_ti²` over observed cells.
    pub fn sum_sq_in_series(&self, i: usize) -> f64 {
        self.sum_sq_per_series[i]
    }

    /// Replace the mask, keeping values. Fails if a series would be left
    /// without observations.
    pub fn with_mask(&self, mask: DMatrix<bool>) -> Result<Self> {
        Self::new(self.values.clone(), mask, self.series_ids.clone(), self.timestamps.clone())
    }

    /// Keep only the listed series, in the given order.
    pub fn select_series(&self, columns: &[usize]) -> Result<Self> {
        let t = self.n_times();
        let values = DMatrix::from_fn(t, columns.len(), |r, c| self.values[(r, columns[c])]);
        let mask = DMatrix::from_fn(t, columns.len(), |r, c| self.mask[(r, columns[c])]);
        let ids = columns.iter().map(|&c| self.series_ids[c].clone()).collect();
        Self::new(values, mask, ids, self.timestamps.clone())
    }
}

/// Fixed prior constants. The Wishart shape and scale are derived:
/// `ν = p` and `W = p w I_p`, so that `E[Λ] = w⁻¹ I_p` under the prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparameters {
    pub p: usize,
    pub k_max: usize,
    /// Prior expectation of the community precision, `w⁻¹`.
    pub prior_precision: f64,
    #[serde(default = "default_broad")]
    pub ard_a: f64,
    #[serde(default = "default_broad")]
    pub ard_b: f64,
    #[serde(default = "default_broad")]
    pub noise_alpha: f64,
    #[serde(default = "default_broad")]
    pub noise_beta: f64,
    #[serde(default = "default_broad")]
    pub dirichlet_gamma: f64,
}

fn default_broad() -> f64 {
    1e-3
}

impl Hyperparameters {
    pub fn new(p: usize, k_max: usize, prior_precision: f64) -> Self {
        Self {
            p,
            k_max,
            prior_precision,
            ard_a: 1e-3,
            ard_b: 1e-3,
            noise_alpha: 1e-3,
            noise_beta: 1e-3,
            dirichlet_gamma: 1e-3,
        }
    }

    pub fn wishart_nu(&self) -> f64 {
        self.p as f64
    }

    /// `W = p w I_p`.
    pub fn wishart_scale(&self) -> DMatrix<f64> {
        DMatrix::identity(self.p, self.p) * (self.p as f64 / self.prior_precision)
    }

    pub fn wishart_prior(&self) -> Result<WishartParams> {
        WishartParams::new(self.wishart_nu(), self.wishart_scale())
    }

    pub fn noise_prior(&self) -> Result<GammaParams> {
        GammaParams::new(self.noise_alpha, self.noise_beta)
    }

    pub fn ard_prior(&self) -> Result<GammaParams> {
        GammaParams::new(self.ard_a, self.ard_b)
    }

    pub fn sizes_prior(&self) -> Result<DirichletParams> {
        DirichletParams::symmetric(self.k_max, self.dirichlet_gamma)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::Validation("number of latent factors p must be at least 1".into()));
        }
        if self.k_max == 0 {
            return Err(Error::Validation("k_max must be at least 1".into()));
        }
        if !(self.prior_precision.is_finite() && self.prior_precision > 0.0) {
            return Err(Error::Validation("prior precision must be positive".into()));
        }
        for (name, v) in [
            ("ard_a", self.ard_a),
            ("ard_b", self.ard_b),
            ("noise_alpha", self.noise_alpha),
            ("noise_beta", self.noise_beta),
            ("dirichlet_gamma", self.dirichlet_gamma),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Validation(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Non-fatal findings from [`validate`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub warnings: Vec<String>,
}

/// Check a dataset/hyperparameter pair before fitting.
pub fn validate(dataset: &Dataset, hyper: &Hyperparameters) -> Result<ValidationReport> {
    hyper.validate()?;
    let mut report = ValidationReport::default();
    let limit = dataset.n_times().min(dataset.n_series());
    if hyper.p > limit {
        report.warnings.push(format!(
            "p = {} exceeds min(T, n) = {limit}; the factor model is under-determined",
            hyper.p
        ));
    }
    Ok(report)
}

/// Mean-field posterior over every model parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorState {
    /// q(x_t), one per time step.
    pub latent: Vec<MvNormalParams>,
    /// q(τ_i), one per series.
    pub noise: Vec<GammaParams>,
    /// q(A_i), one per series.
    pub loadings: Vec<MvNormalParams>,
    /// q(μ_k), one per community slot.
    pub centers: Vec<MvNormalParams>,
    /// q(Λ_k), one per community slot.
    pub precisions: Vec<WishartParams>,
    /// E[z_ik], an `n × K` row-stochastic matrix.
    pub responsibilities: DMatrix<f64>,
    /// q(ρ).
    pub sizes: DirichletParams,
    /// q(λ_kq), indexed `[k][q]`.
    pub ard: Vec<Vec<GammaParams>>,
}

impl PosteriorState {
    pub fn n_series(&self) -> usize {
        self.loadings.len()
    }

    pub fn n_times(&self) -> usize {
        self.latent.len()
    }

    pub fn k_max(&self) -> usize {
        self.centers.len()
    }

    pub fn p(&self) -> usize {
        self.loadings.first().map(|l| l.dim()).unwrap_or(0)
    }

    /// Expected community sizes `N_k = Σ_i E[z_ik]`.
    pub fn community_weights(&self) -> Vec<f64> {
        self.responsibilities.column_iter().map(|c| c.sum()).collect()
    }

    /// Check the structural invariants (dimensions and simplex rows).
    pub fn check(&self) -> Result<()> {
        let n = self.n_series();
        let k = self.k_max();
        let p = self.p();
        if self.noise.len() != n || self.responsibilities.shape() != (n, k) {
            return Err(Error::Dimension("per-series factors disagree on n".into()));
        }
        if self.precisions.len() != k || self.sizes.len() != k || self.ard.len() != k {
            return Err(Error::Dimension("per-community factors disagree on K".into()));
        }
        let dims_ok = self.latent.iter().chain(&self.loadings).chain(&self.centers).all(|q| q.dim() == p)
            && self.precisions.iter().all(|w| w.dim() == p)
            && self.ard.iter().all(|row| row.len() == p);
        if !dims_ok {
            return Err(Error::Dimension("factor dimensions disagree on p".into()));
        }
        for (i, row) in self.responsibilities.row_iter().enumerate() {
            let s = row.sum();
            if (s - 1.0).abs() > 1e-10 || row.iter().any(|&r| !(0.0..=1.0).contains(&r)) {
                return Err(Error::Validation(format!("responsibility row {i} is not on the simplex")));
            }
        }
        Ok(())
    }
}

/// Outcome of a full fit: the best restart and its diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub state: PosteriorState,
    /// ELBO after each full sweep.
    pub elbo_trace: Vec<f64>,
    pub converged: bool,
    /// Inferred labels `ĝ`, zero-based community indices.
    pub labels: Vec<usize>,
    pub k_hat: usize,
    pub restart_index: usize,
    pub wall_clock_seconds: f64,
    /// `K̂` of every successful restart, in restart order.
    pub restart_k_hats: Vec<usize>,
    /// Final ELBO of every successful restart, in restart order.
    pub restart_elbos: Vec<f64>,
    /// Restarts that failed, with their error messages.
    pub restart_failures: Vec<(usize, String)>,
    /// Full sweeps run over all successful restarts.
    pub total_sweeps: usize,
    /// Largest `(L_{t-1} - L_t) / |L_{t-1}|` over all sweeps of all restarts;
    /// non-positive when the bound never decreased.
    pub max_relative_decrease: f64,
}

impl FitResult {
    pub fn elbo(&self) -> f64 {
        *self.elbo_trace.last().unwrap_or(&f64::NEG_INFINITY)
    }

    pub fn sweeps(&self) -> usize {
        self.elbo_trace.len()
    }
}

/// `E[v vᵀ] = cov + mean meanᵀ`.
pub fn expected_outer(q: &MvNormalParams) -> DMatrix<f64> {
    q.second_moment()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    #[test]
    fn expected_outer_standard() {
        let q = MvNormalParams::standard(3);
        assert_relative_eq!(expected_outer(&q), DMatrix::identity(3, 3));
    }

    #[test]
    fn expected_outer_arithmetic() {
        let q = MvNormalParams::new(DVector::from_vec(vec![1.0, 2.0]), DMatrix::identity(2, 2) * 4.0).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[1.25, 2.0, 2.0, 4.25]);
        assert_relative_eq!(expected_outer(&q), expected, epsilon = 1e-14);
    }

    #[test]
    fn validate_accepts_plain_dataset() {
        let data = Dataset::from_matrix(DMatrix::from_fn(100, 50, |r, c| ((r * 7 + c * 3) % 11) as f64)).unwrap();
        let report = validate(&data, &Hyperparameters::new(2, 10, 1.0)).unwrap();
        assert!(report.warnings.is_empty());
    }

    #[test]
    fn empty_series_is_rejected_by_name() {
        let mut values = DMatrix::from_element(4, 3, 1.0);
        for t in 0..4 {
            values[(t, 1)] = f64::NAN;
        }
        let err = Dataset::from_matrix(values).unwrap_err();
        assert!(err.to_string().contains("'s1'"), "{err}");
    }

    #[test]
    fn non_positive_prior_precision_is_rejected() {
        let data = Dataset::from_matrix(DMatrix::from_element(3, 3, 1.0)).unwrap();
        for w in [0.0, -1.0] {
            let err = validate(&data, &Hyperparameters::new(1, 2, w)).unwrap_err();
            assert!(err.to_string().contains("prior precision must be positive"));
        }
    }

    #[test]
    fn oversized_p_only_warns() {
        let data = Dataset::from_matrix(DMatrix::from_element(3, 3, 1.0)).unwrap();
        let report = validate(&data, &Hyperparameters::new(4, 2, 1.0)).unwrap();
        assert_eq!(report.warnings.len(), 1);
    }

    #[test]
    fn masked_nan_is_allowed_but_observed_nan_is_not() {
        let values = DMatrix::from_row_slice(2, 2, &[1.0, f64::NAN, 2.0, 3.0]);
        let mut mask = DMatrix::from_element(2, 2, true);
        assert!(Dataset::new(values.clone(), mask.clone(), vec!["a".into(), "b".into()], None).is_err());
        mask[(0, 1)] = false;
        let d = Dataset::new(values, mask, vec!["a".into(), "b".into()], None).unwrap();
        assert_eq!(d.filled()[(0, 1)], 0.0);
        assert_eq!(d.missing_at_time(0), &[1]);
        assert_eq!(d.observed_in_series(1), 1);
    }

    #[test]
    fn wishart_prior_matches_precision() {
        let h = Hyperparameters::new(3, 4, 2.5);
        let prior = h.wishart_prior().unwrap();
        assert_relative_eq!(prior.mean(), DMatrix::identity(3, 3) * 2.5, epsilon = 1e-12);
        assert_relative_eq!(h.wishart_scale(), DMatrix::identity(3, 3) * (3.0 / 2.5));
    }
}
