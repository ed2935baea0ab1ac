//! Clustering and imputation metrics, the correlation-spectrum baseline, and
//! the two-stage hold-out imputation protocol.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::distributions::{seeded_rng, DirichletParams, GammaParams, MvNormalParams};
use crate::error::{Error, Result};
use crate::inference::{self, extract_labels, FitConfig};
use crate::kmeans::kmeans;
use crate::model::{Dataset, FitResult, Hyperparameters, PosteriorState};
use crate::par;
use crate::synthesis::SyntheticInstance;

/// Normalized mutual information `I(a, b) / sqrt(H(a) H(b))`, natural log.
///
/// When either labeling is constant the score is 1 if both are constant and
/// 0 otherwise.
pub fn nmi(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("label lengths differ: {} vs {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::InvalidParameter("labelings must be non-empty".into()));
    }
    let n = a.len() as f64;
    let mut joint: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut count_a: BTreeMap<usize, f64> = BTreeMap::new();
    let mut count_b: BTreeMap<usize, f64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1.0;
        *count_a.entry(x).or_default() += 1.0;
        *count_b.entry(y).or_default() += 1.0;
    }
    let entropy = |counts: &BTreeMap<usize, f64>| -counts.values().map(|c| c / n * (c / n).ln()).sum::<f64>();
    let (ha, hb) = (entropy(&count_a), entropy(&count_b));
    if count_a.len() == 1 || count_b.len() == 1 {
        return Ok(if count_a.len() == count_b.len() { 1.0 } else { 0.0 });
    }
    let mutual: f64 = joint.iter().map(|(&(x, y), &c)| c / n * (c * n / (count_a[&x] * count_b[&y])).ln()).sum();
    Ok((mutual / (ha * hb).sqrt()).clamp(0.0, 1.0))
}

/// `K̂ - K`, with `K` the number of generating communities.
pub fn k_hat_error(fit: &FitResult, truth: &SyntheticInstance) -> i64 {
    fit.k_hat as i64 - truth.truth.centers.nrows() as i64
}

/// Pearson correlation matrix of the series (columns) of a complete dataset.
pub fn correlation_matrix(dataset: &Dataset) -> Result<DMatrix<f64>> {
    if dataset.observed_count() != dataset.n_times() * dataset.n_series() {
        return Err(Error::Validation("the correlation baseline needs a fully observed dataset".into()));
    }
    let mut z = dataset.values().clone();
    let t = z.nrows() as f64;
    for (i, mut col) in z.column_iter_mut().enumerate() {
        let mean = col.sum() / t;
        col.add_scalar_mut(-mean);
        let norm = col.norm();
        if norm <= f64::EPSILON * mean.abs().max(1.0) * t.sqrt() {
            return Err(Error::Validation(format!(
                "series '{}' is constant; its correlation is undefined",
                dataset.series_ids()[i]
            )));
        }
        col /= norm;
    }
    Ok(z.tr_mul(&z))
}

/// Leading eigenvectors (largest algebraic eigenvalue first) as columns.
pub fn leading_eigenvectors(m: &DMatrix<f64>, count: usize) -> Result<DMatrix<f64>> {
    if count == 0 || count > m.nrows() {
        return Err(Error::InvalidParameter(format!("cannot take {count} eigenvectors of a {}-matrix", m.nrows())));
    }
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..m.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    Ok(DMatrix::from_fn(m.nrows(), count, |r, c| eig.eigenvectors[(r, order[c])]))
}

/// Labels from k-means (best of 10 k-means++ runs) on the leading
/// eigenvectors of the correlation matrix.
pub fn pca_kmeans_baseline(dataset: &Dataset, n_components: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k == 0 || k > dataset.n_series() {
        return Err(Error::InvalidParameter(format!("k = {k} must be in 1..={}", dataset.n_series())));
    }
    let corr = correlation_matrix(dataset)?;
    let embedding = leading_eigenvectors(&corr, n_components)?;
    Ok(kmeans(&embedding, k, 10, &mut seeded_rng(seed, 0))?.labels)
}

/// Which expected loading predicts a cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImputeMode {
    /// `E[A_i]ᵀ E[x_t]`
    Loadings,
    /// `E[μ_ĝᵢ]ᵀ E[x_t]`
    CommunityMean,
}

/// Predicted values for `(t, i)` cells.
pub fn impute(state: &PosteriorState, cells: &[(usize, usize)], mode: ImputeMode) -> Result<Vec<f64>> {
    let (labels, _) = extract_labels(state);
    cells
        .iter()
        .map(|&(t, i)| {
            if t >= state.n_times() || i >= state.n_series() {
                return Err(Error::InvalidParameter(format!(
                    "cell ({t}, {i}) outside {}x{}",
                    state.n_times(),
                    state.n_series()
                )));
            }
            let loading = match mode {
                ImputeMode::Loadings => state.loadings[i].mean(),
                ImputeMode::CommunityMean => state.centers[labels[i]].mean(),
            };
            Ok(loading.dot(state.latent[t].mean()))
        })
        .collect()
}

fn rmse(predicted: &[f64], actual: &[f64]) -> f64 {
    let sse: f64 = predicted.iter().zip(actual).map(|(p, a)| (p - a).powi(2)).sum();
    (sse / predicted.len().max(1) as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HoldoutSpec {
    pub train_fraction: f64,
    pub folds: usize,
    /// Cap on the loading/noise/assignment sweeps for held-out series.
    pub max_sweeps: usize,
}

impl Default for HoldoutSpec {
    fn default() -> Self {
        Self { train_fraction: 0.5, folds: 10, max_sweeps: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub cells: usize,
    pub rmse_loadings: f64,
    pub rmse_community_mean: f64,
    pub rmse_global_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub nmi: Option<f64>,
    pub k_hat_error: Option<i64>,
    pub rmse_loadings: Option<f64>,
    pub rmse_community_mean: Option<f64>,
    pub rmse_global_mean: Option<f64>,
    pub train_series: Vec<usize>,
    pub folds: Vec<FoldReport>,
}

impl EvaluationReport {
    pub fn from_labels(nmi: f64, k_hat_error: Option<i64>) -> Self {
        Self {
            nmi: Some(nmi),
            k_hat_error,
            rmse_loadings: None,
            rmse_community_mean: None,
            rmse_global_mean: None,
            train_series: Vec::new(),
            folds: Vec::new(),
        }
    }
}

/// Posterior over held-out series against frozen shared factors.
///
/// `x`, `μ`, `Λ`, `ρ` and `λ` are copied from `shared`; the loadings, noise
/// and assignments of the new series start from their priors and are then
/// iterated to convergence.
fn infer_new_series(
    shared: &PosteriorState,
    data: &Dataset,
    hyper: &Hyperparameters,
    rel_tol: f64,
    max_sweeps: usize,
) -> Result<PosteriorState> {
    let n = data.n_series();
    let p = shared.p();
    let weights = shared.sizes.mean();
    let noise = (0..n)
        .map(|i| {
            let count = data.observed_in_series(i) as f64;
            let shape = hyper.noise_alpha + 0.5 * count;
            GammaParams::new(shape, shape * (data.sum_sq_in_series(i) / count).max(f64::MIN_POSITIVE))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut state = PosteriorState {
        latent: shared.latent.clone(),
        noise,
        loadings: vec![MvNormalParams::standard(p); n],
        centers: shared.centers.clone(),
        precisions: shared.precisions.clone(),
        responsibilities: DMatrix::from_fn(n, shared.k_max(), |_, k| weights[k]),
        sizes: DirichletParams::new(shared.sizes.concentration().to_vec())?,
        ard: shared.ard.clone(),
    };
    let mut previous = f64::NEG_INFINITY;
    for _ in 0..max_sweeps {
        inference::update_factor_loadings(&mut state, data, hyper)?;
        inference::update_noise_precision(&mut state, data, hyper)?;
        inference::update_assignments(&mut state, hyper)?;
        let current = inference::compute_elbo(&state, data, hyper)?;
        if previous.is_finite() && (current - previous) / previous.abs() < rel_tol {
            break;
        }
        previous = current;
    }
    Ok(state)
}

/// Two-stage imputation cross-validation.
///
/// Stage one fits the model to a random `train_fraction` of the series.
/// Stage two splits the cells of the remaining series into `folds` parts;
/// for each fold those cells are hidden, the held-out series' loadings,
/// noise and assignments are inferred against the frozen shared factors, and
/// the hidden cells are predicted. The global-mean predictor uses the mean
/// of all training cells.
pub fn holdout_protocol(
    dataset: &Dataset,
    spec: &HoldoutSpec,
    hyper: &Hyperparameters,
    config: &FitConfig,
    seed: u64,
) -> Result<EvaluationReport> {
    let n = dataset.n_series();
    if n < 4 {
        return Err(Error::InvalidParameter(format!("hold-out needs at least 4 series, got {n}")));
    }
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) || spec.folds < 2 {
        return Err(Error::InvalidParameter("train_fraction must be in (0, 1) and folds at least 2".into()));
    }
    let mut rng = seeded_rng(seed, 0);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_train = ((spec.train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut train: Vec<usize> = order[..n_train].to_vec();
    let mut test: Vec<usize> = order[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();

    let train_data = dataset.select_series(&train)?;
    let fitted = inference::fit(&train_data, hyper, &FitConfig { seed, ..config.clone() })?;
    let global_mean = train_data.filled().sum() / train_data.observed_count() as f64;
    let fit_hyper = config.effective_hyper(hyper);

    let test_data = dataset.select_series(&test)?;
    let mut cells: Vec<(usize, usize)> = (0..test.len())
        .flat_map(|i| (0..test_data.n_times()).map(move |t| (t, i)))
        .filter(|&(t, i)| test_data.is_observed(t, i))
        .collect();
    cells.shuffle(&mut rng);
    let fold_cells: Vec<Vec<(usize, usize)>> =
        (0..spec.folds).map(|f| cells.iter().copied().skip(f).step_by(spec.folds).collect()).collect();

    let fold_results = par::map_slice(&fold_cells, |held| -> Result<(FoldReport, Vec<[f64; 4]>)> {
        let mut mask = test_data.mask().clone();
        for &(t, i) in held {
            mask[(t, i)] = false;
        }
        let view = test_data.with_mask(mask).map_err(|e| Error::Validation(format!("fold empties a series: {e}")))?;
        let state = infer_new_series(&fitted.state, &view, &fit_hyper, config.elbo_rel_tol, spec.max_sweeps)?;
        let by_loadings = impute(&state, held, ImputeMode::Loadings)?;
        let by_center = impute(&state, held, ImputeMode::CommunityMean)?;
        let actual: Vec<f64> = held.iter().map(|&(t, i)| test_data.values()[(t, i)]).collect();
        let flat = vec![global_mean; held.len()];
        let rows = (0..held.len()).map(|j| [by_loadings[j], by_center[j], flat[j], actual[j]]).collect();
        let report = FoldReport {
            cells: held.len(),
            rmse_loadings: rmse(&by_loadings, &actual),
            rmse_community_mean: rmse(&by_center, &actual),
            rmse_global_mean: rmse(&flat, &actual),
        };
        Ok((report, rows))
    });

    let mut folds = Vec::with_capacity(spec.folds);
    let mut pooled: Vec<[f64; 4]> = Vec::with_capacity(cells.len());
    for r in fold_results {
        let (report, rows) = r?;
        folds.push(report);
        pooled.extend(rows);
    }
    let column = |c: usize| pooled.iter().map(|r| r[c]).collect::<Vec<_>>();
    let actual = column(3);
    Ok(EvaluationReport {
        nmi: None,
        k_hat_error: None,
        rmse_loadings: Some(rmse(&column(0), &actual)),
        rmse_community_mean: Some(rmse(&column(1), &actual)),
        rmse_global_mean: Some(rmse(&column(2), &actual)),
        train_series: train,
        folds,
    })
}
