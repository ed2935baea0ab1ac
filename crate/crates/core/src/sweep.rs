//! Empirical-Bayes grid search over the number of factors `p` and the prior
//! precision `w⁻¹`.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{fit, FitConfig};
use crate::model::{Dataset, FitResult, Hyperparameters};
use crate::par;

/// `count` values from `low` to `high`, evenly spaced in log scale.
pub fn log_spaced(low: f64, high: f64, count: usize) -> Result<Vec<f64>> {
    if !(low > 0.0 && high >= low && high.is_finite()) || count == 0 {
        return Err(Error::InvalidParameter(format!("bad log grid [{low}, {high}] x {count}")));
    }
    if count == 1 {
        return Ok(vec![low]);
    }
    let (a, b) = (low.ln(), high.ln());
    Ok((0..count).map(|j| (a + (b - a) * j as f64 / (count - 1) as f64).exp()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepStrategy {
    /// Every `(p, w⁻¹)` pair.
    Joint,
    /// Pick `p` from single-community fits, then sweep `w⁻¹` at that `p`.
    TwoStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub p_grid: Vec<usize>,
    pub w_inverse_grid: Vec<f64>,
    pub strategy: SweepStrategy,
    /// Overrides `FitConfig::n_restarts` for every cell.
    #[serde(default)]
    pub restarts: Option<usize>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.p_grid.is_empty() || self.w_inverse_grid.is_empty() {
            return Err(Error::Validation("sweep grids must be non-empty".into()));
        }
        if self.p_grid.contains(&0) {
            return Err(Error::Validation("p must be at least 1".into()));
        }
        if self.w_inverse_grid.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::Validation("prior precisions must be positive".into()));
        }
        if self.restarts == Some(0) {
            return Err(Error::Validation("restarts must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepStage {
    Joint,
    /// Single-community fit used to choose `p`.
    FactorSelection,
    PrecisionSweep,
}

/// One row of the sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub stage: SweepStage,
    pub p: usize,
    pub prior_precision: f64,
    pub k_max: usize,
    /// Best ELBO over restarts; `None` when the cell failed.
    pub elbo: Option<f64>,
    pub k_hat: Option<usize>,
    pub k_hat_min: Option<usize>,
    pub k_hat_max: Option<usize>,
    pub wall_clock_seconds: f64,
    pub error: Option<String>,
    pub best: bool,
}

pub struct SweepOutcome {
    pub cells: Vec<SweepCell>,
    /// Fit of each cell, aligned with `cells`.
    pub fits: Vec<Option<FitResult>>,
    /// Index of the best cell among the final-stage cells.
    pub best: usize,
}

impl SweepOutcome {
    pub fn best_fit(&self) -> &FitResult {
        self.fits[self.best].as_ref().expect("the best cell has a fit")
    }

    pub fn best_cell(&self) -> &SweepCell {
        &self.cells[self.best]
    }
}

fn run_cells(
    data: &Dataset,
    base: &Hyperparameters,
    config: &FitConfig,
    grid: &[(SweepStage, usize, f64, usize)],
) -> Vec<(SweepCell, Option<FitResult>)> {
    par::map_slice(grid, |&(stage, p, w, k_max)| {
        let started = Instant::now();
        let hyper = Hyperparameters { p, k_max, prior_precision: w, ..base.clone() };
        let result = fit(data, &hyper, config);
        let mut cell = SweepCell {
            stage,
            p,
            prior_precision: w,
            k_max,
            elbo: None,
            k_hat: None,
            k_hat_min: None,
            k_hat_max: None,
            wall_clock_seconds: 0.0,
            error: None,
            best: false,
        };
        let fit = match result {
            Ok(f) => {
                cell.elbo = Some(f.elbo());
                cell.k_hat = Some(f.k_hat);
                cell.k_hat_min = f.restart_k_hats.iter().copied().min();
                cell.k_hat_max = f.restart_k_hats.iter().copied().max();
                Some(f)
            }
            Err(e) => {
                cell.error = Some(e.to_string());
                None
            }
        };
        cell.wall_clock_seconds = started.elapsed().as_secs_f64();
        (cell, fit)
    })
}

fn argmax_elbo(cells: &[SweepCell], stage: SweepStage) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (j, c) in cells.iter().enumerate() {
        if c.stage != stage {
            continue;
        }
        if let Some(e) = c.elbo {
            if best.is_none_or(|b| e > cells[b].elbo.unwrap_or(f64::NEG_INFINITY)) {
                best = Some(j);
            }
        }
    }
    best
}

/// Run the sweep. Failed cells are recorded and skipped; the sweep fails
/// only if every cell of the deciding stage failed.
///
/// In the two-step strategy the factor-selection fits use `K_max = 1` at the
/// geometric middle of the precision grid.
pub fn run_sweep(data: &Dataset, base: &Hyperparameters, spec: &SweepSpec, config: &FitConfig) -> Result<SweepOutcome> {
    spec.validate()?;
    let config = FitConfig { n_restarts: spec.restarts.unwrap_or(config.n_restarts), ..config.clone() };
    let mut rows: Vec<(SweepCell, Option<FitResult>)> = Vec::new();
    let final_stage = match spec.strategy {
        SweepStrategy::Joint => {
            let grid: Vec<_> = spec
                .p_grid
                .iter()
                .flat_map(|&p| spec.w_inverse_grid.iter().map(move |&w| (SweepStage::Joint, p, w, base.k_max)))
                .collect();
            rows.extend(run_cells(data, base, &config, &grid));
            SweepStage::Joint
        }
        SweepStrategy::TwoStep => {
            let logs: f64 = spec.w_inverse_grid.iter().map(|w| w.ln()).sum();
            let middle = (logs / spec.w_inverse_grid.len() as f64).exp();
            let grid: Vec<_> = spec.p_grid.iter().map(|&p| (SweepStage::FactorSelection, p, middle, 1)).collect();
            rows.extend(run_cells(data, base, &config, &grid));
            let cells: Vec<SweepCell> = rows.iter().map(|r| r.0.clone()).collect();
            let chosen = argmax_elbo(&cells, SweepStage::FactorSelection)
                .ok_or_else(|| Error::AllRestartsFailed(cells.len(), "every factor-selection cell failed".into()))?;
            let p = cells[chosen].p;
            let grid: Vec<_> =
                spec.w_inverse_grid.iter().map(|&w| (SweepStage::PrecisionSweep, p, w, base.k_max)).collect();
            rows.extend(run_cells(data, base, &config, &grid));
            SweepStage::PrecisionSweep
        }
    };
    let (mut cells, fits): (Vec<SweepCell>, Vec<Option<FitResult>>) = rows.into_iter().unzip();
    let best = argmax_elbo(&cells, final_stage).ok_or_else(|| {
        let first = cells.iter().find_map(|c| c.error.clone()).unwrap_or_default();
        Error::AllRestartsFailed(cells.len(), format!("every sweep cell failed; first error: {first}"))
    })?;
    cells[best].best = true;
    Ok(SweepOutcome { cells, fits, best })
}

/// Indices of local maxima of a sequence. Runs of equal values count once,
/// at their first index; endpoints qualify if they beat their one neighbor.
pub fn local_maxima(values: &[f64]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut j = 0;
    while j < values.len() {
        let mut end = j;
        while end + 1 < values.len() && values[end + 1] == values[j] {
            end += 1;
        }
        let left_ok = j == 0 || values[j - 1] < values[j];
        let right_ok = end + 1 == values.len() || values[end + 1] < values[j];
        if left_ok && right_ok && values.len() > 1 {
            out.push(j);
        }
        j = end + 1;
    }
    out
}
