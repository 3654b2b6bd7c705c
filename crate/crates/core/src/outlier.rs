//! Posterior outlier-probability curves.
//!
//! An arrival at position `s` in a window of unit duration came either from
//! the normal process, whose intensity `Lambda(s)` is lognormal under the
//! fitted field, or from the uniform commission-outlier process at rate
//! `lambda_1`. Conditional on the field value the outlier probability is
//! `lambda_1 / (Lambda(s) + lambda_1)`; marginalizing over the field gives
//! the curve this module approximates three ways:
//!
//! * **Monte Carlo** — average the conditional probability over joint field
//!   draws; the reference the closed forms are judged against.
//! * **Mean only** — plug the cellwise mean intensity into the conditional
//!   probability. Ignores field uncertainty entirely.
//! * **Second order** — add the variance term of the Taylor expansion
//!   around the mean, `lambda_1 sigma^2 / (mu + lambda_1)^3`.
//!
//! Curves keep both the raw approximation (used for error analysis, may
//! exceed 1) and a `[0, 1]`-clamped copy (used for classification).

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::GaussianField;
use crate::grid::SpatialGrid;

/// Fewest Monte Carlo draws accepted for a reference curve; below this the
/// per-cell standard error is too coarse to judge closed forms against.
pub const MIN_MC_DRAWS: usize = 10_000;

/// Columns of standard-normal draws evaluated per matrix product.
const SAMPLE_BLOCK: usize = 256;

/// How a curve was computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveMethod {
    MonteCarlo,
    MeanOnly,
    SecondOrder,
}

/// Per-cell outlier probability, raw and clamped.
#[derive(Debug, Clone, Serialize)]
pub struct OutlierProbabilityCurve {
    method: CurveMethod,
    grid: SpatialGrid,
    raw: Vec<f64>,
    clamped: Vec<f64>,
    /// Per-cell Monte Carlo standard errors; `None` for closed forms.
    std_error: Option<Vec<f64>>,
    /// Cells where the probability denominator degenerated to zero and the
    /// curve was pinned to 0.
    degenerate_cells: Vec<usize>,
}

fn validate_rate(outlier_rate: f64) -> Result<()> {
    if !outlier_rate.is_finite() || outlier_rate < 0.0 {
        return Err(Error::invalid(format!(
            "outlier rate must be nonnegative and finite, got {outlier_rate}"
        )));
    }
    Ok(())
}

impl OutlierProbabilityCurve {
    /// Monte Carlo reference curve from `draws` joint field realizations.
    pub fn monte_carlo<R: Rng + ?Sized>(
        field: &GaussianField,
        outlier_rate: f64,
        draws: usize,
        rng: &mut R,
    ) -> Result<Self> {
        validate_rate(outlier_rate)?;
        if draws < MIN_MC_DRAWS {
            return Err(Error::invalid(format!(
                "Monte Carlo reference needs at least {MIN_MC_DRAWS} draws, got {draws}"
            )));
        }
        let n = field.grid().n_cells();
        let mut sum = vec![0.0f64; n];
        let mut sum_sq = vec![0.0f64; n];
        let mut remaining = draws;
        while remaining > 0 {
            let block = remaining.min(SAMPLE_BLOCK);
            let logs = field.sample_log_intensity_block(block, rng);
            for col in logs.column_iter() {
                for (i, &eta) in col.iter().enumerate() {
                    let denom = eta.exp() + outlier_rate;
                    let p = if denom > 0.0 {
                        outlier_rate / denom
                    } else {
                        0.0
                    };
                    sum[i] += p;
                    sum_sq[i] += p * p;
                }
            }
            remaining -= block;
        }
        let h = draws as f64;
        let mut raw = Vec::with_capacity(n);
        let mut se = Vec::with_capacity(n);
        for i in 0..n {
            let mean = sum[i] / h;
            let var = (sum_sq[i] / h - mean * mean).max(0.0);
            raw.push(mean);
            se.push((var / (h - 1.0)).sqrt());
        }
        Ok(Self {
            method: CurveMethod::MonteCarlo,
            grid: field.grid().clone(),
            clamped: raw.clone(), // MC averages of probabilities are already in [0, 1]
            raw,
            std_error: Some(se),
            degenerate_cells: Vec::new(),
        })
    }

    /// First-order curve: the conditional probability at the mean intensity.
    pub fn mean_only(field: &GaussianField, outlier_rate: f64) -> Result<Self> {
        validate_rate(outlier_rate)?;
        let mut degenerate = Vec::new();
        let raw: Vec<f64> = field
            .intensity_stats()
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let denom = s.mean + outlier_rate;
                if denom > 0.0 {
                    outlier_rate / denom
                } else {
                    degenerate.push(i);
                    0.0
                }
            })
            .collect();
        Ok(Self {
            method: CurveMethod::MeanOnly,
            grid: field.grid().clone(),
            clamped: raw.iter().map(|p| p.clamp(0.0, 1.0)).collect(),
            raw,
            std_error: None,
            degenerate_cells: degenerate,
        })
    }

    /// Second-order curve: mean-only plus the Taylor variance correction.
    pub fn second_order(field: &GaussianField, outlier_rate: f64) -> Result<Self> {
        validate_rate(outlier_rate)?;
        let mut degenerate = Vec::new();
        let raw: Vec<f64> = field
            .intensity_stats()
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let denom = s.mean + outlier_rate;
                if denom > 0.0 {
                    let base = outlier_rate / denom;
                    base + outlier_rate * s.sd * s.sd / denom.powi(3)
                } else {
                    degenerate.push(i);
                    0.0
                }
            })
            .collect();
        Ok(Self {
            method: CurveMethod::SecondOrder,
            grid: field.grid().clone(),
            clamped: raw.iter().map(|p| p.clamp(0.0, 1.0)).collect(),
            raw,
            std_error: None,
            degenerate_cells: degenerate,
        })
    }

    pub fn method(&self) -> CurveMethod {
        self.method
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    /// Unclamped values; the quantity error analysis operates on.
    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    /// Values clamped to `[0, 1]`; the quantity classification consumes.
    pub fn clamped(&self) -> &[f64] {
        &self.clamped
    }

    pub fn std_error(&self) -> Option<&[f64]> {
        self.std_error.as_deref()
    }

    pub fn degenerate_cells(&self) -> &[usize] {
        &self.degenerate_cells
    }

    /// Clamped probability for the cell containing `s`.
    pub fn probability_at(&self, s: f64) -> Result<f64> {
        Ok(self.clamped[self.grid.locate_cell(s)?])
    }
}
