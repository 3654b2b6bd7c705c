//! Approximation-error analysis for the outlier-probability curves.
//!
//! The closed-form curves replace an expectation of a nonlinear function of
//! the intensity with closed forms in its moments, so each carries a Jensen-
//! type error against the Monte Carlo reference:
//!
//! * `gap_mean_only = p_mc - p_mean_only`, nonnegative because the
//!   conditional outlier probability is convex in the intensity;
//! * `gap_second_order = p_mc - p_second_order`, the residual after the
//!   variance correction, related to the first gap by an exact identity
//!   `gap_second_order = gap_mean_only - correction`.
//!
//! Both gaps come with computable two-sided envelopes in the lognormal
//! moments: `0 <= gap_mean_only <= sigma^2/(mu + lambda_1)^2` and
//! `-lambda_1 sigma^2/(mu + lambda_1)^3 <= gap_second_order <=
//! mu sigma^2/(mu + lambda_1)^3`.

use std::io::Write;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::GaussianField;
use crate::outlier::OutlierProbabilityCurve;

/// One grid cell's worth of gap diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct GapCell {
    pub s_km: f64,
    /// Monte Carlo reference probability and its standard error.
    pub p_mc: f64,
    pub p_mc_std_error: f64,
    /// Raw (unclamped) closed-form curves.
    pub p_mean_only: f64,
    pub p_second_order: f64,
    /// Errors of each closed form against the reference.
    pub gap_mean_only: f64,
    pub gap_second_order: f64,
    /// Moment-based envelopes on the errors.
    pub bound_mean_only_upper: f64,
    pub bound_second_order_lower: f64,
    pub bound_second_order_upper: f64,
}

/// Gap diagnostics for every cell plus domain-level aggregates.
#[derive(Debug, Clone, Serialize)]
pub struct GapReport {
    pub cells: Vec<GapCell>,
    pub mc_draws: usize,
    /// Mean of `|gap|` across cells, per curve.
    pub mean_abs_gap_mean_only: f64,
    pub mean_abs_gap_second_order: f64,
    /// Percent reduction in mean absolute gap from the variance correction;
    /// `None` when the mean-only gap is identically zero.
    pub reduction_percent: Option<f64>,
}

/// Compare both closed-form curves against a fresh Monte Carlo reference.
pub fn analyze_gap<R: Rng + ?Sized>(
    field: &GaussianField,
    outlier_rate: f64,
    mc_draws: usize,
    rng: &mut R,
) -> Result<GapReport> {
    let mc = OutlierProbabilityCurve::monte_carlo(field, outlier_rate, mc_draws, rng)?;
    let mean_only = OutlierProbabilityCurve::mean_only(field, outlier_rate)?;
    let second = OutlierProbabilityCurve::second_order(field, outlier_rate)?;
    let stats = field.intensity_stats();
    let centers = field.grid().cell_centers();
    let se = mc.std_error().expect("Monte Carlo curve carries errors");

    let cells: Vec<GapCell> = (0..centers.len())
        .map(|i| {
            let mu = stats[i].mean;
            let sig2 = stats[i].sd * stats[i].sd;
            let denom = mu + outlier_rate;
            let (b1, b2_lo, b2_up) = if denom > 0.0 {
                (
                    sig2 / (denom * denom),
                    -outlier_rate * sig2 / denom.powi(3),
                    mu * sig2 / denom.powi(3),
                )
            } else {
                (0.0, 0.0, 0.0)
            };
            GapCell {
                s_km: centers[i],
                p_mc: mc.raw()[i],
                p_mc_std_error: se[i],
                p_mean_only: mean_only.raw()[i],
                p_second_order: second.raw()[i],
                gap_mean_only: mc.raw()[i] - mean_only.raw()[i],
                gap_second_order: mc.raw()[i] - second.raw()[i],
                bound_mean_only_upper: b1,
                bound_second_order_lower: b2_lo,
                bound_second_order_upper: b2_up,
            }
        })
        .collect();

    let n = cells.len() as f64;
    let mean_abs_1 = cells.iter().map(|c| c.gap_mean_only.abs()).sum::<f64>() / n;
    let mean_abs_2 = cells.iter().map(|c| c.gap_second_order.abs()).sum::<f64>() / n;
    let reduction = if mean_abs_1 > 0.0 {
        Some(100.0 * (mean_abs_1 - mean_abs_2) / mean_abs_1)
    } else {
        None
    };
    Ok(GapReport {
        cells,
        mc_draws,
        mean_abs_gap_mean_only: mean_abs_1,
        mean_abs_gap_second_order: mean_abs_2,
        reduction_percent: reduction,
    })
}

impl GapReport {
    /// Cells where a gap escapes its envelope by more than `slack_sigmas`
    /// Monte Carlo standard errors (plus a rounding floor).
    pub fn bound_violations(&self, slack_sigmas: f64) -> Vec<usize> {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, c)| {
                let slack = slack_sigmas * c.p_mc_std_error + 1e-12;
                c.gap_mean_only < -slack
                    || c.gap_mean_only > c.bound_mean_only_upper + slack
                    || c.gap_second_order < c.bound_second_order_lower - slack
                    || c.gap_second_order > c.bound_second_order_upper + slack
            })
            .map(|(i, _)| i)
            .collect()
    }

    /// Write the per-cell table as CSV.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for cell in &self.cells {
            w.serialize(cell)
                .map_err(|e| Error::Format(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}
