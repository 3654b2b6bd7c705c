//! Shared fixtures for the benchmark suite: one standard full-scale world
//! (13 km, 260 cells, Matérn covariance) built the same way the experiment
//! harness builds its worlds, so the timed kernels see realistic inputs.

use coxwatch_core::field::{GaussianField, IntensityField};
use coxwatch_core::inference::{fit_posterior, BinnedCounts};
use coxwatch_core::matern::MaternParams;
use coxwatch_core::rng::{substream, StreamDomain};
use coxwatch_core::synthesis::{sample_arrivals, CountMode};
use coxwatch_core::SpatialGrid;

/// Benchmarks all key off one seed so runs are comparable.
pub const BENCH_SEED: u64 = 1212;

pub fn standard_grid() -> SpatialGrid {
    SpatialGrid::new(13.0, 260).unwrap()
}

pub fn standard_params() -> MaternParams {
    MaternParams::new(1.0, 1.5, 2.0).unwrap()
}

/// Constant-log-mean prior over the standard grid: about two arrivals per
/// km per unit time in expectation.
pub fn standard_prior() -> GaussianField {
    GaussianField::from_matern_const_mean(standard_grid(), (2.0_f64).ln() - 0.5, &standard_params())
        .unwrap()
}

/// A sampled truth intensity from the standard prior.
pub fn sampled_truth() -> IntensityField {
    let mut rng = substream(BENCH_SEED, StreamDomain::Truth, 0);
    standard_prior().sample_intensity(&mut rng)
}

/// Binned synthetic history over `duration` time units of the sampled truth.
pub fn binned_history(duration: f64) -> BinnedCounts {
    let truth = sampled_truth();
    let mut rng = substream(BENCH_SEED, StreamDomain::History, 0);
    let arrivals = sample_arrivals(&truth, duration, CountMode::Poisson, &mut rng).unwrap();
    BinnedCounts::from_positions(&standard_grid(), &arrivals, duration).unwrap()
}

/// The Laplace posterior fitted to a 30-unit history; input to the curve,
/// placement, and Monte Carlo kernels.
pub fn fitted_posterior() -> GaussianField {
    fit_posterior(&standard_prior(), &binned_history(30.0))
        .unwrap()
        .field
}
