//! Spatial point-process surveillance over a 1-D corridor.
//!
//! This crate models "normal" activity along a bounded transect as a
//! log-Gaussian Cox process, fits that model to historical arrivals, and uses
//! the fit for three downstream jobs:
//!
//! * scoring fresh arrivals for spatial anomalousness and classifying them
//!   with a two-stage stochastic rule ([`classify`]);
//! * quantifying the error of closed-form outlier-probability approximations
//!   against Monte Carlo ground truth, together with computable bounds on
//!   that error ([`outlier`], [`gap`]);
//! * placing a small number of sensors on the corridor to maximize the
//!   probability that no anomalous arrival slips past them ([`placement`]).
//!
//! The modules build bottom-up: [`grid`] fixes the discretized domain,
//! [`matern`] provides the stationary covariance family, [`field`] assembles
//! Gaussian log-intensity fields and their lognormal intensities,
//! [`inference`] fits the posterior field to binned counts by a Laplace
//! approximation, and [`synthesis`], [`evaluation`], and [`ingest`] supply
//! simulated data, end-to-end experiments, and real track ingestion.

pub mod arrivals;
pub mod classify;
pub mod error;
pub mod evaluation;
pub mod field;
pub mod gap;
pub mod grid;
pub mod inference;
pub mod ingest;
pub mod matern;
pub mod outlier;
pub mod placement;
pub mod rng;
pub mod synthesis;

pub use arrivals::{ArrivalSet, Label};
pub use classify::{ArrivalCountModel, ClassificationRates};
pub use error::{Error, Result};
pub use evaluation::{BranchStats, ClassificationSummary, ExperimentScenario, PipelineSummary};
pub use field::{GaussianField, IntensityField, IntensityStats};
pub use gap::{GapCell, GapReport};
pub use grid::SpatialGrid;
pub use inference::{BinnedCounts, PosteriorFit};
pub use ingest::{AisRecord, LineSegmentSpec, ParsedRecords, ProjectionOutcome};
pub use matern::MaternParams;
pub use outlier::{CurveMethod, OutlierProbabilityCurve};
pub use placement::{
    DetectionModel, GreedyPlacement, MonteCarloEstimate, ObjectiveReport, SensorArray,
};
pub use synthesis::CountMode;
