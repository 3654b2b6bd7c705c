//! End-to-end Monte Carlo experiments comparing the two outlier-probability
//! approximations.
//!
//! Three harnesses live here:
//!
//! * [`classification_experiment`] synthesizes labeled windows from one
//!   fitted world and scores the two-stage classifier under the mean-only
//!   and second-order curves, paired iteration by iteration;
//! * [`detection_experiment`] (with its closed form
//!   [`expected_detection_rate`]) scores how many true outliers a sensor
//!   array catches;
//! * [`pipeline_comparison`] runs the whole chain per replication —
//!   synthesize, classify, re-fit the outlier intensity from the flagged
//!   arrivals, place sensors greedily, score detection against the truth —
//!   once per curve plus an oracle branch fed the true outlier set.
//!
//! Both experiment drivers pair their branches: each iteration's dataset and
//! classifier randomness are drawn from per-iteration substreams, and the two
//! branches consume byte-identical streams, so every reported difference is
//! attributable to the curves alone. Iterations run in parallel; aggregation
//! walks the results in iteration order, so summaries are bit-identical
//! regardless of worker count.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use rand::Rng;

use crate::arrivals::{ArrivalSet, Label};
use crate::classify::{classify, ArrivalCountModel};
use crate::error::{Error, Result};
use crate::field::{GaussianField, IntensityField};
use crate::grid::SpatialGrid;
use crate::inference::{empirical_log_rate, fit_posterior, BinnedCounts, PosteriorFit};
use crate::matern::MaternParams;
use crate::outlier::OutlierProbabilityCurve;
use crate::placement::{greedy_place, DetectionModel, MonteCarloEstimate, SensorArray};
use crate::rng::{substream, StreamDomain};
use crate::synthesis::{sample_arrivals, synthesize_window, CountMode};

/// Floor on Monte Carlo trials for [`detection_experiment`].
pub const MIN_DETECTION_TRIALS: usize = 10_000;

/// Floor on replications for [`pipeline_comparison`]; paired standard errors
/// below this are too noisy to support the directional comparisons the
/// harness exists for.
pub const MIN_PIPELINE_REPLICATIONS: usize = 200;

/// A sample mean with its standard error (zero when fewer than two
/// observations contributed).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BranchStats {
    pub mean: f64,
    pub std_error: f64,
}

/// Streaming mean/variance accumulator (Welford's recurrence).
#[derive(Debug, Default, Clone, Copy)]
struct RunningStats {
    n: usize,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn branch(&self) -> BranchStats {
        let std_error = if self.n >= 2 {
            ((self.m2 / (self.n - 1) as f64).max(0.0) / self.n as f64).sqrt()
        } else {
            0.0
        };
        BranchStats {
            mean: self.mean,
            std_error,
        }
    }
}

/// Everything an experiment needs to build its world and run one branch.
///
/// The truth field, the history used to fit the normal-activity posterior,
/// and the synthetic evaluation windows all live on `grid`. The posterior
/// prior re-uses `prior` with a constant log-mean taken from the empirical
/// history rate, so the fit never sees `truth_log_mean`.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentScenario {
    pub grid: SpatialGrid,
    /// Covariance family shared by the truth field, the normal-activity
    /// fit prior, and the outlier-intensity re-fit prior.
    pub prior: MaternParams,
    /// Constant part of the latent truth field's log-mean.
    pub truth_log_mean: f64,
    /// Amplitude of one sine cycle added to the truth log-mean across the
    /// corridor (zero for a flat profile).
    pub truth_log_mean_amplitude: f64,
    /// Time units of history synthesized to fit the normal posterior.
    pub history_duration: f64,
    /// Length of each evaluation window, in the same time units.
    pub window_duration: f64,
    /// True commission-outlier rate (arrivals per km per unit time).
    pub outlier_rate_per_km: f64,
    /// Outlier rate assumed by the probability curves before any re-fit.
    pub assumed_outlier_rate_per_km: f64,
    /// Posterior draws behind the arrival-count gate model.
    pub count_model_draws: usize,
    /// Whether synthetic windows carry expected or Poisson arrival counts.
    pub count_mode: CountMode,
    pub detection: DetectionModel,
    /// Sensors placed per branch in the pipeline comparison.
    pub n_sensors: usize,
}

impl ExperimentScenario {
    pub fn validate(&self) -> Result<()> {
        for (value, what) in [
            (self.history_duration, "history duration"),
            (self.window_duration, "window duration"),
            (self.assumed_outlier_rate_per_km, "assumed outlier rate"),
        ] {
            if !value.is_finite() || value <= 0.0 {
                return Err(Error::invalid(format!(
                    "{what} must be positive, got {value}"
                )));
            }
        }
        if !self.outlier_rate_per_km.is_finite() || self.outlier_rate_per_km < 0.0 {
            return Err(Error::invalid(format!(
                "outlier rate must be nonnegative, got {}",
                self.outlier_rate_per_km
            )));
        }
        if !self.truth_log_mean.is_finite() {
            return Err(Error::invalid(format!(
                "truth log-mean must be finite, got {}",
                self.truth_log_mean
            )));
        }
        if !self.truth_log_mean_amplitude.is_finite() {
            return Err(Error::invalid(format!(
                "truth log-mean amplitude must be finite, got {}",
                self.truth_log_mean_amplitude
            )));
        }
        if self.count_model_draws < 2 {
            return Err(Error::invalid(format!(
                "count model needs at least 2 posterior draws, got {}",
                self.count_model_draws
            )));
        }
        if self.n_sensors == 0 || self.n_sensors > self.grid.n_cells() {
            return Err(Error::invalid(format!(
                "cannot place {} sensors on a {}-cell grid",
                self.n_sensors,
                self.grid.n_cells()
            )));
        }
        self.detection.validate()
    }
}

/// One realized world: a truth intensity, the posterior fitted to history
/// drawn from it, the count-gate model, and both probability curves.
pub struct SyntheticWorld {
    /// The sampled ground-truth normal-activity intensity.
    pub truth: IntensityField,
    /// Laplace fit of the normal posterior to the synthesized history.
    pub posterior: PosteriorFit,
    /// Arrival-count gate model over one evaluation window.
    pub count_model: ArrivalCountModel,
    pub mean_only: OutlierProbabilityCurve,
    pub second_order: OutlierProbabilityCurve,
    /// Arrivals in the synthesized history record.
    pub history_arrivals: usize,
}

/// The latent normal-activity distribution implied by a scenario: log-mean
/// `truth_log_mean + amplitude * sin(2 pi s / L)` under the Matérn prior.
pub fn truth_field(scenario: &ExperimentScenario) -> Result<GaussianField> {
    let grid = scenario.grid.clone();
    let length = grid.length_km();
    let truth_mean = DVector::from_iterator(
        grid.n_cells(),
        grid.cell_centers().iter().map(|&s| {
            scenario.truth_log_mean
                + scenario.truth_log_mean_amplitude
                    * (2.0 * std::f64::consts::PI * s / length).sin()
        }),
    );
    GaussianField::from_matern(grid, truth_mean, &scenario.prior)
}

/// Sample the truth, synthesize history, fit the posterior, and derive the
/// classifier inputs. Deterministic given (`scenario`, `seed`): the truth,
/// history, and count-model streams use fixed substream indices.
pub fn build_world(scenario: &ExperimentScenario, seed: u64) -> Result<SyntheticWorld> {
    let grid = scenario.grid.clone();
    let latent = truth_field(scenario)?;
    let mut truth_rng = substream(seed, StreamDomain::Truth, 0);
    let truth = latent.sample_intensity(&mut truth_rng);

    let mut history_rng = substream(seed, StreamDomain::History, 0);
    let history = sample_arrivals(
        &truth,
        scenario.history_duration,
        scenario.count_mode,
        &mut history_rng,
    )?;
    let counts = BinnedCounts::from_positions(&grid, &history, scenario.history_duration)?;
    let fit_prior = GaussianField::from_matern_const_mean(
        grid.clone(),
        empirical_log_rate(&grid, &counts),
        &scenario.prior,
    )?;
    let posterior = fit_posterior(&fit_prior, &counts)?;

    let mut count_rng = substream(seed, StreamDomain::CountModel, 0);
    let count_model = ArrivalCountModel::from_posterior(
        &posterior.field,
        scenario.count_model_draws,
        1.0,
        &mut count_rng,
    )?
    .scaled(scenario.window_duration)?;
    let mean_only =
        OutlierProbabilityCurve::mean_only(&posterior.field, scenario.assumed_outlier_rate_per_km)?;
    let second_order = OutlierProbabilityCurve::second_order(
        &posterior.field,
        scenario.assumed_outlier_rate_per_km,
    )?;
    Ok(SyntheticWorld {
        truth,
        posterior,
        count_model,
        mean_only,
        second_order,
        history_arrivals: history.len(),
    })
}

/// Closed-form expected fraction of `outlier_positions` detected by
/// `sensors`: the mean over positions of `1 - prod_m (1 - gamma(s, a_m))`.
pub fn expected_detection_rate(
    outlier_positions: &[f64],
    sensors: &SensorArray,
    model: &DetectionModel,
) -> Result<f64> {
    model.validate()?;
    if outlier_positions.is_empty() {
        return Err(Error::UndefinedRate(
            "detection rate over zero outliers".to_string(),
        ));
    }
    let mut total = 0.0;
    for &s in outlier_positions {
        if !s.is_finite() || s < 0.0 || s > sensors.length_km() {
            return Err(Error::OutOfDomain {
                position: s,
                length_km: sensors.length_km(),
            });
        }
        let miss: f64 = sensors
            .positions()
            .iter()
            .map(|&a| 1.0 - model.detection_probability(a, s))
            .product();
        total += 1.0 - miss;
    }
    Ok(total / outlier_positions.len() as f64)
}

/// Monte Carlo detection rate: per trial, each true outlier in `truth` is
/// independently caught with its closed-form detection probability; the
/// estimate averages the per-trial caught fractions.
pub fn detection_experiment<R: Rng + ?Sized>(
    truth: &ArrivalSet,
    sensors: &SensorArray,
    model: &DetectionModel,
    trials: usize,
    rng: &mut R,
) -> Result<MonteCarloEstimate> {
    if trials < MIN_DETECTION_TRIALS {
        return Err(Error::invalid(format!(
            "detection experiment needs at least {MIN_DETECTION_TRIALS} trials, got {trials}"
        )));
    }
    let labels = truth
        .truth()
        .ok_or_else(|| Error::invalid("detection experiment needs truth labels".to_string()))?;
    if (truth.domain_length_km() - sensors.length_km()).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "arrival domain ({} km) and sensor domain ({} km) disagree",
            truth.domain_length_km(),
            sensors.length_km()
        )));
    }
    let outliers: Vec<f64> = truth
        .positions()
        .iter()
        .zip(labels)
        .filter(|(_, l)| **l == Label::Outlier)
        .map(|(&s, _)| s)
        .collect();
    if outliers.is_empty() {
        return Err(Error::UndefinedRate(
            "detection rate over zero outliers".to_string(),
        ));
    }
    let catch_probabilities: Vec<f64> = outliers
        .iter()
        .map(|&s| {
            let miss: f64 = sensors
                .positions()
                .iter()
                .map(|&a| 1.0 - model.detection_probability(a, s))
                .product();
            1.0 - miss
        })
        .collect();
    let mut stats = RunningStats::default();
    for _ in 0..trials {
        let mut caught = 0usize;
        for &p in &catch_probabilities {
            if rng.random::<f64>() < p {
                caught += 1;
            }
        }
        stats.push(caught as f64 / catch_probabilities.len() as f64);
    }
    let branch = stats.branch();
    Ok(MonteCarloEstimate {
        value: branch.mean,
        std_error: branch.std_error,
        draws: trials,
    })
}

/// One scored window of the classification experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassificationIteration {
    pub iteration: usize,
    pub arrivals: usize,
    pub true_outliers: usize,
    pub mean_only_flagged: usize,
    pub second_order_flagged: usize,
    /// Fraction of the window's true outliers flagged under each curve.
    pub mean_only_success: f64,
    pub second_order_success: f64,
}

/// Aggregate of [`classification_experiment`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationSummary {
    pub iterations: usize,
    /// Windows that held at least one true outlier and were scored.
    pub scored: usize,
    /// Windows skipped because no true outlier arrived.
    pub skipped_windows: usize,
    /// Arrivals in the history record behind the fitted posterior.
    pub history_arrivals: usize,
    pub mean_only: BranchStats,
    pub second_order: BranchStats,
    /// Paired per-window difference, second-order minus mean-only.
    pub difference: BranchStats,
    /// Per-window records; exported as CSV, not as part of JSON summaries.
    #[serde(skip_serializing)]
    pub trace: Vec<ClassificationIteration>,
}

fn count_flagged_outliers(labels: &[Label], verdicts: &[bool]) -> usize {
    labels
        .iter()
        .zip(verdicts)
        .filter(|(l, v)| **l == Label::Outlier && **v)
        .count()
}

fn run_classification_iteration(
    scenario: &ExperimentScenario,
    world: &SyntheticWorld,
    seed: u64,
    index: u64,
) -> Result<Option<ClassificationIteration>> {
    let mut data_rng = substream(seed, StreamDomain::Dataset, index);
    let window = synthesize_window(
        &world.truth,
        scenario.outlier_rate_per_km,
        scenario.window_duration,
        scenario.count_mode,
        &mut data_rng,
    )?;
    let labels = window.truth().expect("synthesized windows carry truth");
    let true_outliers = labels.iter().filter(|l| **l == Label::Outlier).count();
    if true_outliers == 0 {
        return Ok(None);
    }
    // Cloning the stream hands both branches byte-identical randomness.
    let mut mean_rng = substream(seed, StreamDomain::Classify, index);
    let mut second_rng = mean_rng.clone();
    let mean_verdicts = classify(&window, &world.count_model, &world.mean_only, &mut mean_rng)?;
    let second_verdicts = classify(
        &window,
        &world.count_model,
        &world.second_order,
        &mut second_rng,
    )?;
    let mean_hits = count_flagged_outliers(labels, &mean_verdicts);
    let second_hits = count_flagged_outliers(labels, &second_verdicts);
    Ok(Some(ClassificationIteration {
        iteration: index as usize,
        arrivals: window.len(),
        true_outliers,
        mean_only_flagged: mean_verdicts.iter().filter(|v| **v).count(),
        second_order_flagged: second_verdicts.iter().filter(|v| **v).count(),
        mean_only_success: mean_hits as f64 / true_outliers as f64,
        second_order_success: second_hits as f64 / true_outliers as f64,
    }))
}

/// Score the two-stage classifier under both curves over `iterations`
/// freshly synthesized windows from one fitted world.
pub fn classification_experiment(
    scenario: &ExperimentScenario,
    iterations: usize,
    seed: u64,
) -> Result<ClassificationSummary> {
    scenario.validate()?;
    if iterations == 0 {
        return Err(Error::invalid(
            "classification experiment needs at least one iteration".to_string(),
        ));
    }
    let world = build_world(scenario, seed)?;
    let rows: Vec<Result<Option<ClassificationIteration>>> = (0..iterations)
        .into_par_iter()
        .map(|i| run_classification_iteration(scenario, &world, seed, i as u64))
        .collect();

    let mut mean_stats = RunningStats::default();
    let mut second_stats = RunningStats::default();
    let mut diff_stats = RunningStats::default();
    let mut trace = Vec::new();
    let mut skipped = 0usize;
    for row in rows {
        match row? {
            Some(it) => {
                mean_stats.push(it.mean_only_success);
                second_stats.push(it.second_order_success);
                diff_stats.push(it.second_order_success - it.mean_only_success);
                trace.push(it);
            }
            None => skipped += 1,
        }
    }
    if trace.is_empty() {
        return Err(Error::UndefinedRate(
            "no synthesized window held a true outlier".to_string(),
        ));
    }
    Ok(ClassificationSummary {
        iterations,
        scored: trace.len(),
        skipped_windows: skipped,
        history_arrivals: world.history_arrivals,
        mean_only: mean_stats.branch(),
        second_order: second_stats.branch(),
        difference: diff_stats.branch(),
        trace,
    })
}

/// One scored replication of the pipeline comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PipelineReplicate {
    pub replication: usize,
    pub arrivals: usize,
    pub true_outliers: usize,
    pub mean_only_flagged: usize,
    pub second_order_flagged: usize,
    pub mean_only_success: f64,
    pub second_order_success: f64,
    /// Expected detection rate of each branch's 7-sensor (configurable)
    /// placement against the window's true outliers.
    pub mean_only_rate: f64,
    pub second_order_rate: f64,
    /// Rate of the oracle branch, whose re-fit sees the true outlier set.
    pub oracle_rate: f64,
}

/// Aggregate of [`pipeline_comparison`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineSummary {
    pub replications: usize,
    pub scored: usize,
    pub skipped_windows: usize,
    pub history_arrivals: usize,
    pub mean_only: BranchStats,
    pub second_order: BranchStats,
    pub oracle: BranchStats,
    /// Paired per-replication rate difference, second-order minus mean-only.
    pub absolute_improvement: BranchStats,
    /// `100 * absolute_improvement.mean / mean_only.mean`; `None` when the
    /// mean-only branch never detected anything.
    pub relative_improvement_percent: Option<f64>,
    /// Per-replication records; exported as CSV, not as part of JSON
    /// summaries.
    #[serde(skip_serializing)]
    pub trace: Vec<PipelineReplicate>,
}

/// Re-fit the outlier intensity from `positions` observed over one window,
/// using the scenario's covariance family and an empirical constant
/// log-mean (floored, so an empty flagged set still fits).
fn refit_outlier_field(scenario: &ExperimentScenario, positions: &[f64]) -> Result<GaussianField> {
    let counts = BinnedCounts::from_positions(&scenario.grid, positions, scenario.window_duration)?;
    let prior = GaussianField::from_matern_const_mean(
        scenario.grid.clone(),
        empirical_log_rate(&scenario.grid, &counts),
        &scenario.prior,
    )?;
    Ok(fit_posterior(&prior, &counts)?.field)
}

/// Re-fit from `flagged`, place sensors greedily, and score against the true
/// outlier positions.
fn place_and_score(
    scenario: &ExperimentScenario,
    flagged: &[f64],
    true_outliers: &[f64],
) -> Result<f64> {
    let field = refit_outlier_field(scenario, flagged)?;
    let placement = greedy_place(
        &field,
        scenario.detection,
        scenario.grid.cell_centers(),
        scenario.n_sensors,
    )?;
    expected_detection_rate(true_outliers, &placement.sensors, &scenario.detection)
}

fn run_pipeline_replication(
    scenario: &ExperimentScenario,
    world: &SyntheticWorld,
    seed: u64,
    index: u64,
) -> Result<Option<PipelineReplicate>> {
    let mut data_rng = substream(seed, StreamDomain::Dataset, index);
    let window = synthesize_window(
        &world.truth,
        scenario.outlier_rate_per_km,
        scenario.window_duration,
        scenario.count_mode,
        &mut data_rng,
    )?;
    let labels = window.truth().expect("synthesized windows carry truth");
    let true_outliers: Vec<f64> = window
        .positions()
        .iter()
        .zip(labels)
        .filter(|(_, l)| **l == Label::Outlier)
        .map(|(&s, _)| s)
        .collect();
    if true_outliers.is_empty() {
        return Ok(None);
    }

    let mut mean_rng = substream(seed, StreamDomain::Classify, index);
    let mut second_rng = mean_rng.clone();
    let mean_verdicts = classify(&window, &world.count_model, &world.mean_only, &mut mean_rng)?;
    let second_verdicts = classify(
        &window,
        &world.count_model,
        &world.second_order,
        &mut second_rng,
    )?;
    let flagged_of = |verdicts: &[bool]| -> Vec<f64> {
        window
            .positions()
            .iter()
            .zip(verdicts)
            .filter(|(_, v)| **v)
            .map(|(&s, _)| s)
            .collect()
    };
    let mean_flagged = flagged_of(&mean_verdicts);
    let second_flagged = flagged_of(&second_verdicts);

    let mean_rate = place_and_score(scenario, &mean_flagged, &true_outliers)?;
    let second_rate = place_and_score(scenario, &second_flagged, &true_outliers)?;
    let oracle_rate = place_and_score(scenario, &true_outliers, &true_outliers)?;

    let mean_hits = count_flagged_outliers(labels, &mean_verdicts);
    let second_hits = count_flagged_outliers(labels, &second_verdicts);
    Ok(Some(PipelineReplicate {
        replication: index as usize,
        arrivals: window.len(),
        true_outliers: true_outliers.len(),
        mean_only_flagged: mean_flagged.len(),
        second_order_flagged: second_flagged.len(),
        mean_only_success: mean_hits as f64 / true_outliers.len() as f64,
        second_order_success: second_hits as f64 / true_outliers.len() as f64,
        mean_only_rate: mean_rate,
        second_order_rate: second_rate,
        oracle_rate,
    }))
}

/// Run the full synthesize-classify-refit-place-score chain once per curve
/// (plus the truth-fed oracle) for each of `replications` windows.
pub fn pipeline_comparison(
    scenario: &ExperimentScenario,
    replications: usize,
    seed: u64,
) -> Result<PipelineSummary> {
    scenario.validate()?;
    if replications < MIN_PIPELINE_REPLICATIONS {
        return Err(Error::invalid(format!(
            "pipeline comparison needs at least {MIN_PIPELINE_REPLICATIONS} replications, got {replications}"
        )));
    }
    let world = build_world(scenario, seed)?;
    let rows: Vec<Result<Option<PipelineReplicate>>> = (0..replications)
        .into_par_iter()
        .map(|i| run_pipeline_replication(scenario, &world, seed, i as u64))
        .collect();

    let mut mean_stats = RunningStats::default();
    let mut second_stats = RunningStats::default();
    let mut oracle_stats = RunningStats::default();
    let mut diff_stats = RunningStats::default();
    let mut trace = Vec::new();
    let mut skipped = 0usize;
    for row in rows {
        match row? {
            Some(rep) => {
                mean_stats.push(rep.mean_only_rate);
                second_stats.push(rep.second_order_rate);
                oracle_stats.push(rep.oracle_rate);
                diff_stats.push(rep.second_order_rate - rep.mean_only_rate);
                trace.push(rep);
            }
            None => skipped += 1,
        }
    }
    if trace.is_empty() {
        return Err(Error::UndefinedRate(
            "no synthesized window held a true outlier".to_string(),
        ));
    }
    let mean_branch = mean_stats.branch();
    let diff_branch = diff_stats.branch();
    let relative = if mean_branch.mean > 0.0 {
        Some(100.0 * diff_branch.mean / mean_branch.mean)
    } else {
        None
    };
    Ok(PipelineSummary {
        replications,
        scored: trace.len(),
        skipped_windows: skipped,
        history_arrivals: world.history_arrivals,
        mean_only: mean_branch,
        second_order: second_stats.branch(),
        oracle: oracle_stats.branch(),
        absolute_improvement: diff_branch,
        relative_improvement_percent: relative,
        trace,
    })
}
