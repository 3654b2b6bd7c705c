//! One function per subcommand. Each reads only the parsed configuration
//! and the seed, writes its artifacts through the [`OutputSession`], and
//! prints a short human summary; the caller commits or discards the session.

use serde::Serialize;

use coxwatch_core::classify::classify;
use coxwatch_core::evaluation;
use coxwatch_core::gap::analyze_gap;
use coxwatch_core::inference::{empirical_log_rate, fit_posterior, BinnedCounts, PosteriorFit};
use coxwatch_core::ingest::{parse_records_path, project_to_segment, LineSegmentSpec};
use coxwatch_core::placement::{greedy_place, PlacementEvaluator};
use coxwatch_core::rng::{substream, StreamDomain};
use coxwatch_core::synthesis::synthesize_window;
use coxwatch_core::{ClassificationRates, Error, GaussianField, Label, Result, SpatialGrid};

use crate::config::RunConfig;
use crate::outputs::OutputSession;

/// Per-cell posterior row of `posterior_summary.csv`.
#[derive(Debug, Serialize)]
struct PosteriorCell {
    s_km: f64,
    log_mean: f64,
    log_sd: f64,
    mean_intensity: f64,
    sd_intensity: f64,
    /// Pointwise 95% band for the intensity, lognormal in the posterior.
    lower_95: f64,
    upper_95: f64,
}

/// Fit diagnostics of `posterior.json`.
#[derive(Debug, Serialize)]
struct FitReport {
    /// `"synthetic"` (history drawn from the configured truth) or `"data"`
    /// (external position reports).
    mode: &'static str,
    rate_unit: String,
    arrivals: usize,
    fit_duration: f64,
    newton_iterations: usize,
    gradient_norm: f64,
    objective_initial: f64,
    objective_final: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    ingest: Option<IngestReport>,
}

/// Ingestion counters for data-mode fits.
#[derive(Debug, Serialize)]
struct IngestReport {
    rows_parsed: usize,
    rows_skipped: usize,
    vessels_in_window: usize,
    vessels_outside_corridor: usize,
    segment_length_km: f64,
}

fn posterior_summary_rows(field: &GaussianField) -> Vec<PosteriorCell> {
    let stats = field.intensity_stats();
    let centers = field.grid().cell_centers();
    (0..centers.len())
        .map(|i| {
            let log_mean = field.log_mean()[i];
            let log_sd = field.cov()[(i, i)].sqrt();
            PosteriorCell {
                s_km: centers[i],
                log_mean,
                log_sd,
                mean_intensity: stats[i].mean,
                sd_intensity: stats[i].sd,
                lower_95: (log_mean - 1.96 * log_sd).exp(),
                upper_95: (log_mean + 1.96 * log_sd).exp(),
            }
        })
        .collect()
}

fn write_csv_rows<T: Serialize>(session: &mut OutputSession, name: &str, rows: &[T]) -> Result<()> {
    let file = session.file(name)?;
    let mut writer = csv::Writer::from_writer(file);
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| Error::Format(format!("writing {name}: {e}")))?;
    }
    writer
        .flush()
        .map_err(|e| Error::Format(format!("writing {name}: {e}")))?;
    Ok(())
}

/// `fit`: estimate the normal-activity posterior and summarize it per cell.
///
/// With a `[data]` section the history is ingested from position reports
/// projected onto the configured segment; otherwise a history record is
/// synthesized from the configured truth, exactly as the experiment
/// harnesses do.
pub fn fit(config: &RunConfig, seed: u64, session: &mut OutputSession) -> Result<()> {
    let (posterior, report) = match &config.data {
        Some(_) => fit_from_data(config, session)?,
        None => fit_from_synthetic(config, seed)?,
    };
    write_csv_rows(
        session,
        "posterior_summary.csv",
        &posterior_summary_rows(&posterior.field),
    )?;
    session.write_json("posterior.json", &report)?;
    println!(
        "fit: {} arrivals over {} {}; Newton converged in {} iterations (grad {:.3e})",
        report.arrivals,
        report.fit_duration,
        if report.mode == "data" {
            "hours"
        } else {
            "time units"
        },
        report.newton_iterations,
        report.gradient_norm,
    );
    Ok(())
}

fn fit_from_synthetic(config: &RunConfig, seed: u64) -> Result<(PosteriorFit, FitReport)> {
    let scenario = config.scenario()?;
    let world = evaluation::build_world(&scenario, seed)?;
    let trace = &world.posterior.objective_trace;
    let report = FitReport {
        mode: "synthetic",
        rate_unit: "arrivals per km per unit time".to_string(),
        arrivals: world.history_arrivals,
        fit_duration: scenario.history_duration,
        newton_iterations: world.posterior.iterations,
        gradient_norm: world.posterior.grad_norm,
        objective_initial: trace.first().copied().unwrap_or(f64::NAN),
        objective_final: trace.last().copied().unwrap_or(f64::NAN),
        ingest: None,
    };
    Ok((world.posterior, report))
}

fn fit_from_data(
    config: &RunConfig,
    session: &mut OutputSession,
) -> Result<(PosteriorFit, FitReport)> {
    let data = config.data.as_ref().expect("callers check for [data]");
    let spec = LineSegmentSpec::new(
        (data.endpoint_a[0], data.endpoint_a[1]),
        (data.endpoint_b[0], data.endpoint_b[1]),
        data.corridor_halfwidth_km,
    )?;
    // The corridor length is a geodesic measurement, not a free knob: the
    // configured grid length must agree with the segment to within one cell.
    let nominal = config.spatial_grid()?;
    if (nominal.length_km() - spec.length_km()).abs() > nominal.cell_width() {
        return Err(Error::InvalidArgument(format!(
            "grid.length_km = {} but the [data] segment measures {:.6} km; \
             set grid.length_km to the segment length",
            nominal.length_km(),
            spec.length_km()
        )));
    }
    let grid = SpatialGrid::new(spec.length_km(), nominal.n_cells())?;

    let parsed = parse_records_path(&data.csv).map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(
            io.kind(),
            format!("{}: {io}", data.csv.display()),
        )),
        other => other,
    })?;
    let (start, end) = config.data_window()?;
    let outcome = project_to_segment(&parsed.records, &spec, start, end)?;
    outcome.write_csv(session.file("arrivals.csv")?)?;

    let counts =
        BinnedCounts::from_positions(&grid, outcome.arrivals.positions(), outcome.duration_hours)?;
    let prior = GaussianField::from_matern_const_mean(
        grid.clone(),
        empirical_log_rate(&grid, &counts),
        &config.matern()?,
    )?;
    let posterior = fit_posterior(&prior, &counts)?;
    let trace = &posterior.objective_trace;
    let report = FitReport {
        mode: "data",
        rate_unit: "arrivals per km per hour".to_string(),
        arrivals: outcome.arrivals.len(),
        fit_duration: outcome.duration_hours,
        newton_iterations: posterior.iterations,
        gradient_norm: posterior.grad_norm,
        objective_initial: trace.first().copied().unwrap_or(f64::NAN),
        objective_final: trace.last().copied().unwrap_or(f64::NAN),
        ingest: Some(IngestReport {
            rows_parsed: parsed.records.len(),
            rows_skipped: parsed.skipped_rows,
            vessels_in_window: outcome.vessels_in_window,
            vessels_outside_corridor: outcome.vessels_outside_corridor,
            segment_length_km: spec.length_km(),
        }),
    };
    Ok((posterior, report))
}

/// Summary counters of `synth_summary.json`.
#[derive(Debug, Serialize)]
struct SynthReport {
    arrivals: usize,
    normals: usize,
    true_outliers: usize,
    expected_outliers: f64,
    truth_expected_arrivals: f64,
    window_duration: f64,
}

/// `synth`: draw one labeled evaluation window from the configured truth.
pub fn synth(config: &RunConfig, seed: u64, session: &mut OutputSession) -> Result<()> {
    let scenario = config.scenario()?;
    let latent = evaluation::truth_field(&scenario)?;
    let mut truth_rng = substream(seed, StreamDomain::Truth, 0);
    let truth = latent.sample_intensity(&mut truth_rng);
    let mut window_rng = substream(seed, StreamDomain::Dataset, 0);
    let window = synthesize_window(
        &truth,
        scenario.outlier_rate_per_km,
        scenario.window_duration,
        scenario.count_mode,
        &mut window_rng,
    )?;
    window.write_csv(session.file("dataset.csv")?)?;
    let true_outliers = window.true_outlier_count().unwrap_or(0);
    let report = SynthReport {
        arrivals: window.len(),
        normals: window.len() - true_outliers,
        true_outliers,
        expected_outliers: scenario.outlier_rate_per_km
            * scenario.grid.length_km()
            * scenario.window_duration,
        truth_expected_arrivals: truth.total_rate() * scenario.window_duration,
        window_duration: scenario.window_duration,
    };
    session.write_json("synth_summary.json", &report)?;
    println!(
        "synth: {} arrivals ({} normal, {} outlier) over {} time units",
        report.arrivals, report.normals, report.true_outliers, report.window_duration
    );
    Ok(())
}

/// Per-arrival verdict row of `classified.csv`.
#[derive(Debug, Serialize)]
struct ClassifiedRow {
    s_km: f64,
    truth: &'static str,
    mean_only_flag: bool,
    second_order_flag: bool,
}

/// Branch performance plus run context, `classify_summary.json`.
#[derive(Debug, Serialize)]
struct ClassifyReport {
    arrivals: usize,
    true_outliers: usize,
    history_arrivals: usize,
    gate_probability: f64,
    count_model: CountModelReport,
    mean_only: ClassificationRates,
    second_order: ClassificationRates,
}

#[derive(Debug, Serialize)]
struct CountModelReport {
    mu_n: f64,
    sigma_n: f64,
    unit_time: f64,
}

/// `classify`: run the two-stage rule over one synthetic window with both
/// probability curves on identical randomness.
///
/// The window and classifier streams are the ones the `evaluate` experiment
/// uses for its first iteration, so this is a single-window drill-down of
/// that experiment.
pub fn classify_cmd(config: &RunConfig, seed: u64, session: &mut OutputSession) -> Result<()> {
    let scenario = config.scenario()?;
    let world = evaluation::build_world(&scenario, seed)?;
    let mut window_rng = substream(seed, StreamDomain::Dataset, 0);
    let window = synthesize_window(
        &world.truth,
        scenario.outlier_rate_per_km,
        scenario.window_duration,
        scenario.count_mode,
        &mut window_rng,
    )?;

    let classify_rng = substream(seed, StreamDomain::Classify, 0);
    let mean_flags = classify(
        &window,
        &world.count_model,
        &world.mean_only,
        &mut classify_rng.clone(),
    )?;
    let second_flags = classify(
        &window,
        &world.count_model,
        &world.second_order,
        &mut classify_rng.clone(),
    )?;

    let truth_labels = window.truth().expect("synthesized windows carry truth");
    let rows: Vec<ClassifiedRow> = (0..window.len())
        .map(|i| ClassifiedRow {
            s_km: window.positions()[i],
            truth: match truth_labels[i] {
                Label::Normal => "normal",
                Label::Outlier => "outlier",
            },
            mean_only_flag: mean_flags[i],
            second_order_flag: second_flags[i],
        })
        .collect();
    write_csv_rows(session, "classified.csv", &rows)?;

    let rates = |flags: &[bool]| -> Result<ClassificationRates> {
        let mut set = window.clone();
        set.set_classified(flags.to_vec())?;
        coxwatch_core::classify::classification_rates(&set)
    };
    let report = ClassifyReport {
        arrivals: window.len(),
        true_outliers: window.true_outlier_count().unwrap_or(0),
        history_arrivals: world.history_arrivals,
        gate_probability: world.count_model.gate_probability(window.len()),
        count_model: CountModelReport {
            mu_n: world.count_model.mu_n,
            sigma_n: world.count_model.sigma_n,
            unit_time: world.count_model.unit_time,
        },
        mean_only: rates(&mean_flags)?,
        second_order: rates(&second_flags)?,
    };
    session.write_json("classify_summary.json", &report)?;
    println!(
        "classify: {} arrivals, {} true outliers; success {:.3} (mean-only) vs {:.3} (second-order)",
        report.arrivals,
        report.true_outliers,
        report.mean_only.success_rate,
        report.second_order.success_rate,
    );
    Ok(())
}

/// Aggregates of `gap_summary.json`.
#[derive(Debug, Serialize)]
struct GapSummary {
    mc_draws: usize,
    mean_abs_gap_mean_only: f64,
    mean_abs_gap_second_order: f64,
    reduction_percent: Option<f64>,
    cells_outside_bounds_3se: usize,
}

/// `gap`: measure both curves' approximation errors against a Monte Carlo
/// oracle on the configured latent field, cell by cell.
pub fn gap(config: &RunConfig, seed: u64, session: &mut OutputSession) -> Result<()> {
    let scenario = config.scenario()?;
    let field = evaluation::truth_field(&scenario)?;
    let mut rng = substream(seed, StreamDomain::McOracle, 0);
    let report = analyze_gap(
        &field,
        config.outliers.rate_per_km,
        config.gap.mc_draws,
        &mut rng,
    )?;
    report.write_csv(session.file("gap.csv")?)?;
    let summary = GapSummary {
        mc_draws: report.mc_draws,
        mean_abs_gap_mean_only: report.mean_abs_gap_mean_only,
        mean_abs_gap_second_order: report.mean_abs_gap_second_order,
        reduction_percent: report.reduction_percent,
        cells_outside_bounds_3se: report.bound_violations(3.0).len(),
    };
    session.write_json("gap_summary.json", &summary)?;
    match summary.reduction_percent {
        Some(reduction) => println!(
            "gap: mean |error| {:.6} (mean-only) vs {:.6} (second-order), {:.2}% reduction",
            summary.mean_abs_gap_mean_only, summary.mean_abs_gap_second_order, reduction
        ),
        None => println!("gap: mean-only curve is already exact on this field"),
    }
    Ok(())
}

/// One greedy round of `sensors.csv`.
#[derive(Debug, Serialize)]
struct SensorRow {
    step: usize,
    position_km: f64,
    objective: f64,
}

/// Placement record of `placement.json`.
#[derive(Debug, Serialize)]
struct PlacementReport {
    sensor_positions_km: Vec<f64>,
    objective_no_sensors: f64,
    expected_undetected: f64,
    variance_undetected: f64,
    objective: f64,
    horizon: f64,
    candidates: usize,
}

/// `place`: greedily place the configured number of sensors against the
/// assumed outlier intensity, maximizing the void-probability objective.
pub fn place(config: &RunConfig, _seed: u64, session: &mut OutputSession) -> Result<()> {
    let grid = config.spatial_grid()?;
    let prior = config.matern()?;
    // Uniform assumed outlier intensity: expected arrivals spread over the
    // corridor, so exp(log_mean + variance/2) = initial / length.
    let log_mean = (config.outliers.initial_expected_arrivals / grid.length_km()).ln()
        - 0.5 * prior.marginal_variance;
    let field = GaussianField::from_matern_const_mean(grid.clone(), log_mean, &prior)?;
    let model = config.detection_model()?;
    let placement = greedy_place(&field, model, grid.cell_centers(), config.detection.sensors)?;

    let rows: Vec<SensorRow> = placement
        .steps
        .iter()
        .enumerate()
        .map(|(i, step)| SensorRow {
            step: i + 1,
            position_km: step.position,
            objective: step.objective,
        })
        .collect();
    write_csv_rows(session, "sensors.csv", &rows)?;

    let baseline = PlacementEvaluator::new(&field, model)?.objective(&[]);
    let report = PlacementReport {
        sensor_positions_km: placement.sensors.positions().to_vec(),
        objective_no_sensors: baseline.objective,
        expected_undetected: placement.report.expected_undetected,
        variance_undetected: placement.report.variance,
        objective: placement.report.objective,
        horizon: placement.report.horizon,
        candidates: grid.n_cells(),
    };
    session.write_json("placement.json", &report)?;
    println!(
        "place: {} sensors, void probability {:.6} (was {:.6} unsensored), E[undetected] {:.4}",
        report.sensor_positions_km.len(),
        report.objective,
        report.objective_no_sensors,
        report.expected_undetected,
    );
    Ok(())
}

/// `evaluate`: the paired classification experiment over many windows.
pub fn evaluate(config: &RunConfig, seed: u64, session: &mut OutputSession) -> Result<()> {
    let scenario = config.scenario()?;
    let summary = evaluation::classification_experiment(
        &scenario,
        config.experiment.classification_iterations,
        seed,
    )?;
    write_csv_rows(session, "classification_trace.csv", &summary.trace)?;
    session.write_json("classification_summary.json", &summary)?;
    println!(
        "evaluate: {} windows scored; success {:.4} (mean-only) vs {:.4} (second-order), \
         difference {:.4} +- {:.4}",
        summary.scored,
        summary.mean_only.mean,
        summary.second_order.mean,
        summary.difference.mean,
        summary.difference.std_error,
    );
    Ok(())
}

/// `pipeline`: the end-to-end replication study — synthesize, classify,
/// re-fit the outlier intensity, place sensors, score detection — per curve
/// plus the oracle branch.
pub fn pipeline(config: &RunConfig, seed: u64, session: &mut OutputSession) -> Result<()> {
    let scenario = config.scenario()?;
    let summary =
        evaluation::pipeline_comparison(&scenario, config.experiment.pipeline_replications, seed)?;
    write_csv_rows(session, "pipeline_trace.csv", &summary.trace)?;
    session.write_json("pipeline_summary.json", &summary)?;
    println!(
        "pipeline: {} replications; detection {:.4} (mean-only) vs {:.4} (second-order) \
         vs {:.4} (oracle)",
        summary.scored, summary.mean_only.mean, summary.second_order.mean, summary.oracle.mean,
    );
    Ok(())
}
