//! TOML run configuration: schema, defaults, and conversion into core types.
//!
//! The file is strict — unknown fields and missing required sections are
//! schema errors — so a typo fails fast with a field-level message instead
//! of silently running with a default.

use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use serde::Deserialize;

use coxwatch_core::evaluation::ExperimentScenario;
use coxwatch_core::ingest::LineSegmentSpec;
use coxwatch_core::placement::DetectionModel;
use coxwatch_core::synthesis::CountMode;
use coxwatch_core::{Error, MaternParams, Result, SpatialGrid};

/// Top-level schema of a run configuration file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub prior: PriorConfig,
    pub outliers: OutlierConfig,
    pub detection: DetectionConfig,
    pub truth: TruthConfig,
    #[serde(default)]
    pub count_model: CountModelConfig,
    #[serde(default)]
    pub gap: GapConfig,
    #[serde(default)]
    pub experiment: ExperimentConfig,
    #[serde(default)]
    pub data: Option<DataConfig>,
    #[serde(default)]
    pub run: RunDefaults,
}

/// `[grid]`: the discretized 1-D corridor.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Corridor length in kilometers.
    pub length_km: f64,
    /// Number of equal cells the corridor is split into.
    pub cells: usize,
}

/// `[prior]`: Matérn covariance of the latent log-intensity.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    /// Marginal variance (kernel value at distance zero).
    pub marginal_variance: f64,
    /// Smoothness; sample paths are `ceil(smoothness) - 1` times
    /// differentiable.
    pub smoothness: f64,
    /// Practical range in kilometers.
    pub range_km: f64,
}

/// `[outliers]`: the commission-outlier process.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutlierConfig {
    /// True uniform outlier rate, arrivals per km per unit time.
    pub rate_per_km: f64,
    /// Expected total outlier arrivals used to initialize the assumed
    /// outlier intensity before any data-driven re-fit.
    pub initial_expected_arrivals: f64,
}

/// `[detection]`: sensor response model and array size.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionConfig {
    /// Peak detection probability of a co-located sensor.
    pub rho: f64,
    /// Length scale (km) of the squared-exponential response falloff.
    pub sigma_l: f64,
    /// Number of sensors to place.
    pub sensors: usize,
    /// Surveillance horizon in the corridor's unit time.
    #[serde(default = "default_horizon")]
    pub horizon: f64,
}

fn default_horizon() -> f64 {
    1.0
}

/// `[truth]`: the synthetic ground-truth world used by every subcommand
/// that does not ingest external data.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthConfig {
    /// Constant part of the latent log-intensity mean.
    pub log_mean: f64,
    /// Amplitude of one sine cycle added to the log-mean across the
    /// corridor; zero gives a flat profile.
    #[serde(default)]
    pub log_mean_sine_amplitude: f64,
    /// Time units of history synthesized for fitting the normal posterior.
    pub history_duration: f64,
    /// Length of each evaluation window, in the same time units.
    pub window_duration: f64,
    /// Whether synthetic windows carry expected or Poisson arrival counts.
    #[serde(default)]
    pub count_mode: CountModeConfig,
}

/// Arrival-count regime for synthetic windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CountModeConfig {
    #[default]
    Poisson,
    Expected,
}

impl From<CountModeConfig> for CountMode {
    fn from(mode: CountModeConfig) -> Self {
        match mode {
            CountModeConfig::Poisson => CountMode::Poisson,
            CountModeConfig::Expected => CountMode::Expected,
        }
    }
}

/// `[count_model]`: the arrival-count gate of the two-stage classifier.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountModelConfig {
    /// Posterior draws behind the lognormal count approximation.
    pub draws: usize,
}

impl Default for CountModelConfig {
    fn default() -> Self {
        Self { draws: 512 }
    }
}

/// `[gap]`: Monte Carlo effort for the approximation-error analysis.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GapConfig {
    /// Oracle draws per cell.
    pub mc_draws: usize,
}

impl Default for GapConfig {
    fn default() -> Self {
        Self { mc_draws: 50_000 }
    }
}

/// `[experiment]`: replication counts for the evaluation subcommands.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Windows scored by `evaluate`.
    pub classification_iterations: usize,
    /// End-to-end replications scored by `pipeline`.
    pub pipeline_replications: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            classification_iterations: 10_000,
            pipeline_replications: 200,
        }
    }
}

/// `[data]`: external position-report ingestion for `fit`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Position-report CSV with MMSI/BaseDateTime/LAT/LON columns.
    pub csv: PathBuf,
    /// Segment endpoints as `[latitude, longitude]` in degrees.
    pub endpoint_a: [f64; 2],
    pub endpoint_b: [f64; 2],
    /// Perpendicular distance from the segment still counted as in-corridor.
    pub corridor_halfwidth_km: f64,
    /// Half-open observation window `[start, end)`; RFC 3339 or
    /// `YYYY-MM-DD HH:MM:SS`.
    pub window_start: String,
    pub window_end: String,
}

/// `[run]`: seed and output directory defaults, overridable on the command
/// line.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunDefaults {
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for RunDefaults {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    /// Parse and validate a TOML configuration file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::InvalidArgument(format!("cannot read config {}: {e}", path.display()))
        })?;
        let config: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::InvalidArgument(format!("config {}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    /// Cross-field checks beyond what deserialization enforces.
    pub fn validate(&self) -> Result<()> {
        // Constructor validation covers grid, prior, and detection values.
        self.spatial_grid()?;
        self.matern()?;
        self.detection_model()?;
        for (value, what) in [
            (self.outliers.rate_per_km, "outliers.rate_per_km"),
            (
                self.outliers.initial_expected_arrivals,
                "outliers.initial_expected_arrivals",
            ),
        ] {
            if !value.is_finite() || value <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "{what} must be positive, got {value}"
                )));
            }
        }
        if let Some(data) = &self.data {
            LineSegmentSpec::new(
                (data.endpoint_a[0], data.endpoint_a[1]),
                (data.endpoint_b[0], data.endpoint_b[1]),
                data.corridor_halfwidth_km,
            )?;
            let (start, end) = self.data_window()?;
            if start >= end {
                return Err(Error::InvalidArgument(format!(
                    "data.window_start {start} is not before data.window_end {end}"
                )));
            }
        }
        Ok(())
    }

    pub fn spatial_grid(&self) -> Result<SpatialGrid> {
        SpatialGrid::new(self.grid.length_km, self.grid.cells)
    }

    pub fn matern(&self) -> Result<MaternParams> {
        MaternParams::new(
            self.prior.marginal_variance,
            self.prior.smoothness,
            self.prior.range_km,
        )
    }

    pub fn detection_model(&self) -> Result<DetectionModel> {
        DetectionModel::new(
            self.detection.rho,
            self.detection.sigma_l,
            self.detection.horizon,
        )
    }

    /// Assumed outlier rate per km implied by the initialization count.
    pub fn assumed_outlier_rate(&self) -> f64 {
        self.outliers.initial_expected_arrivals / self.grid.length_km
    }

    /// The observation window of `[data]`, parsed.
    pub fn data_window(&self) -> Result<(NaiveDateTime, NaiveDateTime)> {
        let data = self
            .data
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("config has no [data] section".to_string()))?;
        let parse = |field: &str, text: &str| {
            coxwatch_core::ingest::parse_timestamp(text).ok_or_else(|| {
                Error::InvalidArgument(format!("data.{field}: unparseable timestamp {text:?}"))
            })
        };
        Ok((
            parse("window_start", &data.window_start)?,
            parse("window_end", &data.window_end)?,
        ))
    }

    /// The synthetic-world scenario shared by `classify`, `evaluate`, and
    /// `pipeline`.
    pub fn scenario(&self) -> Result<ExperimentScenario> {
        let scenario = ExperimentScenario {
            grid: self.spatial_grid()?,
            prior: self.matern()?,
            truth_log_mean: self.truth.log_mean,
            truth_log_mean_amplitude: self.truth.log_mean_sine_amplitude,
            history_duration: self.truth.history_duration,
            window_duration: self.truth.window_duration,
            outlier_rate_per_km: self.outliers.rate_per_km,
            assumed_outlier_rate_per_km: self.assumed_outlier_rate(),
            count_model_draws: self.count_model.draws,
            count_mode: self.truth.count_mode.into(),
            detection: self.detection_model()?,
            n_sensors: self.detection.sensors,
        };
        scenario.validate()?;
        Ok(scenario)
    }
}
