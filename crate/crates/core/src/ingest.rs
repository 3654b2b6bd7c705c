//! AIS-style CSV ingestion: parse vessel position reports, window them in
//! time, and project them onto a 1-D surveillance corridor.
//!
//! An "arrival" is each vessel's **first** in-window position report that
//! falls inside the corridor (perpendicular distance to the configured line
//! segment at most the corridor half-width). AIS tracks carry many fixes
//! per vessel; reducing a track to its first in-corridor fix is this
//! module's definition of the arrival event, chosen so a vessel loitering
//! on the corridor counts once per window.
//!
//! Geometry runs in a local equirectangular plane centered on the segment
//! (exact enough for corridors of a few tens of km: the projection error is
//! far below a grid cell), while the segment length itself is the
//! great-circle (haversine) distance between the endpoints.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use serde::Serialize;

use crate::arrivals::ArrivalSet;
use crate::error::{Error, Result};

/// IUGG mean Earth radius.
const EARTH_RADIUS_KM: f64 = 6371.0088;

/// One parsed vessel position report.
#[derive(Debug, Clone, PartialEq)]
pub struct AisRecord {
    /// Vessel identifier, kept verbatim (identifiers may carry leading
    /// zeros).
    pub mmsi: String,
    pub timestamp: NaiveDateTime,
    pub latitude: f64,
    pub longitude: f64,
}

/// Output of [`parse_records`]: the typed records plus a count of malformed
/// rows that were skipped rather than treated as fatal.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedRecords {
    pub records: Vec<AisRecord>,
    pub skipped_rows: usize,
}

/// Parse a timestamp in RFC 3339 or `YYYY-MM-DD[T ]HH:MM:SS[.fff]` form;
/// offsets are converted to UTC, naive times are taken as already UTC.
pub fn parse_timestamp(text: &str) -> Option<NaiveDateTime> {
    let text = text.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(text) {
        return Some(dt.naive_utc());
    }
    for format in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(text, format) {
            return Some(dt);
        }
    }
    None
}

/// Parse a CSV stream of position reports.
///
/// The header must contain at least the columns `MMSI`, `BaseDateTime`,
/// `LAT`, and `LON` (matched case-insensitively; extra columns are
/// ignored). Rows that fail to parse — missing fields, malformed
/// timestamps, non-numeric or out-of-range coordinates — are counted and
/// skipped. A completely empty stream yields an empty record list.
pub fn parse_records<R: Read>(reader: R) -> Result<ParsedRecords> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let headers = csv_reader
        .headers()
        .map_err(|e| Error::Format(format!("unreadable CSV header: {e}")))?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        // No header row at all: an empty stream is an empty record list.
        return Ok(ParsedRecords {
            records: Vec::new(),
            skipped_rows: 0,
        });
    }
    let column =
        |name: &str| -> Option<usize> { headers.iter().position(|h| h.eq_ignore_ascii_case(name)) };
    let mut missing = Vec::new();
    let required: Vec<Option<usize>> = ["MMSI", "BaseDateTime", "LAT", "LON"]
        .iter()
        .map(|name| {
            let idx = column(name);
            if idx.is_none() {
                missing.push(*name);
            }
            idx
        })
        .collect();
    if !missing.is_empty() {
        return Err(Error::Format(format!(
            "missing required column(s): {}",
            missing.join(", ")
        )));
    }
    let (mmsi_col, time_col, lat_col, lon_col) = (
        required[0].unwrap(),
        required[1].unwrap(),
        required[2].unwrap(),
        required[3].unwrap(),
    );

    let mut records = Vec::new();
    let mut skipped = 0usize;
    for row in csv_reader.records() {
        let Ok(row) = row else {
            skipped += 1;
            continue;
        };
        let fields = (
            row.get(mmsi_col),
            row.get(time_col).and_then(parse_timestamp),
            row.get(lat_col).and_then(parse_coordinate),
            row.get(lon_col).and_then(parse_coordinate),
        );
        match fields {
            (Some(mmsi), Some(timestamp), Some(latitude), Some(longitude))
                if !mmsi.is_empty() && latitude.abs() <= 90.0 && longitude.abs() <= 180.0 =>
            {
                records.push(AisRecord {
                    mmsi: mmsi.to_string(),
                    timestamp,
                    latitude,
                    longitude,
                });
            }
            _ => skipped += 1,
        }
    }
    Ok(ParsedRecords {
        records,
        skipped_rows: skipped,
    })
}

fn parse_coordinate(text: &str) -> Option<f64> {
    text.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Parse a CSV file of position reports; see [`parse_records`].
pub fn parse_records_path<P: AsRef<Path>>(path: P) -> Result<ParsedRecords> {
    parse_records(std::fs::File::open(path)?)
}

/// The surveillance corridor: a geodesic line segment with a lateral
/// half-width, both in real-world coordinates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LineSegmentSpec {
    endpoint_a: (f64, f64),
    endpoint_b: (f64, f64),
    corridor_halfwidth_km: f64,
    length_km: f64,
}

fn validate_coordinate(point: (f64, f64), name: &str) -> Result<()> {
    let (lat, lon) = point;
    if !lat.is_finite() || lat.abs() > 90.0 || !lon.is_finite() || lon.abs() > 180.0 {
        return Err(Error::invalid(format!(
            "{name} ({lat}, {lon}) is not a valid latitude/longitude pair"
        )));
    }
    Ok(())
}

/// Great-circle distance between two (latitude, longitude) points in km.
fn haversine_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lat_a, lon_a) = (a.0.to_radians(), a.1.to_radians());
    let (lat_b, lon_b) = (b.0.to_radians(), b.1.to_radians());
    let half_dlat = 0.5 * (lat_b - lat_a);
    let half_dlon = 0.5 * (lon_b - lon_a);
    let s = half_dlat.sin().powi(2) + lat_a.cos() * lat_b.cos() * half_dlon.sin().powi(2);
    2.0 * EARTH_RADIUS_KM * s.sqrt().min(1.0).asin()
}

/// Wrap a longitude difference into [-180, 180] degrees.
fn wrap_dlon(dlon: f64) -> f64 {
    let mut d = dlon % 360.0;
    if d > 180.0 {
        d -= 360.0;
    } else if d < -180.0 {
        d += 360.0;
    }
    d
}

impl LineSegmentSpec {
    pub fn new(
        endpoint_a: (f64, f64),
        endpoint_b: (f64, f64),
        corridor_halfwidth_km: f64,
    ) -> Result<Self> {
        validate_coordinate(endpoint_a, "endpoint A")?;
        validate_coordinate(endpoint_b, "endpoint B")?;
        if !corridor_halfwidth_km.is_finite() || corridor_halfwidth_km <= 0.0 {
            return Err(Error::invalid(format!(
                "corridor half-width must be positive, got {corridor_halfwidth_km}"
            )));
        }
        let length_km = haversine_km(endpoint_a, endpoint_b);
        if length_km <= 0.0 {
            return Err(Error::invalid(
                "segment endpoints must be distinct".to_string(),
            ));
        }
        Ok(Self {
            endpoint_a,
            endpoint_b,
            corridor_halfwidth_km,
            length_km,
        })
    }

    pub fn endpoint_a(&self) -> (f64, f64) {
        self.endpoint_a
    }

    pub fn endpoint_b(&self) -> (f64, f64) {
        self.endpoint_b
    }

    pub fn corridor_halfwidth_km(&self) -> f64 {
        self.corridor_halfwidth_km
    }

    /// Great-circle length of the segment.
    pub fn length_km(&self) -> f64 {
        self.length_km
    }

    /// Local equirectangular coordinates (km east, km north) of a point,
    /// centered on the segment midpoint.
    fn to_plane(&self, lat: f64, lon: f64) -> (f64, f64) {
        let ref_lat = 0.5 * (self.endpoint_a.0 + self.endpoint_b.0);
        let ref_lon = self.endpoint_a.1 + 0.5 * wrap_dlon(self.endpoint_b.1 - self.endpoint_a.1);
        let x =
            EARTH_RADIUS_KM * wrap_dlon(lon - ref_lon).to_radians() * ref_lat.to_radians().cos();
        let y = EARTH_RADIUS_KM * (lat - ref_lat).to_radians();
        (x, y)
    }

    /// Arclength coordinate (km from endpoint A) of a point's foot on the
    /// segment, or `None` when the point lies farther from the segment than
    /// the corridor half-width.
    pub fn project(&self, lat: f64, lon: f64) -> Option<f64> {
        let (ax, ay) = self.to_plane(self.endpoint_a.0, self.endpoint_a.1);
        let (bx, by) = self.to_plane(self.endpoint_b.0, self.endpoint_b.1);
        let (px, py) = self.to_plane(lat, lon);
        let (abx, aby) = (bx - ax, by - ay);
        let norm2 = abx * abx + aby * aby;
        let t = (((px - ax) * abx + (py - ay) * aby) / norm2).clamp(0.0, 1.0);
        let (fx, fy) = (ax + t * abx, ay + t * aby);
        let distance = (px - fx).hypot(py - fy);
        if distance <= self.corridor_halfwidth_km {
            Some(t * self.length_km)
        } else {
            None
        }
    }
}

/// One projected arrival: the vessel's first in-corridor fix of the window.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedArrival {
    pub position_km: f64,
    pub mmsi: String,
    pub timestamp: NaiveDateTime,
}

/// Output of [`project_to_segment`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionOutcome {
    /// One arrival per vessel, ordered by (timestamp, vessel id).
    pub entries: Vec<ProjectedArrival>,
    /// The same arrivals as a bare position set on `[0, length_km]`.
    pub arrivals: ArrivalSet,
    /// Window length in hours (the unit time the fit downstream uses).
    pub duration_hours: f64,
    /// Distinct vessels with at least one report inside the window.
    pub vessels_in_window: usize,
    /// Vessels in the window none of whose reports entered the corridor.
    pub vessels_outside_corridor: usize,
}

impl ProjectionOutcome {
    /// Write the canonical arrivals CSV: `position_km,mmsi,timestamp`.
    pub fn write_csv<W: Write>(&self, mut writer: W) -> Result<()> {
        writeln!(writer, "position_km,mmsi,timestamp")?;
        for entry in &self.entries {
            writeln!(
                writer,
                "{},{},{}",
                entry.position_km,
                entry.mmsi,
                entry.timestamp.format("%Y-%m-%dT%H:%M:%S%.f")
            )?;
        }
        Ok(())
    }
}

/// Reduce position reports to one arrival per vessel over a half-open time
/// window `[window_start, window_end)`.
///
/// Each vessel's reports inside the window are scanned in timestamp order
/// (ties keep input order); the first one within the corridor becomes the
/// vessel's arrival, positioned at its foot point's arclength coordinate.
pub fn project_to_segment(
    records: &[AisRecord],
    spec: &LineSegmentSpec,
    window_start: NaiveDateTime,
    window_end: NaiveDateTime,
) -> Result<ProjectionOutcome> {
    if window_end <= window_start {
        return Err(Error::invalid(format!(
            "time window [{window_start}, {window_end}) is empty"
        )));
    }

    // Group in-window reports per vessel, keeping input order within ties.
    let mut per_vessel: HashMap<&str, Vec<(NaiveDateTime, f64, f64)>> = HashMap::new();
    for record in records {
        if record.timestamp >= window_start && record.timestamp < window_end {
            per_vessel.entry(record.mmsi.as_str()).or_default().push((
                record.timestamp,
                record.latitude,
                record.longitude,
            ));
        }
    }

    let vessels_in_window = per_vessel.len();
    let mut entries: Vec<ProjectedArrival> = Vec::new();
    let mut outside = 0usize;
    for (mmsi, mut fixes) in per_vessel {
        fixes.sort_by_key(|(t, _, _)| *t);
        match fixes
            .iter()
            .find_map(|&(t, lat, lon)| spec.project(lat, lon).map(|pos| (t, pos)))
        {
            Some((timestamp, position_km)) => entries.push(ProjectedArrival {
                position_km,
                mmsi: mmsi.to_string(),
                timestamp,
            }),
            None => outside += 1,
        }
    }
    entries.sort_by(|a, b| (a.timestamp, a.mmsi.as_str()).cmp(&(b.timestamp, b.mmsi.as_str())));

    let positions: Vec<f64> = entries.iter().map(|e| e.position_km).collect();
    let arrivals = ArrivalSet::new(positions, spec.length_km())?;
    let duration_hours = (window_end - window_start).num_milliseconds() as f64 / 3_600_000.0;
    Ok(ProjectionOutcome {
        entries,
        arrivals,
        duration_hours,
        vessels_in_window,
        vessels_outside_corridor: outside,
    })
}
