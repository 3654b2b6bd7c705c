//! Point arrivals on the corridor, with optional truth and classifier labels.
//!
//! An [`ArrivalSet`] is an ordered list of positions in `[0, L]` km. Order is
//! significant: the classifier consumes randomness per arrival in sequence,
//! so the order is part of the dataset. Truth labels travel with synthetic
//! data; classifier verdicts are attached after the fact. Sets round-trip
//! through a small CSV schema (`s_km,truth,classified`).

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ground-truth provenance of a synthetic arrival.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    /// Drawn from the normal-activity process.
    Normal,
    /// Drawn from the uniform commission-outlier process.
    Outlier,
}

/// An ordered collection of arrival positions with optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalSet {
    positions: Vec<f64>,
    truth: Option<Vec<Label>>,
    classified: Option<Vec<bool>>,
    domain_length_km: f64,
}

impl ArrivalSet {
    pub fn new(positions: Vec<f64>, domain_length_km: f64) -> Result<Self> {
        if !domain_length_km.is_finite() || domain_length_km <= 0.0 {
            return Err(Error::invalid(format!(
                "domain length must be positive, got {domain_length_km}"
            )));
        }
        for &s in &positions {
            if !s.is_finite() || s < 0.0 || s > domain_length_km {
                return Err(Error::OutOfDomain {
                    position: s,
                    length_km: domain_length_km,
                });
            }
        }
        Ok(Self {
            positions,
            truth: None,
            classified: None,
            domain_length_km,
        })
    }

    pub fn with_truth(mut self, truth: Vec<Label>) -> Result<Self> {
        if truth.len() != self.positions.len() {
            return Err(Error::invalid(format!(
                "{} truth labels for {} arrivals",
                truth.len(),
                self.positions.len()
            )));
        }
        self.truth = Some(truth);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn truth(&self) -> Option<&[Label]> {
        self.truth.as_deref()
    }

    pub fn classified(&self) -> Option<&[bool]> {
        self.classified.as_deref()
    }

    pub fn domain_length_km(&self) -> f64 {
        self.domain_length_km
    }

    /// Attach classifier verdicts (`true` = flagged as outlier).
    pub fn set_classified(&mut self, classified: Vec<bool>) -> Result<()> {
        if classified.len() != self.positions.len() {
            return Err(Error::invalid(format!(
                "{} verdicts for {} arrivals",
                classified.len(),
                self.positions.len()
            )));
        }
        self.classified = Some(classified);
        Ok(())
    }

    /// Number of arrivals whose truth label is `Outlier`.
    pub fn true_outlier_count(&self) -> Option<usize> {
        self.truth
            .as_ref()
            .map(|t| t.iter().filter(|l| **l == Label::Outlier).count())
    }

    /// Positions the classifier flagged, in arrival order.
    pub fn flagged_positions(&self) -> Option<Vec<f64>> {
        self.classified.as_ref().map(|c| {
            self.positions
                .iter()
                .zip(c)
                .filter(|(_, &f)| f)
                .map(|(&s, _)| s)
                .collect()
        })
    }

    /// Positions the classifier did not flag, in arrival order.
    pub fn retained_positions(&self) -> Option<Vec<f64>> {
        self.classified.as_ref().map(|c| {
            self.positions
                .iter()
                .zip(c)
                .filter(|(_, &f)| !f)
                .map(|(&s, _)| s)
                .collect()
        })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["s_km", "truth", "classified"])
            .map_err(|e| Error::Format(e.to_string()))?;
        for i in 0..self.positions.len() {
            let truth = match self.truth.as_ref().map(|t| t[i]) {
                Some(Label::Normal) => "normal",
                Some(Label::Outlier) => "outlier",
                None => "",
            };
            let classified = match self.classified.as_ref().map(|c| c[i]) {
                Some(true) => "true",
                Some(false) => "false",
                None => "",
            };
            w.write_record([
                self.positions[i].to_string(),
                truth.into(),
                classified.into(),
            ])
            .map_err(|e| Error::Format(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_path<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(file)
    }

    pub fn read_csv<R: Read>(reader: R, domain_length_km: f64) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().from_reader(reader);
        let headers = r.headers().map_err(|e| Error::Format(e.to_string()))?;
        if headers.len() < 3 || &headers[0] != "s_km" {
            return Err(Error::Format(format!(
                "expected header s_km,truth,classified, got {headers:?}"
            )));
        }
        let mut positions = Vec::new();
        let mut truth = Vec::new();
        let mut classified = Vec::new();
        for (line, record) in r.records().enumerate() {
            let record = record.map_err(|e| Error::Format(e.to_string()))?;
            let s: f64 = record[0].parse().map_err(|_| {
                Error::Format(format!("row {}: bad position {:?}", line + 2, &record[0]))
            })?;
            positions.push(s);
            match &record[1] {
                "" => truth.push(None),
                "normal" => truth.push(Some(Label::Normal)),
                "outlier" => truth.push(Some(Label::Outlier)),
                other => {
                    return Err(Error::Format(format!(
                        "row {}: bad truth label {other:?}",
                        line + 2
                    )))
                }
            }
            match &record[2] {
                "" => classified.push(None),
                "true" => classified.push(Some(true)),
                "false" => classified.push(Some(false)),
                other => {
                    return Err(Error::Format(format!(
                        "row {}: bad verdict {other:?}",
                        line + 2
                    )))
                }
            }
        }
        let mut set = Self::new(positions, domain_length_km)?;
        if truth.iter().all(|t| t.is_some()) && !truth.is_empty() {
            set = set.with_truth(truth.into_iter().map(|t| t.unwrap()).collect())?;
        } else if truth.iter().any(|t| t.is_some()) {
            return Err(Error::Format(
                "truth labels must be present for all arrivals or none".to_string(),
            ));
        }
        if classified.iter().all(|c| c.is_some()) && !classified.is_empty() {
            set.set_classified(classified.into_iter().map(|c| c.unwrap()).collect())?;
        } else if classified.iter().any(|c| c.is_some()) {
            return Err(Error::Format(
                "verdicts must be present for all arrivals or none".to_string(),
            ));
        }
        Ok(set)
    }

    pub fn read_csv_path<P: AsRef<Path>>(path: P, domain_length_km: f64) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(file, domain_length_km)
    }
}
