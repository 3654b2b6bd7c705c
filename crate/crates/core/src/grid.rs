//! The bounded 1-D spatial domain, its discretization, and quadrature.
//!
//! Every field, curve, and integral in the crate lives on a [`SpatialGrid`]:
//! a uniform partition of `[0, L]` kilometers into cells, with values attached
//! to cell centers and integrals taken by the midpoint rule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform discretization of the domain `[0, length_km]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpatialGrid {
    length_km: f64,
    n_cells: usize,
    cell_width: f64,
    #[serde(skip)]
    cell_centers: Vec<f64>,
}

impl PartialEq for SpatialGrid {
    fn eq(&self, other: &Self) -> bool {
        self.length_km == other.length_km && self.n_cells == other.n_cells
    }
}

impl SpatialGrid {
    /// Build a grid of `n_cells` equal cells over `[0, length_km]`.
    pub fn new(length_km: f64, n_cells: usize) -> Result<Self> {
        if !length_km.is_finite() || length_km <= 0.0 {
            return Err(Error::invalid(format!(
                "grid length must be positive and finite, got {length_km}"
            )));
        }
        if n_cells < 2 {
            return Err(Error::invalid(format!(
                "grid needs at least 2 cells, got {n_cells}"
            )));
        }
        let cell_width = length_km / n_cells as f64;
        let cell_centers = (0..n_cells)
            .map(|i| (i as f64 + 0.5) * cell_width)
            .collect();
        Ok(Self {
            length_km,
            n_cells,
            cell_width,
            cell_centers,
        })
    }

    pub fn length_km(&self) -> f64 {
        self.length_km
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn cell_width(&self) -> f64 {
        self.cell_width
    }

    pub fn cell_centers(&self) -> &[f64] {
        &self.cell_centers
    }

    /// Midpoint-rule integral of per-km values attached to cell centers.
    pub fn integrate(&self, values: &[f64]) -> Result<f64> {
        if values.len() != self.n_cells {
            return Err(Error::invalid(format!(
                "integrand has {} values but the grid has {} cells",
                values.len(),
                self.n_cells
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "integrand contains non-finite value {bad}"
            )));
        }
        Ok(values.iter().sum::<f64>() * self.cell_width)
    }

    /// Index of the cell containing `s`; `s = L` maps to the last cell.
    pub fn locate_cell(&self, s: f64) -> Result<usize> {
        if !s.is_finite() || s < 0.0 || s > self.length_km {
            return Err(Error::OutOfDomain {
                position: s,
                length_km: self.length_km,
            });
        }
        let idx = (s / self.cell_width) as usize;
        Ok(idx.min(self.n_cells - 1))
    }
}

/// Used by operations that pair a grid with an external vector.
pub(crate) fn check_grid_len(grid: &SpatialGrid, len: usize, what: &str) -> Result<()> {
    if len != grid.n_cells() {
        return Err(Error::invalid(format!(
            "{what} has length {len} but the grid has {} cells",
            grid.n_cells()
        )));
    }
    Ok(())
}
