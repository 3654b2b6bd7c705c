//! Gaussian log-intensity fields and their lognormal intensities.
//!
//! A [`GaussianField`] is a finite-dimensional Gaussian over the grid's cell
//! centers: a mean vector, a covariance matrix, and a Cholesky factor for
//! sampling. Exponentiating a draw gives a nonnegative intensity surface
//! ([`IntensityField`]); the cellwise lognormal moments are available in
//! closed form through [`GaussianField::intensity_stats`].

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::grid::{check_grid_len, SpatialGrid};
use crate::matern::MaternParams;

/// Jitters tried, in order, when the covariance is not numerically positive
/// definite. Escalating by decades keeps the perturbation as small as the
/// matrix allows.
const JITTER_LADDER: [f64; 6] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// A Gaussian distribution over log-intensity values at the grid's cell
/// centers.
#[derive(Debug, Clone)]
pub struct GaussianField {
    grid: SpatialGrid,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    /// Lower Cholesky factor of `cov + jitter I`; all zeros for a
    /// deterministic (zero-covariance) field.
    chol: DMatrix<f64>,
    jitter: f64,
}

impl GaussianField {
    /// Assemble a field from an explicit mean and covariance.
    ///
    /// The covariance must be square, symmetric, and positive semidefinite
    /// up to the jitter ladder; the stored covariance stays unperturbed and
    /// only the sampling factor absorbs the jitter.
    pub fn from_parts(grid: SpatialGrid, mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        check_grid_len(&grid, mean.len(), "mean vector")?;
        let n = grid.n_cells();
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::invalid(format!(
                "covariance is {}x{} but the grid has {n} cells",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.iter().any(|v| !v.is_finite()) || cov.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(
                "field mean and covariance must be finite".to_string(),
            ));
        }
        let max_asym = (0..n)
            .flat_map(|i| (0..i).map(move |j| (i, j)))
            .map(|(i, j)| (cov[(i, j)] - cov[(j, i)]).abs())
            .fold(0.0f64, f64::max);
        let scale = cov.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if max_asym > 1e-8 * scale.max(1.0) {
            return Err(Error::invalid(format!(
                "covariance is asymmetric (max deviation {max_asym:.3e})"
            )));
        }

        let (chol, jitter) = if scale == 0.0 {
            // Deterministic field: every draw is the mean itself.
            (DMatrix::zeros(n, n), 0.0)
        } else {
            factor_with_jitter(&cov)?
        };
        Ok(Self {
            grid,
            mean,
            cov,
            chol,
            jitter,
        })
    }

    /// Stationary Matérn field with the given per-cell log-mean.
    pub fn from_matern(
        grid: SpatialGrid,
        mean: DVector<f64>,
        params: &MaternParams,
    ) -> Result<Self> {
        params.validate()?;
        let n = grid.n_cells();
        let width = grid.cell_width();
        // Stationarity on a uniform grid: the covariance depends only on the
        // lag, so one kernel evaluation per distinct distance fills the
        // whole (Toeplitz) matrix.
        let lags: Vec<f64> = (0..n)
            .map(|lag| params.cov(lag as f64 * width))
            .collect::<Result<_>>()?;
        let cov = DMatrix::from_fn(n, n, |i, j| lags[i.abs_diff(j)]);
        Self::from_parts(grid, mean, cov)
    }

    /// Constant log-mean convenience for [`GaussianField::from_matern`].
    pub fn from_matern_const_mean(
        grid: SpatialGrid,
        log_mean: f64,
        params: &MaternParams,
    ) -> Result<Self> {
        let mean = DVector::from_element(grid.n_cells(), log_mean);
        Self::from_matern(grid, mean, params)
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn log_mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// Stored (unjittered) covariance.
    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Jitter absorbed by the sampling factor; 0 when the covariance was
    /// positive definite as given.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// One draw of the log-intensity vector.
    pub fn sample_log_intensity<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_iterator(
            self.mean.len(),
            (0..self.mean.len()).map(|_| rng.sample::<f64, _>(StandardNormal)),
        );
        &self.mean + &self.chol * z
    }

    /// `count` independent log-intensity draws as the columns of an
    /// `n x count` matrix; one matrix product instead of `count` matrix-
    /// vector products.
    pub fn sample_log_intensity_block<R: Rng + ?Sized>(
        &self,
        count: usize,
        rng: &mut R,
    ) -> DMatrix<f64> {
        let n = self.mean.len();
        let z = DMatrix::from_fn(n, count, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut out = &self.chol * z;
        for mut col in out.column_iter_mut() {
            col += &self.mean;
        }
        out
    }

    /// One draw of the intensity surface (exponentiated log-intensity).
    pub fn sample_intensity<R: Rng + ?Sized>(&self, rng: &mut R) -> IntensityField {
        let log = self.sample_log_intensity(rng);
        IntensityField {
            grid: self.grid.clone(),
            values: log.iter().map(|v| v.exp()).collect(),
        }
    }

    /// Cellwise lognormal moments of the intensity: `E = exp(m + K/2)` and
    /// `sd = sqrt(expm1(K)) * E`, with `K` the marginal log-variance.
    pub fn intensity_stats(&self) -> Vec<IntensityStats> {
        (0..self.mean.len())
            .map(|i| {
                let k = self.cov[(i, i)];
                let mean = (self.mean[i] + 0.5 * k).exp();
                IntensityStats {
                    mean,
                    sd: k.exp_m1().sqrt() * mean,
                }
            })
            .collect()
    }

    /// Expected intensity per cell, `exp(m + K/2)`.
    pub fn mean_intensity(&self) -> Vec<f64> {
        self.intensity_stats().iter().map(|s| s.mean).collect()
    }
}

fn factor_with_jitter(cov: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    for &jitter in &JITTER_LADDER {
        let mut candidate = cov.clone();
        if jitter > 0.0 {
            for i in 0..candidate.nrows() {
                candidate[(i, i)] += jitter;
            }
        }
        if let Some(chol) = Cholesky::new(candidate) {
            return Ok((chol.l(), jitter));
        }
    }
    Err(Error::numerical(format!(
        "covariance is not positive definite even with jitter {:.0e}",
        JITTER_LADDER[JITTER_LADDER.len() - 1]
    )))
}

/// Marginal lognormal moments of the intensity in one cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntensityStats {
    pub mean: f64,
    pub sd: f64,
}

/// A realized (deterministic) nonnegative intensity surface over a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityField {
    grid: SpatialGrid,
    values: Vec<f64>,
}

impl IntensityField {
    pub fn from_values(grid: SpatialGrid, values: Vec<f64>) -> Result<Self> {
        check_grid_len(&grid, values.len(), "intensity vector")?;
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid(
                "intensity values must be finite and nonnegative".to_string(),
            ));
        }
        Ok(Self { grid, values })
    }

    /// Constant intensity `rate` everywhere.
    pub fn constant(grid: SpatialGrid, rate: f64) -> Result<Self> {
        let n = grid.n_cells();
        Self::from_values(grid, vec![rate; n])
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value_at(&self, s: f64) -> Result<f64> {
        Ok(self.values[self.grid.locate_cell(s)?])
    }

    pub fn max(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, &v| m.max(v))
    }

    /// Integrated rate over the whole domain (expected count per unit time).
    pub fn total_rate(&self) -> f64 {
        self.grid
            .integrate(&self.values)
            .expect("intensity values validated at construction")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, StreamDomain};

    fn small_grid() -> SpatialGrid {
        SpatialGrid::new(2.0, 8).unwrap()
    }

    fn matern() -> MaternParams {
        MaternParams::new(1.0, 1.5, 2.0).unwrap()
    }

    #[test]
    fn matern_field_covariance_is_toeplitz_with_unit_diagonal() {
        let f = GaussianField::from_matern_const_mean(small_grid(), 0.0, &matern()).unwrap();
        let cov = f.cov();
        for i in 0..8 {
            assert!((cov[(i, i)] - 1.0).abs() < 1e-14);
            for j in 0..8 {
                assert!((cov[(i, j)] - cov[(j, i)]).abs() < 1e-15);
                if i >= 1 && j >= 1 {
                    assert!((cov[(i, j)] - cov[(i - 1, j - 1)]).abs() < 1e-15);
                }
            }
        }
        assert_eq!(f.jitter(), 0.0);
    }

    #[test]
    fn sampling_is_deterministic_per_stream() {
        let f = GaussianField::from_matern_const_mean(small_grid(), 0.3, &matern()).unwrap();
        let a = f.sample_log_intensity(&mut substream(1, StreamDomain::Truth, 0));
        let b = f.sample_log_intensity(&mut substream(1, StreamDomain::Truth, 0));
        let c = f.sample_log_intensity(&mut substream(1, StreamDomain::Truth, 1));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn sample_moments_match_lognormal_identities() {
        // Empirical mean/sd over many draws against exp(m + K/2) and
        // sqrt(expm1(K)) * mean, within Monte Carlo error.
        let f = GaussianField::from_matern_const_mean(small_grid(), 0.4, &matern()).unwrap();
        let stats = f.intensity_stats();
        let n = 20_000;
        let mut rng = substream(11, StreamDomain::Truth, 0);
        let mut sum = vec![0.0; 8];
        let mut sum_sq = vec![0.0; 8];
        for _ in 0..n {
            let draw = f.sample_intensity(&mut rng);
            for (i, &v) in draw.values().iter().enumerate() {
                sum[i] += v;
                sum_sq[i] += v * v;
            }
        }
        for i in 0..8 {
            let mean = sum[i] / n as f64;
            let var = sum_sq[i] / n as f64 - mean * mean;
            // Lognormal with K = 1: sd of the sample mean is about
            // sd/sqrt(n) = 2.16/141 ~ 0.015; allow 4 sigma.
            assert!(
                (mean - stats[i].mean).abs() < 4.0 * stats[i].sd / (n as f64).sqrt(),
                "cell {i}: empirical {mean} vs {}",
                stats[i].mean
            );
            assert!((var.sqrt() - stats[i].sd).abs() / stats[i].sd < 0.1);
        }
    }

    #[test]
    fn intensity_stats_closed_form() {
        // K = 1, m = 0: mean = exp(0.5), sd = sqrt(e - 1) * exp(0.5).
        let f = GaussianField::from_matern_const_mean(small_grid(), 0.0, &matern()).unwrap();
        let s = &f.intensity_stats()[0];
        assert!((s.mean - 0.5f64.exp()).abs() < 1e-12);
        assert!((s.sd - (1f64.exp_m1()).sqrt() * 0.5f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn zero_covariance_field_is_deterministic() {
        let grid = small_grid();
        let mean = DVector::from_element(8, 1.25);
        let cov = DMatrix::zeros(8, 8);
        let f = GaussianField::from_parts(grid, mean, cov).unwrap();
        assert_eq!(f.jitter(), 0.0);
        let draw = f.sample_log_intensity(&mut substream(5, StreamDomain::Truth, 0));
        for &v in draw.iter() {
            assert_eq!(v, 1.25);
        }
        let stats = f.intensity_stats();
        assert!((stats[0].mean - 1.25f64.exp()).abs() < 1e-12);
        assert_eq!(stats[0].sd, 0.0);
    }

    #[test]
    fn semidefinite_covariance_gets_jitter() {
        // Rank-one covariance: positive semidefinite but singular.
        let grid = small_grid();
        let v = DVector::from_fn(8, |i, _| 1.0 + i as f64 * 0.1);
        let cov = &v * v.transpose();
        let f = GaussianField::from_parts(grid, DVector::zeros(8), cov.clone()).unwrap();
        assert!(f.jitter() > 0.0 && f.jitter() <= 1e-6);
        // Stored covariance stays as given.
        assert_eq!(f.cov()[(0, 0)], cov[(0, 0)]);
    }

    #[test]
    fn rejects_malformed_inputs() {
        let grid = small_grid();
        // Wrong sizes.
        assert!(
            GaussianField::from_parts(grid.clone(), DVector::zeros(7), DMatrix::zeros(8, 8))
                .is_err()
        );
        assert!(
            GaussianField::from_parts(grid.clone(), DVector::zeros(8), DMatrix::zeros(7, 8))
                .is_err()
        );
        // Asymmetric covariance.
        let mut cov = DMatrix::identity(8, 8);
        cov[(0, 1)] = 0.5;
        assert!(GaussianField::from_parts(grid.clone(), DVector::zeros(8), cov).is_err());
        // Negative definite.
        let cov = DMatrix::from_diagonal_element(8, 8, -1.0);
        assert!(GaussianField::from_parts(grid, DVector::zeros(8), cov).is_err());
    }

    #[test]
    fn intensity_field_basics() {
        let grid = small_grid();
        let f =
            IntensityField::from_values(grid.clone(), (0..8).map(|i| i as f64).collect()).unwrap();
        assert_eq!(f.max(), 7.0);
        assert!((f.total_rate() - 28.0 * 0.25).abs() < 1e-12);
        assert_eq!(f.value_at(0.0).unwrap(), 0.0);
        assert_eq!(f.value_at(2.0).unwrap(), 7.0);
        assert!(f.value_at(2.5).is_err());
        assert!(IntensityField::from_values(grid.clone(), vec![-1.0; 8]).is_err());
        assert!(IntensityField::from_values(grid, vec![1.0; 7]).is_err());
    }
}
