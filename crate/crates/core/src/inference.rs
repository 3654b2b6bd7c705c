//! Posterior inference for the log-intensity field.
//!
//! Arrivals binned on the grid are modeled as cellwise Poisson counts with
//! exposure `duration * cell_width` and log-rate given by the Gaussian
//! field. The posterior is approximated by a Gaussian centered at the mode
//! (a Laplace approximation): Newton iterations in the well-conditioned
//! `B = I + W^{1/2} K W^{1/2}` parameterization, which never inverts the
//! prior covariance and is stable even when `K` is numerically singular.
//! Each step is safeguarded by a step-halving line search on the exact
//! penalized log-likelihood, and the converged curvature yields the
//! posterior covariance `K - K W^{1/2} B^{-1} W^{1/2} K`.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::field::GaussianField;
use crate::grid::{check_grid_len, SpatialGrid};

/// Arrival counts per grid cell over an observation span.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedCounts {
    counts: Vec<u64>,
    duration: f64,
}

impl BinnedCounts {
    pub fn new(counts: Vec<u64>, duration: f64) -> Result<Self> {
        if !duration.is_finite() || duration <= 0.0 {
            return Err(Error::invalid(format!(
                "observation duration must be positive, got {duration}"
            )));
        }
        Ok(Self { counts, duration })
    }

    /// Histogram arrival positions onto the grid.
    pub fn from_positions(grid: &SpatialGrid, positions: &[f64], duration: f64) -> Result<Self> {
        let mut counts = vec![0u64; grid.n_cells()];
        for &s in positions {
            counts[grid.locate_cell(s)?] += 1;
        }
        Self::new(counts, duration)
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Result of a Laplace fit.
#[derive(Debug, Clone)]
pub struct PosteriorFit {
    /// Gaussian approximation to the posterior log-intensity.
    pub field: GaussianField,
    /// Newton iterations taken.
    pub iterations: usize,
    /// Final max-norm of the penalized log-likelihood gradient.
    pub grad_norm: f64,
    /// Penalized log-likelihood at each accepted iterate; nondecreasing up
    /// to floating-point resolution (final polishing steps are taken below
    /// the objective's representable precision).
    pub objective_trace: Vec<f64>,
}

const MAX_NEWTON_ITERATIONS: usize = 100;
const MAX_STEP_HALVINGS: usize = 30;
const GRADIENT_TOLERANCE: f64 = 1e-8;

/// Empirical constant log-rate for a count record: the log of total arrivals
/// per km per unit time, floored at half an arrival so an empty record still
/// gives a finite (very low) rate.
pub fn empirical_log_rate(grid: &SpatialGrid, counts: &BinnedCounts) -> f64 {
    let total = (counts.total() as f64).max(0.5);
    (total / (grid.length_km() * counts.duration())).ln()
}

/// Penalized log-likelihood `sum_i [y_i eta_i - e exp(eta_i)] - a^T h / 2`
/// where `h = eta - m` and `a = K^{-1} h` (constant terms dropped).
fn objective(
    y: &DVector<f64>,
    exposure: f64,
    mean: &DVector<f64>,
    h: &DVector<f64>,
    a: &DVector<f64>,
) -> f64 {
    let mut loglik = 0.0;
    for i in 0..y.len() {
        let eta = h[i] + mean[i];
        loglik += y[i] * eta - exposure * eta.exp();
    }
    loglik - 0.5 * a.dot(h)
}

/// Fit the Gaussian posterior approximation for `prior` given `counts`.
pub fn fit_posterior(prior: &GaussianField, counts: &BinnedCounts) -> Result<PosteriorFit> {
    let grid = prior.grid();
    check_grid_len(grid, counts.counts().len(), "count vector")?;
    let n = grid.n_cells();
    let exposure = counts.duration() * grid.cell_width();
    let y = DVector::from_iterator(n, counts.counts().iter().map(|&c| c as f64));
    let k = prior.cov();
    let mean = prior.log_mean();

    // State: h = eta - m (centered mode estimate) and a = K^{-1} h, kept in
    // tandem so the gradient y - c - a never needs a solve against K.
    let mut h = DVector::zeros(n);
    let mut a = DVector::zeros(n);
    let mut psi = objective(&y, exposure, mean, &h, &a);
    let mut trace = vec![psi];
    let mut grad_norm = f64::INFINITY;

    for iteration in 1..=MAX_NEWTON_ITERATIONS {
        // Poisson with log link: curvature W and rate c coincide.
        let c = DVector::from_iterator(n, (0..n).map(|i| exposure * (h[i] + mean[i]).exp()));
        let w_sqrt = c.map(f64::sqrt);
        grad_norm = (0..n)
            .map(|i| (y[i] - c[i] - a[i]).abs())
            .fold(0.0f64, f64::max);
        if grad_norm <= GRADIENT_TOLERANCE {
            return finish(prior, &h, &c, iteration - 1, grad_norm, trace);
        }

        // Newton target in the B-parameterization:
        //   b = W h + (y - c),  a* = b - W^{1/2} B^{-1} W^{1/2} K b,
        // so that h* = K a* solves (K^{-1} + W) h* = b.
        let b = DVector::from_iterator(n, (0..n).map(|i| c[i] * h[i] + y[i] - c[i]));
        let kb = k * &b;
        let chol_b = cholesky_of_b(k, &w_sqrt)?;
        let mut rhs = DVector::from_iterator(n, (0..n).map(|i| w_sqrt[i] * kb[i]));
        chol_b.solve_mut(&mut rhs);
        let a_target = DVector::from_iterator(n, (0..n).map(|i| b[i] - w_sqrt[i] * rhs[i]));
        let delta_a = &a_target - &a;
        let delta_h = k * &delta_a; // = h* - h up to rounding

        // The quadratic model predicts a gain of g^T delta / 2 for the full
        // step. Once that prediction drops below the floating-point
        // resolution of psi, objective comparisons are rounding noise and a
        // line search would veto pure polishing steps; take the full Newton
        // step (locally contracting this close to the mode) and let the
        // gradient test terminate.
        let predicted_gain: f64 = 0.5
            * (0..n)
                .map(|i| (y[i] - c[i] - a[i]) * delta_h[i])
                .sum::<f64>();
        if predicted_gain.abs() <= 4.0 * f64::EPSILON * psi.abs().max(1.0) {
            a += &delta_a;
            h += &delta_h;
            psi = objective(&y, exposure, mean, &h, &a);
            trace.push(psi);
            continue;
        }

        // Step-halving line search on the exact objective. Non-decreasing
        // steps are accepted so that iterations whose objective gain rounds
        // to zero still move the iterate toward the gradient test.
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_STEP_HALVINGS {
            let a_try = &a + step * &delta_a;
            let h_try = &h + step * &delta_h;
            let psi_try = objective(&y, exposure, mean, &h_try, &a_try);
            if psi_try >= psi {
                a = a_try;
                h = h_try;
                psi = psi_try;
                trace.push(psi);
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // No direction scale improves the objective: the iterate is at
            // numerical stationarity. Accept it if the gradient agrees.
            if grad_norm <= GRADIENT_TOLERANCE {
                return finish(prior, &h, &c, iteration, grad_norm, trace);
            }
            return Err(Error::numerical(format!(
                "Newton stalled after {iteration} iterations with gradient {grad_norm:.3e}"
            )));
        }
    }

    // Re-check convergence at the final iterate before giving up.
    let c = DVector::from_iterator(n, (0..n).map(|i| exposure * (h[i] + mean[i]).exp()));
    let final_grad = (0..n)
        .map(|i| (y[i] - c[i] - a[i]).abs())
        .fold(0.0f64, f64::max);
    if final_grad <= GRADIENT_TOLERANCE {
        return finish(prior, &h, &c, MAX_NEWTON_ITERATIONS, final_grad, trace);
    }
    Err(Error::numerical(format!(
        "Newton failed to reach gradient {GRADIENT_TOLERANCE:.0e} in \
         {MAX_NEWTON_ITERATIONS} iterations (gradient {final_grad:.3e}, was {grad_norm:.3e})"
    )))
}

fn cholesky_of_b(k: &DMatrix<f64>, w_sqrt: &DVector<f64>) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    let n = k.nrows();
    let mut b = DMatrix::from_fn(n, n, |i, j| w_sqrt[i] * k[(i, j)] * w_sqrt[j]);
    for i in 0..n {
        b[(i, i)] += 1.0;
    }
    Cholesky::new(b).ok_or_else(|| {
        Error::numerical("curvature matrix B lost positive definiteness".to_string())
    })
}

fn finish(
    prior: &GaussianField,
    h: &DVector<f64>,
    c: &DVector<f64>,
    iterations: usize,
    grad_norm: f64,
    trace: Vec<f64>,
) -> Result<PosteriorFit> {
    let k = prior.cov();
    let n = k.nrows();
    let w_sqrt = c.map(f64::sqrt);
    let chol_b = cholesky_of_b(k, &w_sqrt)?;
    // Posterior covariance K - K W^{1/2} B^{-1} W^{1/2} K, assembled as
    // K - X^T X with X = L^{-1} W^{1/2} K, which keeps it symmetric and
    // guarantees the subtracted part is positive semidefinite.
    let scaled = DMatrix::from_fn(n, n, |i, j| w_sqrt[i] * k[(i, j)]);
    let x = chol_b.l().solve_lower_triangular(&scaled).ok_or_else(|| {
        Error::numerical("triangular solve failed in posterior covariance".to_string())
    })?;
    let mut cov = k - x.transpose() * &x;
    // Symmetrize away last-bit rounding asymmetry.
    for i in 0..n {
        for j in 0..i {
            let s = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov[(i, j)] = s;
            cov[(j, i)] = s;
        }
    }
    let posterior_mean = prior.log_mean() + h;
    let field = GaussianField::from_parts(prior.grid().clone(), posterior_mean, cov)?;
    Ok(PosteriorFit {
        field,
        iterations,
        grad_norm,
        objective_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matern::MaternParams;
    use crate::rng::{substream, StreamDomain};
    use crate::synthesis::{sample_arrivals, CountMode};
    use crate::IntensityField;
    use rand_distr::{Distribution, Poisson};

    fn grid13() -> SpatialGrid {
        SpatialGrid::new(13.0, 260).unwrap()
    }

    #[test]
    fn binning_partitions_positions() {
        let grid = SpatialGrid::new(1.0, 4).unwrap();
        let counts = BinnedCounts::from_positions(&grid, &[0.1, 0.12, 0.3, 0.8, 1.0], 2.0).unwrap();
        assert_eq!(counts.counts(), &[2, 1, 0, 2]);
        assert_eq!(counts.total(), 5);
        assert_eq!(counts.duration(), 2.0);
        assert!(BinnedCounts::from_positions(&grid, &[1.5], 2.0).is_err());
        assert!(BinnedCounts::new(vec![1], 0.0).is_err());
    }

    #[test]
    fn empirical_log_rate_matches_hand_value() {
        let grid = SpatialGrid::new(13.0, 26).unwrap();
        let counts = BinnedCounts::new(vec![1; 26], 2.0).unwrap();
        // 26 arrivals over 13 km and 2 time units: rate 1 per km-unit.
        assert!((empirical_log_rate(&grid, &counts) - 0.0).abs() < 1e-12);
        // Empty record floors at half an arrival instead of ln(0).
        let empty = BinnedCounts::new(vec![0; 26], 2.0).unwrap();
        let want = (0.5f64 / 26.0).ln();
        assert!((empirical_log_rate(&grid, &empty) - want).abs() < 1e-12);
    }

    /// Scalar Newton solve of `y - e exp(eta) - (eta - m)/k = 0`, the
    /// independent-cell posterior mode, as an oracle for the joint fit.
    fn scalar_mode(y: f64, exposure: f64, m: f64, k: f64) -> f64 {
        let mut eta = m;
        for _ in 0..200 {
            let c = exposure * eta.exp();
            let grad = y - c - (eta - m) / k;
            let hess = -c - 1.0 / k;
            let step = grad / hess;
            eta -= step;
            if step.abs() < 1e-14 {
                break;
            }
        }
        eta
    }

    #[test]
    fn independent_cells_match_scalar_newton() {
        // Diagonal prior covariance decouples the cells, so the joint mode
        // must agree with per-cell scalar solves, and the posterior variance
        // with the scalar curvature 1/(1/k + e exp(eta)).
        let grid = SpatialGrid::new(2.0, 8).unwrap();
        let k_diag = 0.7;
        let prior = GaussianField::from_parts(
            grid.clone(),
            nalgebra::DVector::from_fn(8, |i, _| 0.2 * i as f64 - 0.5),
            nalgebra::DMatrix::from_diagonal_element(8, 8, k_diag),
        )
        .unwrap();
        let counts = BinnedCounts::new(vec![0, 1, 2, 3, 5, 8, 2, 0], 4.0).unwrap();
        let fit = fit_posterior(&prior, &counts).unwrap();
        let exposure = 4.0 * grid.cell_width();
        for i in 0..8 {
            let want = scalar_mode(
                counts.counts()[i] as f64,
                exposure,
                prior.log_mean()[i],
                k_diag,
            );
            let got = fit.field.log_mean()[i];
            assert!((got - want).abs() < 1e-7, "cell {i}: {got} vs {want}");
            let curv = exposure * want.exp() + 1.0 / k_diag;
            let var_want = 1.0 / curv;
            let var_got = fit.field.cov()[(i, i)];
            assert!(
                (var_got - var_want).abs() < 1e-9,
                "cell {i}: var {var_got} vs {var_want}"
            );
            // Off-diagonal stays (numerically) zero.
            for j in 0..8 {
                if j != i {
                    assert!(fit.field.cov()[(i, j)].abs() < 1e-9);
                }
            }
        }
        assert!(fit.grad_norm <= GRADIENT_TOLERANCE);
    }

    #[test]
    fn mode_is_stationary_without_inverting_the_prior() {
        // At the mode, K (y - c) = eta - m exactly; checking through K
        // avoids ever forming K^{-1}.
        let grid = grid13();
        let params = MaternParams::new(1.0, 1.5, 2.0).unwrap();
        let prior = GaussianField::from_matern_const_mean(grid.clone(), 0.0, &params).unwrap();
        let truth = IntensityField::constant(grid.clone(), 1.2).unwrap();
        let mut rng = substream(31, StreamDomain::History, 0);
        let arrivals = sample_arrivals(&truth, 30.0, CountMode::Poisson, &mut rng).unwrap();
        let counts = BinnedCounts::from_positions(&grid, &arrivals, 30.0).unwrap();
        let fit = fit_posterior(&prior, &counts).unwrap();

        let exposure = 30.0 * grid.cell_width();
        let n = grid.n_cells();
        let residual_vec = nalgebra::DVector::from_fn(n, |i, _| {
            counts.counts()[i] as f64 - exposure * fit.field.log_mean()[i].exp()
        });
        let lhs = prior.cov() * residual_vec;
        let h = fit.field.log_mean() - prior.log_mean();
        let err = (&lhs - &h).amax();
        assert!(err < 1e-6, "stationarity residual {err}");
    }

    #[test]
    fn posterior_concentrates_with_data() {
        // Long observation of a flat truth: the fitted log-rate approaches
        // the true one and the posterior variance collapses.
        let grid = grid13();
        let params = MaternParams::new(1.0, 1.5, 2.0).unwrap();
        let prior = GaussianField::from_matern_const_mean(grid.clone(), 0.0, &params).unwrap();
        let rate = 2.0;
        let duration = 400.0;
        let exposure = duration * grid.cell_width();
        let mut rng = substream(32, StreamDomain::History, 1);
        let poisson = Poisson::new(exposure * rate).unwrap();
        let counts: Vec<u64> = (0..260).map(|_| poisson.sample(&mut rng) as u64).collect();
        let fit = fit_posterior(&prior, &BinnedCounts::new(counts, duration).unwrap()).unwrap();
        let log_rate = rate.ln();
        for i in 0..260 {
            assert!(
                (fit.field.log_mean()[i] - log_rate).abs() < 0.2,
                "cell {i}: {} vs {log_rate}",
                fit.field.log_mean()[i]
            );
            assert!(fit.field.cov()[(i, i)] < 0.05);
        }
    }

    #[test]
    fn posterior_variance_never_exceeds_prior() {
        let grid = grid13();
        let params = MaternParams::new(1.3, 1.5, 2.0).unwrap();
        let prior = GaussianField::from_matern_const_mean(grid.clone(), 0.5, &params).unwrap();
        let truth = IntensityField::constant(grid.clone(), 1.5).unwrap();
        let mut rng = substream(33, StreamDomain::History, 0);
        let arrivals = sample_arrivals(&truth, 5.0, CountMode::Poisson, &mut rng).unwrap();
        let counts = BinnedCounts::from_positions(&grid, &arrivals, 5.0).unwrap();
        let fit = fit_posterior(&prior, &counts).unwrap();
        for i in 0..260 {
            assert!(fit.field.cov()[(i, i)] <= prior.cov()[(i, i)] + 1e-12);
        }
    }

    #[test]
    fn zero_counts_pull_the_field_down() {
        let grid = SpatialGrid::new(2.0, 10).unwrap();
        let params = MaternParams::new(0.8, 1.5, 1.0).unwrap();
        let prior = GaussianField::from_matern_const_mean(grid, 1.0, &params).unwrap();
        let counts = BinnedCounts::new(vec![0; 10], 6.0).unwrap();
        let fit = fit_posterior(&prior, &counts).unwrap();
        for i in 0..10 {
            assert!(fit.field.log_mean()[i] < 1.0);
        }
    }

    #[test]
    fn objective_trace_is_nondecreasing_and_fit_is_deterministic() {
        let grid = grid13();
        let params = MaternParams::new(1.0, 1.5, 2.0).unwrap();
        let prior = GaussianField::from_matern_const_mean(grid.clone(), 0.0, &params).unwrap();
        let truth = IntensityField::constant(grid.clone(), 1.0).unwrap();
        let mut rng = substream(34, StreamDomain::History, 2);
        let arrivals = sample_arrivals(&truth, 20.0, CountMode::Poisson, &mut rng).unwrap();
        let counts = BinnedCounts::from_positions(&grid, &arrivals, 20.0).unwrap();
        let fit1 = fit_posterior(&prior, &counts).unwrap();
        let fit2 = fit_posterior(&prior, &counts).unwrap();
        assert_eq!(fit1.field.log_mean(), fit2.field.log_mean());
        assert_eq!(fit1.iterations, fit2.iterations);
        for w in fit1.objective_trace.windows(2) {
            // Polishing steps taken below the objective's floating-point
            // resolution may wiggle the last bits, so allow a few ulps.
            let slack = 4.0 * f64::EPSILON * w[0].abs().max(1.0);
            assert!(
                w[1] >= w[0] - slack,
                "objective decreased: {} -> {}",
                w[0],
                w[1]
            );
        }
        assert!(fit1.iterations <= 20, "took {} iterations", fit1.iterations);
    }
}
