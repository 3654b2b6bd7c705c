//! Synthetic arrival generation by thinning.
//!
//! Given a realized intensity surface, arrivals are drawn by rejection:
//! candidate positions land uniformly on the corridor and survive with
//! probability `lambda(s) / max lambda`, which reproduces the inhomogeneous
//! spatial law exactly on the discretized field. The number of arrivals is
//! either the rounded expectation (fixed-size datasets for paired
//! comparisons) or a Poisson draw (full point-process realism).
//! Commission outliers are uniform on the corridor by construction.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::arrivals::{ArrivalSet, Label};
use crate::error::{Error, Result};
use crate::field::IntensityField;

/// How many arrivals a window receives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountMode {
    /// The rounded expected count; keeps dataset size fixed across paired
    /// replications.
    Expected,
    /// A Poisson draw with the expected count as its mean.
    Poisson,
}

/// Candidate budget for the rejection loop; exceeding it means the target
/// count is unreachable (for example a near-zero field with a positive
/// requested count).
const MAX_CANDIDATES: u64 = 10_000_000;

fn draw_count<R: Rng + ?Sized>(expected: f64, mode: CountMode, rng: &mut R) -> Result<usize> {
    if !expected.is_finite() || expected < 0.0 {
        return Err(Error::numerical(format!(
            "expected arrival count must be finite and nonnegative, got {expected}"
        )));
    }
    let n = match mode {
        CountMode::Expected => expected.round(),
        CountMode::Poisson => {
            if expected == 0.0 {
                0.0
            } else {
                let poisson = Poisson::new(expected)
                    .map_err(|e| Error::numerical(format!("Poisson({expected}): {e}")))?;
                poisson.sample(rng)
            }
        }
    };
    Ok(n as usize)
}

/// Draw arrivals from `duration` time units of the inhomogeneous process
/// with spatial intensity `field` (per km per unit time).
pub fn sample_arrivals<R: Rng + ?Sized>(
    field: &IntensityField,
    duration: f64,
    mode: CountMode,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !duration.is_finite() || duration < 0.0 {
        return Err(Error::invalid(format!(
            "duration must be nonnegative, got {duration}"
        )));
    }
    let target = draw_count(field.total_rate() * duration, mode, rng)?;
    if target == 0 {
        return Ok(Vec::new());
    }
    let max = field.max();
    if max <= 0.0 {
        return Err(Error::numerical(format!(
            "cannot draw {target} arrivals from an identically zero intensity"
        )));
    }
    let length = field.grid().length_km();
    let mut out = Vec::with_capacity(target);
    let mut candidates = 0u64;
    while out.len() < target {
        candidates += 1;
        if candidates > MAX_CANDIDATES {
            return Err(Error::numerical(format!(
                "rejection sampling exhausted {MAX_CANDIDATES} candidates \
                 ({} of {target} accepted)",
                out.len()
            )));
        }
        let s = rng.random_range(0.0..length);
        let u: f64 = rng.random();
        if u < field.value_at(s)? / max {
            out.push(s);
        }
    }
    Ok(out)
}

/// Draw uniformly positioned outlier arrivals at `rate_per_km` per unit time.
pub fn sample_uniform_arrivals<R: Rng + ?Sized>(
    length_km: f64,
    rate_per_km: f64,
    duration: f64,
    mode: CountMode,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !length_km.is_finite() || length_km <= 0.0 {
        return Err(Error::invalid(format!(
            "domain length must be positive, got {length_km}"
        )));
    }
    if !rate_per_km.is_finite() || rate_per_km < 0.0 {
        return Err(Error::invalid(format!(
            "outlier rate must be nonnegative, got {rate_per_km}"
        )));
    }
    if !duration.is_finite() || duration < 0.0 {
        return Err(Error::invalid(format!(
            "duration must be nonnegative, got {duration}"
        )));
    }
    let target = draw_count(rate_per_km * length_km * duration, mode, rng)?;
    Ok((0..target)
        .map(|_| rng.random_range(0.0..length_km))
        .collect())
}

/// One labeled evaluation window: normal arrivals from `field` superposed
/// with uniform outliers at `outlier_rate_per_km`, shuffled so position in
/// the record order carries no information about provenance.
pub fn synthesize_window<R: Rng + ?Sized>(
    field: &IntensityField,
    outlier_rate_per_km: f64,
    duration: f64,
    mode: CountMode,
    rng: &mut R,
) -> Result<ArrivalSet> {
    let length = field.grid().length_km();
    let normal = sample_arrivals(field, duration, mode, rng)?;
    let outliers = sample_uniform_arrivals(length, outlier_rate_per_km, duration, mode, rng)?;
    let mut labeled: Vec<(f64, Label)> = normal
        .into_iter()
        .map(|s| (s, Label::Normal))
        .chain(outliers.into_iter().map(|s| (s, Label::Outlier)))
        .collect();
    labeled.shuffle(rng);
    let (positions, truth): (Vec<f64>, Vec<Label>) = labeled.into_iter().unzip();
    ArrivalSet::new(positions, length)?.with_truth(truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SpatialGrid;
    use crate::rng::{substream, StreamDomain};

    fn step_field() -> IntensityField {
        // 10 cells over 1 km: left half at rate 2, right half at rate 6.
        let grid = SpatialGrid::new(1.0, 10).unwrap();
        let mut v = vec![2.0; 10];
        for x in v.iter_mut().skip(5) {
            *x = 6.0;
        }
        IntensityField::from_values(grid, v).unwrap()
    }

    #[test]
    fn expected_mode_count_is_deterministic() {
        let f = step_field(); // total rate 4.0 per unit time
        let mut rng = substream(3, StreamDomain::History, 0);
        let draws = sample_arrivals(&f, 2.5, CountMode::Expected, &mut rng).unwrap();
        assert_eq!(draws.len(), 10); // round(4.0 * 2.5)
        for &s in &draws {
            assert!((0.0..1.0).contains(&s));
        }
    }

    #[test]
    fn thinning_matches_cell_probabilities() {
        // Empirical cell frequencies against the normalized intensity, as a
        // total-variation check with a generous Monte Carlo margin.
        let f = step_field();
        let mut rng = substream(4, StreamDomain::History, 0);
        let n = 40_000usize;
        let mut counts = vec![0usize; 10];
        let mut drawn = 0;
        while drawn < n {
            let batch = sample_arrivals(&f, 10.0, CountMode::Expected, &mut rng).unwrap();
            for s in batch {
                if drawn == n {
                    break;
                }
                counts[f.grid().locate_cell(s).unwrap()] += 1;
                drawn += 1;
            }
        }
        let probs: Vec<f64> = f.values().iter().map(|v| v / 40.0).collect(); // sum(v)=40
        let tv: f64 = counts
            .iter()
            .zip(&probs)
            .map(|(&c, &p)| (c as f64 / n as f64 - p).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.01, "total variation {tv}");
    }

    #[test]
    fn poisson_mode_moments() {
        let f = step_field(); // expected count 4.0 per unit time
        let mut rng = substream(5, StreamDomain::History, 0);
        let reps = 4000;
        let counts: Vec<f64> = (0..reps)
            .map(|_| {
                sample_arrivals(&f, 1.0, CountMode::Poisson, &mut rng)
                    .unwrap()
                    .len() as f64
            })
            .collect();
        let mean = counts.iter().sum::<f64>() / reps as f64;
        let var = counts.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / reps as f64;
        // Poisson(4): sd of the sample mean is 2/sqrt(4000) ~ 0.032.
        assert!((mean - 4.0).abs() < 0.15, "mean {mean}");
        assert!((var - 4.0).abs() < 0.5, "var {var}");
    }

    #[test]
    fn zero_intensity_yields_empty_or_fails() {
        let grid = SpatialGrid::new(1.0, 4).unwrap();
        let zero = IntensityField::constant(grid, 0.0).unwrap();
        let mut rng = substream(6, StreamDomain::History, 0);
        let empty = sample_arrivals(&zero, 5.0, CountMode::Expected, &mut rng).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn uniform_outliers_have_expected_count() {
        let mut rng = substream(7, StreamDomain::Dataset, 0);
        // 1.54 per km over 13 km: just over 20 expected.
        let v = sample_uniform_arrivals(13.0, 1.54, 1.0, CountMode::Expected, &mut rng).unwrap();
        assert_eq!(v.len(), 20);
        for &s in &v {
            assert!((0.0..13.0).contains(&s));
        }
    }

    #[test]
    fn window_labels_partition_the_sample() {
        let f = step_field();
        let mut rng = substream(8, StreamDomain::Dataset, 0);
        let set = synthesize_window(&f, 3.0, 2.0, CountMode::Expected, &mut rng).unwrap();
        // normal: round(4*2) = 8, outliers: round(3*1*2) = 6.
        assert_eq!(set.len(), 14);
        assert_eq!(set.true_outlier_count(), Some(6));
    }

    #[test]
    fn window_synthesis_is_reproducible() {
        let f = step_field();
        let a = synthesize_window(
            &f,
            3.0,
            2.0,
            CountMode::Poisson,
            &mut substream(9, StreamDomain::Dataset, 5),
        )
        .unwrap();
        let b = synthesize_window(
            &f,
            3.0,
            2.0,
            CountMode::Poisson,
            &mut substream(9, StreamDomain::Dataset, 5),
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shuffle_interleaves_labels() {
        // With 200 normals then 200 outliers pre-shuffle, the first half of
        // the record order should contain close to half of each label.
        let grid = SpatialGrid::new(1.0, 4).unwrap();
        let f = IntensityField::constant(grid, 200.0).unwrap();
        let mut rng = substream(10, StreamDomain::Dataset, 0);
        let set = synthesize_window(&f, 200.0, 1.0, CountMode::Expected, &mut rng).unwrap();
        let truth = set.truth().unwrap();
        let first_half_outliers = truth[..200]
            .iter()
            .filter(|l| **l == Label::Outlier)
            .count();
        assert!(
            (60..=140).contains(&first_half_outliers),
            "shuffle looks degenerate: {first_half_outliers} outliers in first half"
        );
    }
}
