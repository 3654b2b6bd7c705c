//! Two-stage stochastic commission-outlier classification.
//!
//! Stage one is a window-level gate: the total arrival count is compared
//! against the posterior predictive of *normal* arrivals through a Gaussian
//! CDF, so windows with suspiciously many arrivals are screened aggressively
//! and quiet windows mostly pass untouched. Stage two is spatial: an arrival
//! that clears the gate is flagged with probability equal to the posterior
//! outlier-probability curve at its position. Both stages draw fresh
//! uniforms per arrival, and the spatial draw happens only when the gate
//! opens — the randomness consumption pattern is part of the contract so
//! paired experiments stay aligned.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::arrivals::{ArrivalSet, Label};
use crate::error::{Error, Result};
use crate::field::GaussianField;
use crate::outlier::OutlierProbabilityCurve;

/// Posterior predictive of the total normal arrival count per window.
///
/// The spread reflects field uncertainty only: each posterior realization of
/// the intensity yields one deterministic expected count, and `mu_n` /
/// `sigma_n` are the mean and standard deviation of that population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrivalCountModel {
    pub mu_n: f64,
    pub sigma_n: f64,
    /// Window length, in the fit's time units, that `mu_n` and `sigma_n`
    /// describe.
    pub unit_time: f64,
}

impl ArrivalCountModel {
    /// Build the model from `draws` posterior intensity realizations; each
    /// realization's integrated rate is divided by `duration` to express it
    /// per `unit_time` window.
    pub fn from_posterior<R: Rng + ?Sized>(
        field: &GaussianField,
        draws: usize,
        duration: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if draws < 2 {
            return Err(Error::invalid(format!(
                "count model needs at least 2 posterior draws, got {draws}"
            )));
        }
        if !duration.is_finite() || duration <= 0.0 {
            return Err(Error::invalid(format!(
                "count-model duration must be positive, got {duration}"
            )));
        }
        // Welford's recurrence: stable, and exactly zero spread when every
        // realization integrates to the same total.
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for i in 0..draws {
            let total = field.sample_intensity(rng).total_rate() / duration;
            let delta = total - mean;
            mean += delta / (i + 1) as f64;
            m2 += delta * (total - mean);
        }
        let var = (m2 / (draws - 1) as f64).max(0.0);
        Ok(Self {
            mu_n: mean,
            sigma_n: var.sqrt(),
            unit_time: 1.0,
        })
    }

    /// The same model rescaled to windows `factor` times as long: the
    /// intensity is unknown but fixed, so both moments scale linearly.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !factor.is_finite() || factor <= 0.0 {
            return Err(Error::invalid(format!(
                "window scale factor must be positive, got {factor}"
            )));
        }
        Ok(Self {
            mu_n: self.mu_n * factor,
            sigma_n: self.sigma_n * factor,
            unit_time: self.unit_time * factor,
        })
    }

    /// Gate-opening probability for a window holding `observed` arrivals:
    /// `Phi((observed - mu_n) / sigma_n)`, degenerating to a step (with the
    /// symmetric 1/2 at equality) when the predictive is deterministic.
    pub fn gate_probability(&self, observed: usize) -> f64 {
        let k = observed as f64;
        if self.sigma_n > 0.0 {
            let normal = Normal::new(0.0, 1.0).expect("unit normal is well formed");
            normal.cdf((k - self.mu_n) / self.sigma_n)
        } else if k > self.mu_n {
            1.0
        } else if k < self.mu_n {
            0.0
        } else {
            0.5
        }
    }
}

/// Run the two-stage rule over every arrival in `set`; `true` means flagged
/// as a commission outlier.
pub fn classify<R: Rng + ?Sized>(
    set: &ArrivalSet,
    model: &ArrivalCountModel,
    curve: &OutlierProbabilityCurve,
    rng: &mut R,
) -> Result<Vec<bool>> {
    let gate = model.gate_probability(set.len());
    set.positions()
        .iter()
        .map(|&s| {
            let u_gate: f64 = rng.random();
            if u_gate < gate {
                let u_curve: f64 = rng.random();
                Ok(u_curve < curve.probability_at(s)?)
            } else {
                Ok(false)
            }
        })
        .collect()
}

/// [`classify`] plus attaching the verdicts to the set.
pub fn classify_into<R: Rng + ?Sized>(
    set: &mut ArrivalSet,
    model: &ArrivalCountModel,
    curve: &OutlierProbabilityCurve,
    rng: &mut R,
) -> Result<()> {
    let verdicts = classify(set, model, curve, rng)?;
    set.set_classified(verdicts)
}

/// Truth-conditional performance of attached verdicts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassificationRates {
    /// Fraction of true outliers that were flagged.
    pub success_rate: f64,
    /// Fraction of true normals that were flagged; `None` when the window
    /// held no normal arrivals.
    pub false_positive_rate: Option<f64>,
}

/// Score attached verdicts against truth labels.
pub fn classification_rates(set: &ArrivalSet) -> Result<ClassificationRates> {
    let truth = set
        .truth()
        .ok_or_else(|| Error::invalid("set carries no truth labels".to_string()))?;
    let verdicts = set
        .classified()
        .ok_or_else(|| Error::invalid("set carries no verdicts".to_string()))?;
    let mut outliers = 0usize;
    let mut outliers_flagged = 0usize;
    let mut normals = 0usize;
    let mut normals_flagged = 0usize;
    for (label, &flagged) in truth.iter().zip(verdicts) {
        match label {
            Label::Outlier => {
                outliers += 1;
                if flagged {
                    outliers_flagged += 1;
                }
            }
            Label::Normal => {
                normals += 1;
                if flagged {
                    normals_flagged += 1;
                }
            }
        }
    }
    if outliers == 0 {
        return Err(Error::UndefinedRate(
            "success rate is undefined: the window holds no true outliers".to_string(),
        ));
    }
    Ok(ClassificationRates {
        success_rate: outliers_flagged as f64 / outliers as f64,
        false_positive_rate: if normals > 0 {
            Some(normals_flagged as f64 / normals as f64)
        } else {
            None
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SpatialGrid;
    use crate::matern::MaternParams;
    use crate::rng::{substream, StreamDomain};
    use nalgebra::{DMatrix, DVector};

    fn deterministic_model(mu: f64) -> ArrivalCountModel {
        ArrivalCountModel {
            mu_n: mu,
            sigma_n: 0.0,
            unit_time: 1.0,
        }
    }

    fn flat_curve(p: f64) -> OutlierProbabilityCurve {
        let grid = SpatialGrid::new(13.0, 4).unwrap();
        // log-variance 0 makes both closed forms agree at a constant value;
        // pick the log-mean so that rate/(mu + rate) = p with rate 1.
        let mu = (1.0 - p) / p;
        let field = GaussianField::from_parts(
            grid,
            DVector::from_element(4, mu.ln()),
            DMatrix::zeros(4, 4),
        )
        .unwrap();
        OutlierProbabilityCurve::mean_only(&field, 1.0).unwrap()
    }

    #[test]
    fn count_model_from_deterministic_posterior() {
        let grid = SpatialGrid::new(13.0, 26).unwrap();
        let field = GaussianField::from_parts(
            grid,
            DVector::from_element(26, 0.4f64.ln()),
            DMatrix::zeros(26, 26),
        )
        .unwrap();
        let mut rng = substream(3, StreamDomain::CountModel, 0);
        let model = ArrivalCountModel::from_posterior(&field, 50, 1.0, &mut rng).unwrap();
        // Every realization integrates to exactly 0.4 * 13 = 5.2.
        assert!((model.mu_n - 5.2).abs() < 1e-12);
        assert!(model.sigma_n < 1e-12);
    }

    #[test]
    fn count_model_moments_match_lognormal_closed_form() {
        // E[integral] = sum_i width exp(m + K_ii/2); Var[integral] =
        // sum_ij width^2 E_i E_j expm1(K_ij), by the joint lognormal
        // covariance identity.
        let grid = SpatialGrid::new(13.0, 40).unwrap();
        let params = MaternParams::new(0.6, 1.5, 2.0).unwrap();
        let field = GaussianField::from_matern_const_mean(grid.clone(), -1.0, &params).unwrap();
        let width = grid.cell_width();
        let stats = field.intensity_stats();
        let want_mean: f64 = stats.iter().map(|s| s.mean * width).sum();
        let mut want_var = 0.0;
        for i in 0..40 {
            for j in 0..40 {
                want_var +=
                    width * width * stats[i].mean * stats[j].mean * field.cov()[(i, j)].exp_m1();
            }
        }
        let mut rng = substream(4, StreamDomain::CountModel, 0);
        let model = ArrivalCountModel::from_posterior(&field, 40_000, 1.0, &mut rng).unwrap();
        assert!(
            (model.mu_n - want_mean).abs() < 4.0 * want_var.sqrt() / 200.0,
            "mu {} vs {want_mean}",
            model.mu_n
        );
        assert!(
            (model.sigma_n - want_var.sqrt()).abs() / want_var.sqrt() < 0.05,
            "sigma {} vs {}",
            model.sigma_n,
            want_var.sqrt()
        );
    }

    #[test]
    fn count_model_duration_divides_realizations() {
        let grid = SpatialGrid::new(13.0, 26).unwrap();
        let field = GaussianField::from_parts(
            grid,
            DVector::from_element(26, 2.0f64.ln()),
            DMatrix::zeros(26, 26),
        )
        .unwrap();
        let mut rng = substream(5, StreamDomain::CountModel, 0);
        let model = ArrivalCountModel::from_posterior(&field, 10, 4.0, &mut rng).unwrap();
        assert!((model.mu_n - 2.0 * 13.0 / 4.0).abs() < 1e-12);
    }

    #[test]
    fn scaling_preserves_the_ratio() {
        let model = ArrivalCountModel {
            mu_n: 4.0,
            sigma_n: 10.0,
            unit_time: 1.0,
        };
        let month = model.scaled(30.0).unwrap();
        assert_eq!(month.mu_n, 120.0);
        assert_eq!(month.sigma_n, 300.0);
        assert_eq!(month.unit_time, 30.0);
        assert!(model.scaled(0.0).is_err());
    }

    #[test]
    fn gate_probability_normal_and_degenerate() {
        let model = ArrivalCountModel {
            mu_n: 4.0,
            sigma_n: 10.0,
            unit_time: 1.0,
        };
        let normal = Normal::new(0.0, 1.0).unwrap();
        assert!((model.gate_probability(24) - normal.cdf(2.0)).abs() < 1e-15);
        assert!((model.gate_probability(4) - 0.5).abs() < 1e-15);
        let det = deterministic_model(4.0);
        assert_eq!(det.gate_probability(5), 1.0);
        assert_eq!(det.gate_probability(3), 0.0);
        assert_eq!(det.gate_probability(4), 0.5);
    }

    #[test]
    fn closed_gate_flags_nothing() {
        let set = ArrivalSet::new(vec![1.0; 50], 13.0).unwrap();
        // 50 arrivals with mu_n = 100 and sigma 0: gate probability 0.
        let model = deterministic_model(100.0);
        let curve = flat_curve(0.9);
        let mut rng = substream(6, StreamDomain::Classify, 0);
        let verdicts = classify(&set, &model, &curve, &mut rng).unwrap();
        assert!(verdicts.iter().all(|v| !v));
    }

    #[test]
    fn open_gate_uses_curve_probability() {
        let n = 20_000;
        let set = ArrivalSet::new(vec![6.5; n], 13.0).unwrap();
        let model = deterministic_model(1.0); // gate always open
        let curve = flat_curve(0.3);
        assert!((curve.probability_at(6.5).unwrap() - 0.3).abs() < 1e-12);
        let mut rng = substream(7, StreamDomain::Classify, 0);
        let verdicts = classify(&set, &model, &curve, &mut rng).unwrap();
        let rate = verdicts.iter().filter(|v| **v).count() as f64 / n as f64;
        // Binomial sd is sqrt(0.3 * 0.7 / 20000) ~ 0.0032; allow 4 sigma.
        assert!((rate - 0.3).abs() < 0.013, "flag rate {rate}");
    }

    #[test]
    fn half_open_gate_halves_the_flag_rate() {
        let n = 20_000;
        let set = ArrivalSet::new(vec![6.5; n], 13.0).unwrap();
        let model = deterministic_model(n as f64); // observed == mu: gate 1/2
        let curve = flat_curve(0.8);
        let mut rng = substream(8, StreamDomain::Classify, 0);
        let verdicts = classify(&set, &model, &curve, &mut rng).unwrap();
        let rate = verdicts.iter().filter(|v| **v).count() as f64 / n as f64;
        assert!((rate - 0.4).abs() < 0.014, "flag rate {rate}");
    }

    #[test]
    fn classification_is_deterministic_per_stream() {
        let set = ArrivalSet::new((0..100).map(|i| i as f64 * 0.13).collect(), 13.0).unwrap();
        let model = ArrivalCountModel {
            mu_n: 50.0,
            sigma_n: 30.0,
            unit_time: 1.0,
        };
        let curve = flat_curve(0.5);
        let a = classify(
            &set,
            &model,
            &curve,
            &mut substream(9, StreamDomain::Classify, 1),
        )
        .unwrap();
        let b = classify(
            &set,
            &model,
            &curve,
            &mut substream(9, StreamDomain::Classify, 1),
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rates_from_hand_built_verdicts() {
        let mut set = ArrivalSet::new(vec![1.0, 2.0, 3.0, 4.0, 5.0], 13.0)
            .unwrap()
            .with_truth(vec![
                Label::Outlier,
                Label::Outlier,
                Label::Normal,
                Label::Normal,
                Label::Normal,
            ])
            .unwrap();
        set.set_classified(vec![true, false, true, false, false])
            .unwrap();
        let rates = classification_rates(&set).unwrap();
        assert_eq!(rates.success_rate, 0.5);
        assert_eq!(rates.false_positive_rate, Some(1.0 / 3.0));
    }

    #[test]
    fn rates_require_labels_and_outliers() {
        let set = ArrivalSet::new(vec![1.0], 13.0).unwrap();
        assert!(classification_rates(&set).is_err());

        let mut all_normal = ArrivalSet::new(vec![1.0, 2.0], 13.0)
            .unwrap()
            .with_truth(vec![Label::Normal, Label::Normal])
            .unwrap();
        all_normal.set_classified(vec![false, false]).unwrap();
        assert!(matches!(
            classification_rates(&all_normal),
            Err(Error::UndefinedRate(_))
        ));

        // No normals: success rate defined, false-positive rate absent.
        let mut all_outlier = ArrivalSet::new(vec![1.0, 2.0], 13.0)
            .unwrap()
            .with_truth(vec![Label::Outlier, Label::Outlier])
            .unwrap();
        all_outlier.set_classified(vec![true, false]).unwrap();
        let rates = classification_rates(&all_outlier).unwrap();
        assert_eq!(rates.success_rate, 0.5);
        assert_eq!(rates.false_positive_rate, None);
    }

    #[test]
    fn gate_skip_consumes_one_uniform_per_arrival() {
        // With the gate closed, each arrival must consume exactly one draw:
        // replaying the stream after n draws reproduces a fresh classify of
        // a second set.
        let first = ArrivalSet::new(vec![1.0; 7], 13.0).unwrap();
        let second = ArrivalSet::new(vec![2.0; 5], 13.0).unwrap();
        let closed = deterministic_model(100.0);
        let open = deterministic_model(0.0);
        let curve = flat_curve(0.5);

        let mut joint = substream(10, StreamDomain::Classify, 0);
        classify(&first, &closed, &curve, &mut joint).unwrap();
        let joint_second = classify(&second, &open, &curve, &mut joint).unwrap();

        let mut manual = substream(10, StreamDomain::Classify, 0);
        for _ in 0..7 {
            let _: f64 = manual.random();
        }
        let manual_second = classify(&second, &open, &curve, &mut manual).unwrap();
        assert_eq!(joint_second, manual_second);
    }
}
