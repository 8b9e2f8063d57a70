//! Synthetic panel generator: climate from a stable seasonal VAR(1),
//! relative risk from a known zero-adjusted gamma model with lagged
//! climate effects, and case counts back-computed as Poisson draws
//! consistent with the risk and populations.

use std::collections::BTreeMap;

use nalgebra::{Complex, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::panel::{
    CantonData, CantonSeries, ClimateRecord, Covariate, MonthIndex, MonthlyPanel, NationalSeries,
};
use crate::rng::derive_seed;
use crate::zadist::{zaga_draw, ZagaParams};

/// Lag depth of the generator's climate effects; matches the default
/// model lag depth so the fitted class contains the generator.
pub const SIM_MAX_LAG: usize = 18;

/// Generator parameters. Defaults echo the study's scale: monthly data,
/// a 16% zero rate, and moderate climate persistence.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n_cantons: usize,
    pub n_months: usize,
    pub start: MonthIndex,
    /// Point mass at zero (ν) of the risk distribution.
    pub zero_rate: f64,
    /// Coefficient of variation (σ) of the positive risk component.
    pub sigma: f64,
    /// Diagonal persistence of the climate VAR(1); the generator
    /// refuses to run when the implied spectral radius reaches 1.
    pub climate_persistence: f64,
    /// Multiplier on the lagged precipitation/ENSO effects in log μ.
    pub effect_scale: f64,
    /// Amplitude of the seasonal component of log μ.
    pub seasonal_amplitude: f64,
    /// Coefficient on the previous month's risk in log μ.
    pub rr_feedback: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_cantons: 8,
            n_months: 252,
            start: MonthIndex::new(2000, 1).expect("valid month"),
            zero_rate: 0.16,
            sigma: 0.5,
            climate_persistence: 0.5,
            effect_scale: 1.0,
            seasonal_amplitude: 0.3,
            rr_feedback: 0.15,
        }
    }
}

/// Per-covariate seasonal means, fluctuation scales and the VAR(1)
/// matrix of the climate generator.
struct ClimateGen {
    a: DMatrix<f64>,
    scales: [f64; 5],
}

impl ClimateGen {
    fn new(persistence: f64) -> Self {
        let diag = [1.0, 0.9, 0.8, 0.95, 0.85];
        let mut a = DMatrix::zeros(5, 5);
        for i in 0..5 {
            a[(i, i)] = persistence * diag[i];
            if i + 1 < 5 {
                a[(i, i + 1)] = 0.04;
            }
        }
        Self {
            a,
            scales: [60.0, 0.35, 0.05, 1.5, 0.3],
        }
    }

    fn spectral_radius(&self) -> f64 {
        let eigs: Vec<Complex<f64>> = self
            .a
            .clone()
            .complex_eigenvalues()
            .iter()
            .copied()
            .collect();
        eigs.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    fn seasonal_mean(cov: Covariate, month: u8) -> f64 {
        let phase = 2.0 * std::f64::consts::PI * f64::from(month - 1) / 12.0;
        match cov {
            Covariate::Precip => 220.0 + 120.0 * (phase - 1.0).sin(),
            Covariate::Ssta => 0.3 * (phase + 0.5).sin(),
            Covariate::Ndvi => 0.55 + 0.15 * (phase - 2.0).sin(),
            Covariate::Lst => 300.0 + 4.0 * phase.sin(),
            Covariate::Tna => 0.2 * (phase + 2.0).sin(),
        }
    }

    fn record(&self, z: &DVector<f64>, month: u8) -> ClimateRecord {
        let value =
            |cov: Covariate, i: usize| Self::seasonal_mean(cov, month) + self.scales[i] * z[i];
        ClimateRecord {
            precip: value(Covariate::Precip, 0).max(0.0),
            ssta: value(Covariate::Ssta, 1),
            ndvi: value(Covariate::Ndvi, 2).clamp(-1.0, 1.0),
            lst: value(Covariate::Lst, 3).max(1.0),
            tna: value(Covariate::Tna, 4),
        }
    }
}

/// Everything needed to check the generator against fitted models.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTruth {
    pub config: SimConfig,
    pub seed: u64,
    /// Latent mixture parameter μ_t per canton over the panel months.
    pub mu: BTreeMap<String, Vec<f64>>,
    /// The risk values drawn from the ZAGA model (before Poisson noise
    /// enters through the case counts).
    pub rr_drawn: BTreeMap<String, Vec<f64>>,
    pub intercepts: BTreeMap<String, f64>,
    /// Affine lag weights w(ℓ) = w0 + w1·ℓ applied to standardized
    /// precipitation and ENSO histories.
    pub precip_weights: (f64, f64),
    pub ssta_weights: (f64, f64),
}

fn canton_name(i: usize) -> String {
    format!("c{:03}", i + 1)
}

/// Affine-in-lag weighted average of the last `SIM_MAX_LAG + 1` values
/// of a standardized series, newest first at lag 0.
fn lag_effect(history: &[f64], t: usize, mean: f64, scale: f64, w: (f64, f64)) -> f64 {
    let mut sum = 0.0;
    for l in 0..=SIM_MAX_LAG {
        let x = (history[t - l] - mean) / scale;
        sum += (w.0 + w.1 * l as f64) * x;
    }
    sum
}

/// Generate a synthetic panel and its ground truth. Deterministic in
/// `seed`: per-canton generators are derived streams of the master.
pub fn simulate_panel(config: &SimConfig, seed: u64) -> Result<(MonthlyPanel, SimTruth)> {
    if config.n_cantons < 2 {
        return Err(Error::InvalidSpec(format!(
            "{} cantons, need at least 2",
            config.n_cantons
        )));
    }
    if config.n_months < 60 {
        return Err(Error::InvalidSpec(format!(
            "{} months, need at least 60",
            config.n_months
        )));
    }
    if !(0.0..1.0).contains(&config.zero_rate) {
        return Err(Error::InvalidSpec(format!(
            "zero rate {} outside [0, 1)",
            config.zero_rate
        )));
    }
    if config.sigma <= 0.0 || !config.sigma.is_finite() {
        return Err(Error::InvalidSpec(format!(
            "sigma {} not positive",
            config.sigma
        )));
    }
    let gen = ClimateGen::new(config.climate_persistence);
    let radius = gen.spectral_radius();
    if radius >= 1.0 {
        return Err(Error::UnstableGenerator(radius));
    }

    let n_months = config.n_months;
    let burn = 60 + SIM_MAX_LAG;
    let total = burn + n_months;
    let months: Vec<MonthIndex> = (0..n_months).map(|t| config.start.plus_months(t)).collect();
    // Calendar month of generator step i; step `burn` is the panel start.
    let month_at = |i: usize| {
        let k = i64::from(config.start.month) - 1 + i as i64 - burn as i64;
        (k.rem_euclid(12) + 1) as u8
    };

    // National series: deterministic, strictly positive, seasonal.
    let national_pop: u64 = 5_000_000;
    let national_cases: Vec<u64> = (0..n_months)
        .map(|t| {
            let phase = 2.0 * std::f64::consts::PI * f64::from(months[t].month - 1) / 12.0;
            (3000.0 + 1200.0 * phase.sin() + 0.2 * t as f64)
                .round()
                .max(1.0) as u64
        })
        .collect();

    let precip_w = (0.45 / 19.0, -0.018 / 19.0);
    let ssta_w = (0.25 / 19.0, -0.008 / 19.0);

    let mut cantons = BTreeMap::new();
    let mut mu_truth = BTreeMap::new();
    let mut rr_truth = BTreeMap::new();
    let mut intercept_truth = BTreeMap::new();

    for c in 0..config.n_cantons {
        let id = canton_name(c);
        let canton_seed = derive_seed(seed, c as u64);
        let mut climate_rng = ChaCha8Rng::seed_from_u64(derive_seed(canton_seed, 0));
        let mut risk_rng = ChaCha8Rng::seed_from_u64(derive_seed(canton_seed, 1));
        let mut case_rng = ChaCha8Rng::seed_from_u64(derive_seed(canton_seed, 2));

        // Climate: VAR(1) deviations around seasonal means, burn-in
        // included so the panel starts in the stationary regime.
        let mut z = DVector::zeros(5);
        let mut climate_full: Vec<ClimateRecord> = Vec::with_capacity(total);
        for i in 0..total {
            let eps = DVector::from_fn(5, |_, _| StandardNormal.sample(&mut climate_rng));
            z = &gen.a * &z + eps;
            climate_full.push(gen.record(&z, month_at(i)));
        }
        let precip_full: Vec<f64> = climate_full.iter().map(|r| r.precip).collect();
        let ssta_full: Vec<f64> = climate_full.iter().map(|r| r.ssta).collect();

        // Risk: log μ with intercept, seasonal term, lagged climate
        // effects and feedback on the previous drawn risk.
        let b0 = -0.05 + 0.22 * ((c * 37 % 7) as f64 / 7.0 - 0.5);
        let phase_shift = 0.3 * c as f64;
        let mut mu_path = Vec::with_capacity(n_months);
        let mut rr_path = Vec::with_capacity(n_months);
        let mut rr_prev = 1.0;
        for (t, month) in months.iter().enumerate() {
            let i = burn + t;
            let phase = 2.0 * std::f64::consts::PI * f64::from(month.month - 1) / 12.0;
            let eta = b0
                + config.rr_feedback * rr_prev
                + config.seasonal_amplitude * (phase + phase_shift).sin()
                + config.effect_scale * lag_effect(&precip_full, i, 220.0, 60.0, precip_w)
                + config.effect_scale * lag_effect(&ssta_full, i, 0.0, 0.35, ssta_w);
            let mu = eta.exp();
            let params = ZagaParams::new(mu, config.sigma, config.zero_rate)?;
            let rr = zaga_draw(&params, &mut risk_rng);
            mu_path.push(mu);
            rr_path.push(rr);
            rr_prev = rr;
        }

        // Cases: Poisson draws whose expectation reproduces the drawn
        // risk given the populations.
        let population: u64 = 200_000 + 60_000 * (c as u64 % 7);
        let mut cases = Vec::with_capacity(n_months);
        for t in 0..n_months {
            let national_incidence = national_cases[t] as f64 / national_pop as f64;
            let lambda = rr_path[t] * national_incidence * population as f64;
            let draw = if lambda > 0.0 {
                Poisson::new(lambda)
                    .map_err(|e| Error::InvalidSpec(format!("Poisson rate {lambda}: {e}")))?
                    .sample(&mut case_rng) as u64
            } else {
                0
            };
            cases.push(draw.min(national_cases[t]));
        }

        let climate: Vec<ClimateRecord> = climate_full[burn..].to_vec();
        cantons.insert(
            id.clone(),
            CantonData {
                series: CantonSeries::new(
                    id.clone(),
                    months.clone(),
                    cases,
                    vec![population; n_months],
                )?,
                climate,
            },
        );
        mu_truth.insert(id.clone(), mu_path);
        rr_truth.insert(id.clone(), rr_path);
        intercept_truth.insert(id, b0);
    }

    let national = NationalSeries {
        months: months.clone(),
        cases: national_cases,
        population: vec![national_pop; n_months],
    };
    let panel = MonthlyPanel::new(cantons, national)?;
    let truth = SimTruth {
        config: config.clone(),
        seed,
        mu: mu_truth,
        rr_drawn: rr_truth,
        intercepts: intercept_truth,
        precip_weights: precip_w,
        ssta_weights: ssta_w,
    };
    Ok((panel, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::compute_relative_risk;

    #[test]
    fn identical_seeds_identical_panels() {
        let config = SimConfig {
            n_cantons: 3,
            n_months: 72,
            ..SimConfig::default()
        };
        let (a, ta) = simulate_panel(&config, 7).unwrap();
        let (b, tb) = simulate_panel(&config, 7).unwrap();
        assert_eq!(ta, tb);
        for id in a.canton_ids() {
            let ca = a.canton(&id).unwrap();
            let cb = b.canton(&id).unwrap();
            assert_eq!(ca.series.cases, cb.series.cases);
            let pa: Vec<u64> = ca.climate.iter().map(|r| r.precip.to_bits()).collect();
            let pb: Vec<u64> = cb.climate.iter().map(|r| r.precip.to_bits()).collect();
            assert_eq!(pa, pb);
        }

        let (c, _) = simulate_panel(&config, 8).unwrap();
        let first = a.canton("c001").unwrap();
        let other = c.canton("c001").unwrap();
        assert_ne!(first.series.cases, other.series.cases);
    }

    #[test]
    fn null_generator_fluctuates_around_one() {
        let config = SimConfig {
            n_cantons: 2,
            n_months: 252,
            zero_rate: 0.0,
            effect_scale: 0.0,
            seasonal_amplitude: 0.0,
            rr_feedback: 0.0,
            sigma: 0.3,
            ..SimConfig::default()
        };
        let (panel, truth) = simulate_panel(&config, 11).unwrap();
        for id in panel.canton_ids() {
            // With all effects off, log μ is the canton intercept.
            let b0 = truth.intercepts[&id];
            let expect = b0.exp();
            let rr = compute_relative_risk(&panel, &id).unwrap();
            let mean = rr.rr.iter().sum::<f64>() / rr.rr.len() as f64;
            assert!(
                (mean - expect).abs() < 0.05 * expect,
                "canton {id}: realized mean {mean} vs declared {expect}"
            );
            assert!(truth.mu[&id].iter().all(|&m| (m - expect).abs() < 1e-12));
        }
    }

    #[test]
    fn declared_zero_rate_realized() {
        let config = SimConfig {
            n_cantons: 6,
            n_months: 252,
            ..SimConfig::default()
        };
        let (panel, truth) = simulate_panel(&config, 3).unwrap();
        let mut zeros = 0usize;
        let mut total = 0usize;
        for id in panel.canton_ids() {
            for &rr in &truth.rr_drawn[&id] {
                total += 1;
                if rr == 0.0 {
                    zeros += 1;
                }
            }
        }
        let frac = zeros as f64 / total as f64;
        let se = (0.16 * 0.84 / total as f64).sqrt();
        assert!(
            (frac - 0.16).abs() < 3.0 * se,
            "zero fraction {frac}, {total} draws"
        );

        // Zero drawn risk propagates to zero observed cases.
        for id in panel.canton_ids() {
            let data = panel.canton(&id).unwrap();
            for (t, &rr) in truth.rr_drawn[&id].iter().enumerate() {
                if rr == 0.0 {
                    assert_eq!(data.series.cases[t], 0);
                }
            }
        }
    }

    #[test]
    fn realized_risk_tracks_drawn_risk() {
        let config = SimConfig {
            n_cantons: 4,
            n_months: 120,
            ..SimConfig::default()
        };
        let (panel, truth) = simulate_panel(&config, 5).unwrap();
        for id in panel.canton_ids() {
            let realized = compute_relative_risk(&panel, &id).unwrap().rr;
            let drawn = &truth.rr_drawn[&id];
            let mean_r = realized.iter().sum::<f64>() / realized.len() as f64;
            let mean_d = drawn.iter().sum::<f64>() / drawn.len() as f64;
            let mut num = 0.0;
            let mut den_r = 0.0;
            let mut den_d = 0.0;
            for t in 0..realized.len() {
                num += (realized[t] - mean_r) * (drawn[t] - mean_d);
                den_r += (realized[t] - mean_r).powi(2);
                den_d += (drawn[t] - mean_d).powi(2);
            }
            let corr = num / (den_r.sqrt() * den_d.sqrt());
            assert!(corr > 0.95, "canton {id}: correlation {corr}");
        }
    }

    #[test]
    fn unstable_climate_rejected() {
        let config = SimConfig {
            climate_persistence: 1.2,
            ..SimConfig::default()
        };
        match simulate_panel(&config, 1) {
            Err(Error::UnstableGenerator(radius)) => assert!(radius >= 1.0),
            other => panic!("expected UnstableGenerator, got {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        let one_canton = SimConfig {
            n_cantons: 1,
            ..SimConfig::default()
        };
        assert!(matches!(
            simulate_panel(&one_canton, 1),
            Err(Error::InvalidSpec(_))
        ));
        let short = SimConfig {
            n_months: 59,
            ..SimConfig::default()
        };
        assert!(matches!(
            simulate_panel(&short, 1),
            Err(Error::InvalidSpec(_))
        ));
        let bad_nu = SimConfig {
            zero_rate: 1.0,
            ..SimConfig::default()
        };
        assert!(matches!(
            simulate_panel(&bad_nu, 1),
            Err(Error::InvalidSpec(_))
        ));
    }

    #[test]
    fn panel_enumerates_cantons_in_order() {
        let config = SimConfig {
            n_cantons: 12,
            n_months: 60,
            ..SimConfig::default()
        };
        let (panel, _) = simulate_panel(&config, 2).unwrap();
        let ids = panel.canton_ids();
        assert_eq!(ids.len(), 12);
        assert_eq!(ids[0], "c001");
        assert_eq!(ids[11], "c012");
        assert_eq!(panel.n_months(), 60);
        assert_eq!(panel.months[0], MonthIndex::new(2000, 1).unwrap());
    }
}
