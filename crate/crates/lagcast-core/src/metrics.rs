//! Forecast scoring: NRMSE and the normalized interval score NIS_α,
//! plus per-canton model selection.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Observed values, point forecasts and prediction intervals for one
/// canton's test months.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredForecast {
    pub observed: Vec<f64>,
    pub point: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Interval level, e.g. 0.95.
    pub alpha: f64,
}

impl ScoredForecast {
    pub fn new(
        observed: Vec<f64>,
        point: Vec<f64>,
        lower: Vec<f64>,
        upper: Vec<f64>,
        alpha: f64,
    ) -> Result<Self> {
        let m = observed.len();
        if m == 0 || point.len() != m || lower.len() != m || upper.len() != m {
            return Err(Error::MisalignedScores(format!(
                "lengths observed={m} point={} lower={} upper={}",
                point.len(),
                lower.len(),
                upper.len()
            )));
        }
        let all = observed.iter().chain(&point).chain(&lower).chain(&upper);
        for v in all {
            if !v.is_finite() {
                return Err(Error::MisalignedScores("non-finite score input".into()));
            }
        }
        if let Some(t) = (0..m).find(|&t| lower[t] > upper[t]) {
            return Err(Error::MisalignedScores(format!(
                "interval {t} has lower {} above upper {}",
                lower[t], upper[t]
            )));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidAlpha(alpha));
        }
        Ok(Self {
            observed,
            point,
            lower,
            upper,
            alpha,
        })
    }

    pub fn m(&self) -> usize {
        self.observed.len()
    }

    fn mean_observed(&self) -> Result<f64> {
        let mean = self.observed.iter().sum::<f64>() / self.m() as f64;
        if mean > 0.0 {
            Ok(mean)
        } else {
            Err(Error::ZeroMeanRisk)
        }
    }
}

/// Normalized root-mean-squared error with the normalization inside the
/// root: sqrt( (1/(m·R̄R)) Σ (RR_t − R̂R_t)² ). Scaling observations and
/// forecasts by c therefore scales the result by √c.
pub fn nrmse(scored: &ScoredForecast) -> Result<f64> {
    let mean = scored.mean_observed()?;
    let sum: f64 = scored
        .observed
        .iter()
        .zip(&scored.point)
        .map(|(o, p)| (o - p) * (o - p))
        .sum();
    Ok((sum / (scored.m() as f64 * mean)).sqrt())
}

/// Conventional scale-free alternative, RMSE divided by the observed
/// mean. Never used for model selection; provided for comparison only.
pub fn nrmse_conventional(scored: &ScoredForecast) -> Result<f64> {
    let mean = scored.mean_observed()?;
    let mse: f64 = scored
        .observed
        .iter()
        .zip(&scored.point)
        .map(|(o, p)| (o - p) * (o - p))
        .sum::<f64>()
        / scored.m() as f64;
    Ok(mse.sqrt() / mean)
}

/// Normalized interval score:
/// (1/(m·R̄R)) Σ [ (U−L) + (2/(1−α))(L−RR)·1{RR<L} + (2/(1−α))(RR−U)·1{RR>U} ].
pub fn nis(scored: &ScoredForecast) -> Result<f64> {
    if !(scored.alpha > 0.0 && scored.alpha < 1.0) {
        return Err(Error::InvalidAlpha(scored.alpha));
    }
    let mean = scored.mean_observed()?;
    let penalty = 2.0 / (1.0 - scored.alpha);
    let mut sum = 0.0;
    for t in 0..scored.m() {
        let (o, l, u) = (scored.observed[t], scored.lower[t], scored.upper[t]);
        sum += u - l;
        if o < l {
            sum += penalty * (l - o);
        }
        if o > u {
            sum += penalty * (o - u);
        }
    }
    Ok(sum / (scored.m() as f64 * mean))
}

/// NRMSE and NIS for one method on one canton.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodScore {
    pub nrmse: f64,
    pub nis: f64,
}

/// The winning method: smallest NIS, ties broken by smaller NRMSE,
/// remaining ties by lexicographically smallest name. A single scored
/// method wins by default.
pub fn best_model(scores: &BTreeMap<String, MethodScore>) -> Result<String> {
    if scores.is_empty() {
        return Err(Error::MisalignedScores("no methods scored".into()));
    }
    for (name, s) in scores {
        if !s.nis.is_finite() || !s.nrmse.is_finite() {
            return Err(Error::MisalignedScores(format!(
                "method '{name}' has non-finite scores"
            )));
        }
    }
    let mut best: Option<(&String, &MethodScore)> = None;
    for (name, s) in scores {
        let better = match best {
            None => true,
            Some((_, b)) => s.nis < b.nis || (s.nis == b.nis && s.nrmse < b.nrmse),
        };
        if better {
            best = Some((name, s));
        }
    }
    Ok(best.expect("non-empty scores").0.clone())
}
