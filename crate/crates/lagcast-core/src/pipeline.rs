//! Per-canton forecasting pipeline: shared design assembly, GAMLSS and
//! random-forest fits, VAR climate forecasts, recursive multi-step risk
//! forecasting, residual block-bootstrap intervals, and scoring.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::basis::{cross_basis, quantile_type7, BasisSpec, CrossBasis};
use crate::error::{Error, Result};
use crate::forest::{fit_forest, predict_forest, ForestConfig, ForestModel};
use crate::gamlss::{
    assemble_design, fit_zaga, predict_response, prediction_row, AssembledDesign, ZagaFit,
};
use crate::metrics::{best_model, nis, nrmse, MethodScore, ScoredForecast};
use crate::panel::{compute_relative_risk, Covariate, MonthIndex, MonthlyPanel, RiskSeries};
use crate::rng::derive_seed;
use crate::var::{fit_var, forecast_var, select_lag_bic, ExogSpec, VarForecast, VarModel};

/// Nominal coverage of the bootstrap intervals.
pub const ALPHA95: f64 = 0.95;

/// Derived-stream indices off a canton's seed.
const STREAM_FOREST: u64 = 1;
const STREAM_BOOT_GAMLSS: u64 = 2;
const STREAM_BOOT_RF: u64 = 3;

/// A fitting method for the shared design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Method {
    Gamlss,
    Rf,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Gamlss => "gamlss",
            Method::Rf => "rf",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        match s {
            "gamlss" => Ok(Method::Gamlss),
            "rf" => Ok(Method::Rf),
            other => Err(Error::InvalidSpec(format!("unknown method '{other}'"))),
        }
    }
}

/// Which methods a run fits and compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MethodChoice {
    Gamlss,
    Rf,
    #[default]
    Both,
}

impl MethodChoice {
    pub fn methods(self) -> Vec<Method> {
        match self {
            MethodChoice::Gamlss => vec![Method::Gamlss],
            MethodChoice::Rf => vec![Method::Rf],
            MethodChoice::Both => vec![Method::Gamlss, Method::Rf],
        }
    }

    pub fn parse(s: &str) -> Result<MethodChoice> {
        match s {
            "gamlss" => Ok(MethodChoice::Gamlss),
            "rf" => Ok(MethodChoice::Rf),
            "both" => Ok(MethodChoice::Both),
            other => Err(Error::InvalidSpec(format!(
                "unknown method choice '{other}'"
            ))),
        }
    }
}

/// Everything that parameterizes one canton's fit-and-forecast run.
///
/// `bases` pairs a variable-dimension and a lag-dimension basis per
/// covariate, in [`Covariate::ALL`] order. The default uses smooth
/// B-spline variable bases for precipitation and sea-surface anomalies
/// (the covariates with nonlinear documented effects) and linear bases
/// elsewhere, each with a linear lag profile.
#[derive(Debug, Clone, PartialEq)]
pub struct CantonSpec {
    pub train_start: MonthIndex,
    pub train_end: MonthIndex,
    /// Forecast horizon in months.
    pub horizon: usize,
    /// Lag depth of every cross-basis.
    pub max_lag: usize,
    /// Per-covariate (variable basis, lag basis), in `Covariate::ALL` order.
    pub bases: [(BasisSpec, BasisSpec); 5],
    pub method: MethodChoice,
    /// Bootstrap replicates.
    pub n_boot: usize,
    /// Circular block length for residual resampling.
    pub block_len: usize,
    pub seed: u64,
    /// Forest hyperparameters; the seed field is superseded by a
    /// stream derived from `seed`.
    pub forest: ForestConfig,
    /// Largest VAR order considered by BIC selection.
    pub var_p_max: usize,
    pub var_exog: ExogSpec,
}

impl CantonSpec {
    pub fn new(train_start: MonthIndex, train_end: MonthIndex, seed: u64) -> Self {
        let smooth = (BasisSpec::default_bspline(), BasisSpec::Linear);
        let linear = (BasisSpec::Linear, BasisSpec::Linear);
        Self {
            train_start,
            train_end,
            horizon: 3,
            max_lag: 18,
            bases: [smooth, smooth, linear, linear, linear],
            method: MethodChoice::Both,
            n_boot: 100,
            block_len: 6,
            seed,
            forest: ForestConfig::default(),
            var_p_max: 13,
            var_exog: ExogSpec::default(),
        }
    }

    /// Months in the training window (0 when it is empty or reversed).
    pub fn train_len(&self) -> usize {
        let n = self.train_end.months_since(self.train_start) + 1;
        if n > 0 {
            n as usize
        } else {
            0
        }
    }

    pub fn validate(&self) -> Result<()> {
        let len = self.train_len();
        if len == 0 {
            return Err(Error::InvalidSpec(format!(
                "train window {}..{} is empty",
                self.train_start, self.train_end
            )));
        }
        if len <= self.max_lag + 13 {
            return Err(Error::InvalidSpec(format!(
                "train window has {len} months, need more than {} \
                 (max lag {} plus 13 for the lagged-risk and seasonal terms)",
                self.max_lag + 13,
                self.max_lag
            )));
        }
        if self.horizon == 0 {
            return Err(Error::HorizonZero);
        }
        if self.n_boot == 0 {
            return Err(Error::InvalidSpec("zero bootstrap replicates".into()));
        }
        if self.block_len == 0 {
            return Err(Error::InvalidSpec("zero bootstrap block length".into()));
        }
        if self.var_p_max == 0 {
            return Err(Error::InvalidSpec("zero VAR order bound".into()));
        }
        for (var_spec, lag_spec) in &self.bases {
            var_spec.validate()?;
            lag_spec.validate()?;
        }
        Ok(())
    }
}

/// A canton's fitted state: observed risk, cross-bases, the shared
/// design, per-method fits, in-sample fitted paths, and the raw train
/// climate needed to extend lag windows into the forecast period.
#[derive(Debug, Clone)]
pub struct CantonFit {
    pub canton_id: String,
    pub spec: CantonSpec,
    /// All train months.
    pub months: Vec<MonthIndex>,
    /// Observed relative risk over `months`.
    pub rr: Vec<f64>,
    /// Raw train climate, columns in `Covariate::ALL` order.
    pub climate: DMatrix<f64>,
    pub crossbases: Vec<(Covariate, CrossBasis)>,
    pub assembled: AssembledDesign,
    pub gamlss: Option<ZagaFit>,
    pub forest: Option<ForestModel>,
    /// In-sample fitted values per method name, over the design rows.
    pub fitted: BTreeMap<String, Vec<f64>>,
}

impl CantonFit {
    pub fn methods(&self) -> Vec<Method> {
        self.spec.method.methods()
    }

    /// Months of the usable design rows.
    pub fn design_months(&self) -> Vec<MonthIndex> {
        self.assembled
            .rows
            .iter()
            .map(|&t| self.months[t])
            .collect()
    }

    fn named_crossbases(&self) -> Vec<(&str, &CrossBasis)> {
        self.crossbases
            .iter()
            .map(|(cov, cb)| (cov.name(), cb))
            .collect()
    }

    fn fitted_for(&self, method: Method) -> Result<&[f64]> {
        self.fitted
            .get(method.name())
            .map(Vec::as_slice)
            .ok_or_else(|| Error::InvalidSpec(format!("method '{}' was not fitted", method.name())))
    }
}

fn clamp_rr(x: f64) -> f64 {
    x.max(0.0)
}

/// Fit the requested methods for one canton on the train window.
pub fn fit_canton(panel: &MonthlyPanel, canton_id: &str, spec: &CantonSpec) -> Result<CantonFit> {
    spec.validate()?;
    let train = panel.slice(spec.train_start, spec.train_end)?;
    let risk = compute_relative_risk(&train, canton_id)?;
    let data = train.canton(canton_id)?;

    let t_len = train.n_months();
    let mut climate = DMatrix::zeros(t_len, Covariate::ALL.len());
    let mut crossbases = Vec::with_capacity(Covariate::ALL.len());
    for (j, &cov) in Covariate::ALL.iter().enumerate() {
        let x = data.climate_series(cov);
        for (t, &v) in x.iter().enumerate() {
            climate[(t, j)] = v;
        }
        let (var_spec, lag_spec) = &spec.bases[j];
        let cb = cross_basis(&x, spec.max_lag, var_spec, lag_spec)?;
        crossbases.push((cov, cb));
    }

    let named: Vec<(&str, &CrossBasis)> = crossbases
        .iter()
        .map(|(cov, cb)| (cov.name(), cb))
        .collect();
    let assembled = assemble_design(&risk, &named, &train.months)?;

    let mut gamlss = None;
    let mut forest = None;
    let mut fitted = BTreeMap::new();
    for method in spec.method.methods() {
        match method {
            Method::Gamlss => {
                let fit = fit_zaga(&assembled.design, &assembled.y)?;
                let path: Vec<f64> = predict_response(&fit, &assembled.design)?
                    .into_iter()
                    .map(|(_, mean)| mean)
                    .collect();
                fitted.insert(method.name().to_string(), path);
                gamlss = Some(fit);
            }
            Method::Rf => {
                let config = ForestConfig {
                    seed: derive_seed(spec.seed, STREAM_FOREST),
                    ..spec.forest.clone()
                };
                let fit = fit_forest(&assembled.design, &assembled.y, &config)?;
                let path = predict_forest(&fit, &assembled.design)?;
                fitted.insert(method.name().to_string(), path);
                forest = Some(fit);
            }
        }
    }

    Ok(CantonFit {
        canton_id: canton_id.to_string(),
        spec: spec.clone(),
        months: train.months.clone(),
        rr: risk.rr,
        climate,
        crossbases,
        assembled,
        gamlss,
        forest,
        fitted,
    })
}

/// A fitted climate VAR with its selection trace.
#[derive(Debug, Clone, PartialEq)]
pub struct ClimateModel {
    /// BIC-selected order.
    pub order: usize,
    /// BIC values for orders `1..=p_max` on the common sample.
    pub bics: Vec<f64>,
    pub model: VarModel,
}

/// Select the VAR order by BIC (capped so the fit stays identified on
/// the train window) and refit at the chosen order on the full window.
pub fn fit_climate_var(fit: &CantonFit) -> Result<ClimateModel> {
    let t = fit.climate.nrows();
    let k = fit.climate.ncols();
    let cap = t.saturating_sub(14) / k;
    let p_max = fit.spec.var_p_max.min(cap).max(1);
    let (order, bics) =
        select_lag_bic(&fit.climate, fit.spec.train_start, p_max, fit.spec.var_exog)?;
    let model = fit_var(&fit.climate, fit.spec.train_start, order, fit.spec.var_exog)?;
    Ok(ClimateModel { order, bics, model })
}

/// Mean-path climate forecast from the last `p` train months.
pub fn forecast_climate(fit: &CantonFit, climate: &ClimateModel, h: usize) -> Result<VarForecast> {
    let t = fit.climate.nrows();
    let p = climate.model.p;
    let last = fit.climate.rows(t - p, p).into_owned();
    forecast_var(&climate.model, &last, t - 1, fit.spec.train_end, h)
}

/// Extended per-covariate histories: train series followed by the VAR
/// mean forecasts, in `Covariate::ALL` column order.
fn extended_climate(fit: &CantonFit, climate_fc: &VarForecast, h: usize) -> Vec<Vec<f64>> {
    (0..fit.climate.ncols())
        .map(|j| {
            let mut v: Vec<f64> = fit.climate.column(j).iter().copied().collect();
            for s in 0..h {
                v.push(climate_fc.mean[(s, j)]);
            }
            v
        })
        .collect()
}

/// Walk the recursion: rebuild the design row at each future month from
/// the extended climate and the previous predicted risk, predict, and
/// clamp at zero. Returns the path and the count of out-of-range basis
/// evaluations that were clamped to the train range.
fn recursive_path<F>(
    fit: &CantonFit,
    ext: &[Vec<f64>],
    rr_last: f64,
    h: usize,
    predict: F,
) -> Result<(Vec<f64>, usize)>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let named = fit.named_crossbases();
    let t0 = fit.climate.nrows();
    let mut rr_prev = rr_last;
    let mut path = Vec::with_capacity(h);
    let mut clamped = 0usize;
    for s in 0..h {
        let t = t0 + s;
        let mut rows = Vec::with_capacity(named.len());
        for (j, (_, cb)) in named.iter().enumerate() {
            let (row, c) = cb.eval_row(&ext[j][..=t])?;
            clamped += c;
            rows.push(row);
        }
        let month = fit.spec.train_end.plus_months(s + 1);
        let row = prediction_row(rr_prev, &named, &rows, month)?;
        let point = clamp_rr(predict(&row)?);
        path.push(point);
        rr_prev = point;
    }
    Ok((path, clamped))
}

fn method_path(
    fit: &CantonFit,
    method: Method,
    gamlss: Option<&ZagaFit>,
    forest: Option<&ForestModel>,
    ext: &[Vec<f64>],
    rr_last: f64,
    h: usize,
) -> Result<(Vec<f64>, usize)> {
    match method {
        Method::Gamlss => {
            let f = gamlss.ok_or_else(|| Error::InvalidSpec("gamlss fit missing".into()))?;
            recursive_path(fit, ext, rr_last, h, |row| {
                crate::gamlss::predict_row(f, row).map(|(_, mean)| mean)
            })
        }
        Method::Rf => {
            let f = forest.ok_or_else(|| Error::InvalidSpec("forest fit missing".into()))?;
            recursive_path(fit, ext, rr_last, h, |row| f.predict_row(row))
        }
    }
}

/// One method's forecast for one canton. `lower`/`upper` equal `point`
/// until bootstrap intervals are attached.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastResult {
    pub canton_id: String,
    pub method: String,
    pub months: Vec<MonthIndex>,
    pub point: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Out-of-range basis evaluations clamped during the recursion.
    pub clamped: usize,
}

/// Recursive point forecasts for every fitted method. The first step
/// uses the last observed risk as the lagged-risk input; later steps
/// feed back the previous prediction. Climate lags beyond the train
/// window come from the VAR mean path.
pub fn forecast_recursive(
    fit: &CantonFit,
    climate_fc: &VarForecast,
) -> Result<Vec<ForecastResult>> {
    let h = fit.spec.horizon;
    if climate_fc.horizon < h {
        return Err(Error::HorizonExceedsVar {
            h,
            available: climate_fc.horizon,
        });
    }
    if climate_fc.mean.ncols() != fit.climate.ncols() {
        return Err(Error::MisalignedInputs(format!(
            "climate forecast has {} series, train climate {}",
            climate_fc.mean.ncols(),
            fit.climate.ncols()
        )));
    }
    let ext = extended_climate(fit, climate_fc, h);
    let rr_last = *fit
        .rr
        .last()
        .ok_or_else(|| Error::MisalignedInputs("empty train risk series".into()))?;
    let months: Vec<MonthIndex> = (1..=h).map(|s| fit.spec.train_end.plus_months(s)).collect();

    let mut out = Vec::new();
    for method in fit.methods() {
        let (path, clamped) = method_path(
            fit,
            method,
            fit.gamlss.as_ref(),
            fit.forest.as_ref(),
            &ext,
            rr_last,
            h,
        )?;
        out.push(ForecastResult {
            canton_id: fit.canton_id.clone(),
            method: method.name().to_string(),
            months: months.clone(),
            point: path.clone(),
            lower: path.clone(),
            upper: path,
            clamped,
        });
    }
    Ok(out)
}

/// Block-bootstrap output for one method.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapIntervals {
    pub method: String,
    /// 2.5% type-7 quantile of the bootstrap values per step.
    pub lower: Vec<f64>,
    /// 97.5% type-7 quantile per step.
    pub upper: Vec<f64>,
    /// All replicate forecast values, one row per replicate.
    pub samples: Vec<Vec<f64>>,
    /// Replicates whose refit failed and fell back to the base fit.
    pub refit_failures: usize,
}

/// Residual block bootstrap: resample in-sample residuals in circular
/// blocks, rebuild a pseudo-response (clamped at zero), refit, rerun
/// the recursion, and add resampled future innovations to each path so
/// the intervals reflect both estimation and innovation uncertainty.
/// A replicate whose GAMLSS refit fails falls back to the base fit and
/// is counted in `refit_failures`.
pub fn bootstrap_intervals(
    fit: &CantonFit,
    climate_fc: &VarForecast,
    method: Method,
) -> Result<BootstrapIntervals> {
    let h = fit.spec.horizon;
    if climate_fc.horizon < h {
        return Err(Error::HorizonExceedsVar {
            h,
            available: climate_fc.horizon,
        });
    }
    let fitted = fit.fitted_for(method)?;
    let y = &fit.assembled.y;
    let n = y.len();
    let block = fit.spec.block_len;
    if n < 2 * block {
        return Err(Error::TooFewResiduals { n, block });
    }
    let resid: Vec<f64> = (0..n).map(|i| y[i] - fitted[i]).collect();
    let ext = extended_climate(fit, climate_fc, h);
    let rr_last = *fit
        .rr
        .last()
        .ok_or_else(|| Error::MisalignedInputs("empty train risk series".into()))?;
    let boot_seed = derive_seed(
        fit.spec.seed,
        match method {
            Method::Gamlss => STREAM_BOOT_GAMLSS,
            Method::Rf => STREAM_BOOT_RF,
        },
    );

    let replicates: Result<Vec<(Vec<f64>, bool)>> = (0..fit.spec.n_boot)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(boot_seed, 2 * b as u64));
            // One circular-block stream covers the n train draws and
            // the h future innovations.
            let total = n + h;
            let mut e_star = Vec::with_capacity(total + block);
            while e_star.len() < total {
                let start = rng.random_range(0..n);
                for j in 0..block {
                    e_star.push(resid[(start + j) % n]);
                }
            }
            e_star.truncate(total);
            let y_star = DVector::from_fn(n, |i, _| clamp_rr(fitted[i] + e_star[i]));

            let mut fell_back = false;
            let (path, _) = match method {
                Method::Gamlss => match fit_zaga(&fit.assembled.design, &y_star) {
                    Ok(refit) => method_path(fit, method, Some(&refit), None, &ext, rr_last, h)?,
                    Err(_) => {
                        fell_back = true;
                        method_path(fit, method, fit.gamlss.as_ref(), None, &ext, rr_last, h)?
                    }
                },
                Method::Rf => {
                    let config = ForestConfig {
                        seed: derive_seed(boot_seed, 2 * b as u64 + 1),
                        ..fit.spec.forest.clone()
                    };
                    let refit = fit_forest(&fit.assembled.design, &y_star, &config)?;
                    method_path(fit, method, None, Some(&refit), &ext, rr_last, h)?
                }
            };
            let values: Vec<f64> = (0..h).map(|s| clamp_rr(path[s] + e_star[n + s])).collect();
            Ok((values, fell_back))
        })
        .collect();
    let replicates = replicates?;

    let samples: Vec<Vec<f64>> = replicates.iter().map(|(v, _)| v.clone()).collect();
    let refit_failures = replicates.iter().filter(|(_, f)| *f).count();
    let mut lower = Vec::with_capacity(h);
    let mut upper = Vec::with_capacity(h);
    for s in 0..h {
        let mut values: Vec<f64> = samples.iter().map(|p| p[s]).collect();
        values.sort_by(f64::total_cmp);
        lower.push(quantile_type7(&values, 0.025));
        upper.push(quantile_type7(&values, 0.975));
    }
    Ok(BootstrapIntervals {
        method: method.name().to_string(),
        lower,
        upper,
        samples,
        refit_failures,
    })
}

/// Merge bootstrap quantiles into a point forecast, widening them when
/// necessary so `lower ≤ point ≤ upper` holds per step.
pub fn attach_intervals(result: &mut ForecastResult, intervals: &BootstrapIntervals) -> Result<()> {
    if result.method != intervals.method {
        return Err(Error::MisalignedInputs(format!(
            "intervals for '{}' attached to '{}' forecast",
            intervals.method, result.method
        )));
    }
    if intervals.lower.len() != result.point.len() {
        return Err(Error::MisalignedInputs(format!(
            "{} interval steps for horizon {}",
            intervals.lower.len(),
            result.point.len()
        )));
    }
    result.lower = intervals
        .lower
        .iter()
        .zip(&result.point)
        .map(|(&l, &p)| l.min(p))
        .collect();
    result.upper = intervals
        .upper
        .iter()
        .zip(&result.point)
        .map(|(&u, &p)| u.max(p))
        .collect();
    Ok(())
}

/// Flat persistence baseline: every step forecasts the last observed
/// risk; intervals add the type-7 quantiles of the in-sample one-step
/// persistence errors to the point, clamped at zero and widened to
/// contain the point. Model-free: it needs only the observed train
/// risk, the end of the train window, and the horizon.
pub fn persistence_forecast(
    canton_id: &str,
    rr_train: &[f64],
    train_end: MonthIndex,
    h: usize,
) -> Result<ForecastResult> {
    if h == 0 {
        return Err(Error::HorizonZero);
    }
    if rr_train.len() < 3 {
        return Err(Error::TooFewResiduals {
            n: rr_train.len().saturating_sub(1),
            block: 1,
        });
    }
    let point = *rr_train.last().expect("nonempty");
    let mut errors: Vec<f64> = rr_train.windows(2).map(|w| w[1] - w[0]).collect();
    errors.sort_by(f64::total_cmp);
    let lo = clamp_rr(point + quantile_type7(&errors, 0.025)).min(point);
    let hi = clamp_rr(point + quantile_type7(&errors, 0.975)).max(point);
    let months: Vec<MonthIndex> = (1..=h).map(|s| train_end.plus_months(s)).collect();
    Ok(ForecastResult {
        canton_id: canton_id.to_string(),
        method: "persistence".to_string(),
        months,
        point: vec![point; h],
        lower: vec![lo; h],
        upper: vec![hi; h],
        clamped: 0,
    })
}

/// Per-canton method comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub canton_id: String,
    pub scores: BTreeMap<String, MethodScore>,
    pub best: String,
}

/// Score each forecast against observed risk (matched by month) and
/// pick the best method: smaller NIS, then smaller NRMSE, then name.
pub fn evaluate(forecasts: &[ForecastResult], observed: &RiskSeries) -> Result<ComparisonReport> {
    if forecasts.is_empty() {
        return Err(Error::MisalignedScores("no forecasts to evaluate".into()));
    }
    let canton_id = forecasts[0].canton_id.clone();
    let mut scores = BTreeMap::new();
    for fc in forecasts {
        if fc.canton_id != canton_id {
            return Err(Error::MisalignedInputs(format!(
                "forecasts mix cantons '{canton_id}' and '{}'",
                fc.canton_id
            )));
        }
        let mut obs = Vec::with_capacity(fc.months.len());
        for month in &fc.months {
            match observed.months.iter().position(|m| m == month) {
                Some(i) => obs.push(observed.rr[i]),
                None => {
                    return Err(Error::MissingObservations(format!(
                        "canton '{canton_id}', month {month}"
                    )))
                }
            }
        }
        let scored = ScoredForecast::new(
            obs,
            fc.point.clone(),
            fc.lower.clone(),
            fc.upper.clone(),
            ALPHA95,
        )?;
        let score = MethodScore {
            nrmse: nrmse(&scored)?,
            nis: nis(&scored)?,
        };
        if scores.insert(fc.method.clone(), score).is_some() {
            return Err(Error::MisalignedInputs(format!(
                "duplicate forecasts for method '{}'",
                fc.method
            )));
        }
    }
    let best = best_model(&scores)?;
    Ok(ComparisonReport {
        canton_id,
        scores,
        best,
    })
}

/// One canton's full pipeline output.
#[derive(Debug, Clone, PartialEq)]
pub struct CantonOutput {
    pub canton_id: String,
    /// Months of the usable design rows.
    pub train_months: Vec<MonthIndex>,
    /// Observed risk over the design rows.
    pub observed_train: Vec<f64>,
    /// In-sample fitted values per method.
    pub fitted: BTreeMap<String, Vec<f64>>,
    /// Interval-equipped forecasts, one per method.
    pub forecasts: Vec<ForecastResult>,
    /// Observed test risk when the panel covers the test window.
    pub observed_test: Option<Vec<f64>>,
    pub report: Option<ComparisonReport>,
    pub climate_forecast: VarForecast,
    pub var_order: usize,
    pub var_bics: Vec<f64>,
    /// False when the selected VAR has a companion root at or beyond 1.
    pub var_stable: bool,
    /// GAMLSS bootstrap replicates that fell back to the base fit.
    pub refit_failures: BTreeMap<String, usize>,
}

/// Whole-panel pipeline output, cantons in id order.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub cantons: Vec<CantonOutput>,
}

/// Fit, forecast, bootstrap, and (when test data exists) score one
/// canton.
pub fn run_canton(
    panel: &MonthlyPanel,
    canton_id: &str,
    spec: &CantonSpec,
) -> Result<CantonOutput> {
    let fit = fit_canton(panel, canton_id, spec)?;
    let climate = fit_climate_var(&fit)?;
    let climate_fc = forecast_climate(&fit, &climate, spec.horizon)?;
    let mut forecasts = forecast_recursive(&fit, &climate_fc)?;
    let mut refit_failures = BTreeMap::new();
    for result in &mut forecasts {
        let method = Method::parse(&result.method)?;
        let intervals = bootstrap_intervals(&fit, &climate_fc, method)?;
        attach_intervals(result, &intervals)?;
        refit_failures.insert(result.method.clone(), intervals.refit_failures);
    }

    let test_start = spec.train_end.plus_months(1);
    let test_end = spec.train_end.plus_months(spec.horizon);
    let (observed_test, report) = match panel.slice(test_start, test_end) {
        Ok(test_panel) => {
            let observed = compute_relative_risk(&test_panel, canton_id)?;
            let report = evaluate(&forecasts, &observed)?;
            (Some(observed.rr), Some(report))
        }
        Err(_) => (None, None),
    };

    Ok(CantonOutput {
        canton_id: fit.canton_id.clone(),
        train_months: fit.design_months(),
        observed_train: fit.assembled.y.iter().copied().collect(),
        fitted: fit.fitted.clone(),
        forecasts,
        observed_test,
        report,
        climate_forecast: climate_fc,
        var_order: climate.order,
        var_bics: climate.bics,
        var_stable: climate.model.is_stable(),
        refit_failures,
    })
}

/// Run every canton in id order. Each canton gets a seed derived from
/// the template seed and its index, so results do not depend on thread
/// count or scheduling.
pub fn run_pipeline(panel: &MonthlyPanel, template: &CantonSpec) -> Result<PipelineOutput> {
    template.validate()?;
    let ids = panel.canton_ids();
    let cantons: Result<Vec<CantonOutput>> = ids
        .par_iter()
        .enumerate()
        .map(|(i, id)| {
            let spec = CantonSpec {
                seed: derive_seed(template.seed, i as u64),
                ..template.clone()
            };
            run_canton(panel, id, &spec)
        })
        .collect();
    Ok(PipelineOutput { cantons: cantons? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gamlss::predict_row as zaga_predict_row;
    use crate::panel::{CantonData, CantonSeries, ClimateRecord, NationalSeries};
    use crate::sim::{simulate_panel, SimConfig};

    fn sim_fixture(n_cantons: usize, n_months: usize, seed: u64) -> MonthlyPanel {
        let config = SimConfig {
            n_cantons,
            n_months,
            ..SimConfig::default()
        };
        simulate_panel(&config, seed).unwrap().0
    }

    /// Template spec leaving `test_months` months after the train window.
    fn spec_for(panel: &MonthlyPanel, test_months: usize, seed: u64) -> CantonSpec {
        let n = panel.n_months();
        let mut spec = CantonSpec::new(panel.months[0], panel.months[n - 1 - test_months], seed);
        spec.horizon = test_months;
        spec
    }

    /// Panel whose first canton has varying risk before the usable
    /// design window and exactly constant risk 0.5 inside it, with
    /// aperiodic deterministic climate.
    fn constant_risk_panel(n_months: usize) -> MonthlyPanel {
        let start = MonthIndex::new(2005, 1).unwrap();
        let months: Vec<MonthIndex> = (0..n_months).map(|t| start.plus_months(t)).collect();
        let climate: Vec<ClimateRecord> = (0..n_months)
            .map(|t| {
                let t = t as f64;
                ClimateRecord {
                    precip: 200.0 + 50.0 * (0.53 * t).sin() + 0.8 * t,
                    ssta: 0.4 * (0.29 * t + 1.0).sin(),
                    ndvi: 0.5 + 0.2 * (0.41 * t + 2.0).sin(),
                    lst: 300.0 + 3.0 * (0.23 * t).sin() + 0.05 * t,
                    tna: 0.3 * (0.37 * t + 0.5).sin(),
                }
            })
            .collect();
        let national_cases = vec![1000u64; n_months];
        let mut cantons = std::collections::BTreeMap::new();
        for (id, offset) in [("alpha", 0u64), ("beta", 7u64)] {
            let cases: Vec<u64> = (0..n_months)
                .map(|t| {
                    if t < 19 {
                        40 + 10 * t as u64 + offset
                    } else {
                        100
                    }
                })
                .collect();
            cantons.insert(
                id.to_string(),
                CantonData {
                    series: CantonSeries::new(
                        id.to_string(),
                        months.clone(),
                        cases,
                        vec![200_000u64; n_months],
                    )
                    .unwrap(),
                    climate: climate.clone(),
                },
            );
        }
        let national = NationalSeries {
            months,
            cases: national_cases,
            population: vec![1_000_000u64; n_months],
        };
        MonthlyPanel::new(cantons, national).unwrap()
    }

    fn linear_spec(panel: &MonthlyPanel, seed: u64) -> CantonSpec {
        let n = panel.n_months();
        let mut spec = CantonSpec::new(panel.months[0], panel.months[n - 1], seed);
        let linear = (BasisSpec::Linear, BasisSpec::Linear);
        spec.bases = [linear, linear, linear, linear, linear];
        spec.method = MethodChoice::Rf;
        spec
    }

    #[test]
    fn spec_validation_mentions_lag_depth() {
        let start = MonthIndex::new(2010, 1).unwrap();
        let spec = CantonSpec::new(start, start.plus_months(30), 1);
        match spec.validate() {
            Err(Error::InvalidSpec(msg)) => {
                assert!(
                    msg.contains("18"),
                    "message should cite the lag depth: {msg}"
                );
                assert!(msg.contains("31"));
            }
            other => panic!("expected InvalidSpec, got {other:?}"),
        }

        let good = CantonSpec::new(start, start.plus_months(39), 1);
        assert!(good.validate().is_ok());
        assert_eq!(good.train_len(), 40);

        let mut zero_h = good.clone();
        zero_h.horizon = 0;
        assert!(matches!(zero_h.validate(), Err(Error::HorizonZero)));
        let mut zero_boot = good.clone();
        zero_boot.n_boot = 0;
        assert!(matches!(zero_boot.validate(), Err(Error::InvalidSpec(_))));
        let mut zero_block = good.clone();
        zero_block.block_len = 0;
        assert!(matches!(zero_block.validate(), Err(Error::InvalidSpec(_))));
        let mut zero_p = good.clone();
        zero_p.var_p_max = 0;
        assert!(matches!(zero_p.validate(), Err(Error::InvalidSpec(_))));
        let mut reversed = good.clone();
        reversed.train_end = start;
        reversed.train_start = start.plus_months(39);
        assert!(matches!(reversed.validate(), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn shared_design_and_insample_quality() {
        let panel = sim_fixture(2, 90, 21);
        let spec = spec_for(&panel, 3, 21);
        let fit = fit_canton(&panel, "c001", &spec).unwrap();

        let forest = fit.forest.as_ref().unwrap();
        assert!(fit.gamlss.is_some());
        // Both methods consume the identical design columns.
        assert_eq!(forest.names, fit.assembled.design.names);

        let n_rows = fit.assembled.rows.len();
        let y: Vec<f64> = fit.assembled.y.iter().copied().collect();
        for path in fit.fitted.values() {
            assert_eq!(path.len(), n_rows);
        }
        assert_eq!(fit.design_months().len(), n_rows);

        // The forest cannot do worse in sample than predicting the mean.
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let in_sample = |point: Vec<f64>| {
            let sf = ScoredForecast::new(y.clone(), point.clone(), point.clone(), point, ALPHA95)
                .unwrap();
            nrmse(&sf).unwrap()
        };
        let rf_nrmse = in_sample(fit.fitted["rf"].clone());
        let mean_nrmse = in_sample(vec![mean; n_rows]);
        assert!(
            rf_nrmse <= mean_nrmse,
            "rf in-sample {rf_nrmse} vs intercept-only {mean_nrmse}"
        );
    }

    #[test]
    fn recursive_h1_equals_direct() {
        let panel = sim_fixture(2, 80, 33);
        let mut spec = spec_for(&panel, 1, 33);
        spec.horizon = 1;
        let fit = fit_canton(&panel, "c002", &spec).unwrap();
        let climate = fit_climate_var(&fit).unwrap();
        let climate_fc = forecast_climate(&fit, &climate, 1).unwrap();
        let results = forecast_recursive(&fit, &climate_fc).unwrap();
        assert_eq!(results.len(), 2);

        // Direct one-step prediction: one appended climate value per
        // series, one rebuilt design row, one prediction.
        let ext = extended_climate(&fit, &climate_fc, 1);
        let t = fit.climate.nrows();
        let named = fit.named_crossbases();
        let mut rows = Vec::new();
        for (j, (_, cb)) in named.iter().enumerate() {
            rows.push(cb.eval_row(&ext[j][..=t]).unwrap().0);
        }
        let month = fit.spec.train_end.plus_months(1);
        let row = prediction_row(*fit.rr.last().unwrap(), &named, &rows, month).unwrap();

        for result in &results {
            let direct = match Method::parse(&result.method).unwrap() {
                Method::Gamlss => {
                    zaga_predict_row(fit.gamlss.as_ref().unwrap(), &row)
                        .unwrap()
                        .1
                }
                Method::Rf => fit.forest.as_ref().unwrap().predict_row(&row).unwrap(),
            };
            assert_eq!(result.point.len(), 1);
            assert_eq!(
                result.point[0].to_bits(),
                direct.max(0.0).to_bits(),
                "method {}",
                result.method
            );
            assert_eq!(result.months, vec![month]);
        }
    }

    #[test]
    fn constant_risk_rf_is_exact_with_degenerate_intervals() {
        let panel = constant_risk_panel(60);
        let mut spec = linear_spec(&panel, 5);
        spec.horizon = 3;
        spec.forest.n_trees = 60;
        let fit = fit_canton(&panel, "alpha", &spec).unwrap();

        // Risk is exactly 0.5 on every usable design row.
        assert!(fit.assembled.y.iter().all(|&v| v == 0.5));
        let climate = fit_climate_var(&fit).unwrap();
        let climate_fc = forecast_climate(&fit, &climate, 3).unwrap();
        let results = forecast_recursive(&fit, &climate_fc).unwrap();
        assert_eq!(results.len(), 1);
        assert!(results[0]
            .point
            .iter()
            .all(|&p| p.to_bits() == 0.5f64.to_bits()));

        // Zero residuals everywhere: every replicate reproduces the
        // fit, so the intervals collapse onto the point.
        let intervals = bootstrap_intervals(&fit, &climate_fc, Method::Rf).unwrap();
        for s in 0..3 {
            assert_eq!(intervals.lower[s].to_bits(), 0.5f64.to_bits());
            assert_eq!(intervals.upper[s].to_bits(), 0.5f64.to_bits());
        }
        assert_eq!(intervals.refit_failures, 0);
        assert_eq!(intervals.samples.len(), spec.n_boot);
    }

    #[test]
    fn too_few_residuals_for_block_length() {
        let panel = constant_risk_panel(60);
        let mut spec = linear_spec(&panel, 6);
        spec.block_len = 50;
        spec.forest.n_trees = 20;
        let fit = fit_canton(&panel, "alpha", &spec).unwrap();
        let climate = fit_climate_var(&fit).unwrap();
        let climate_fc = forecast_climate(&fit, &climate, spec.horizon).unwrap();
        match bootstrap_intervals(&fit, &climate_fc, Method::Rf) {
            Err(Error::TooFewResiduals { n, block }) => {
                assert_eq!(n, fit.assembled.rows.len());
                assert_eq!(block, 50);
            }
            other => panic!("expected TooFewResiduals, got {other:?}"),
        }
    }

    #[test]
    fn horizon_exceeding_climate_forecast_rejected() {
        let panel = sim_fixture(2, 80, 9);
        let spec = spec_for(&panel, 3, 9);
        let fit = fit_canton(&panel, "c001", &spec).unwrap();
        let climate = fit_climate_var(&fit).unwrap();
        let short_fc = forecast_climate(&fit, &climate, 2).unwrap();
        match forecast_recursive(&fit, &short_fc) {
            Err(Error::HorizonExceedsVar { h, available }) => {
                assert_eq!(h, 3);
                assert_eq!(available, 2);
            }
            other => panic!("expected HorizonExceedsVar, got {other:?}"),
        }
        assert!(matches!(
            bootstrap_intervals(&fit, &short_fc, Method::Gamlss),
            Err(Error::HorizonExceedsVar { .. })
        ));
    }

    #[test]
    fn type7_quantiles_on_a_crafted_hundred() {
        let values: Vec<f64> = (1..=100).map(f64::from).collect();
        let lo = quantile_type7(&values, 0.025);
        let hi = quantile_type7(&values, 0.975);
        // h = p(n-1): 2.475 -> 3 + 0.475, 96.525 -> 97 + 0.525.
        assert!((lo - 3.475).abs() < 1e-12);
        assert!((hi - 97.525).abs() < 1e-12);
    }

    #[test]
    fn bootstrap_median_within_interval() {
        let panel = sim_fixture(2, 90, 14);
        let mut spec = spec_for(&panel, 3, 14);
        spec.n_boot = 40;
        spec.forest.n_trees = 80;
        let fit = fit_canton(&panel, "c001", &spec).unwrap();
        let climate = fit_climate_var(&fit).unwrap();
        let climate_fc = forecast_climate(&fit, &climate, 3).unwrap();
        for method in [Method::Gamlss, Method::Rf] {
            let intervals = bootstrap_intervals(&fit, &climate_fc, method).unwrap();
            for s in 0..3 {
                let mut values: Vec<f64> = intervals.samples.iter().map(|p| p[s]).collect();
                values.sort_by(f64::total_cmp);
                let median = quantile_type7(&values, 0.5);
                assert!(intervals.lower[s] <= intervals.upper[s]);
                assert!(
                    intervals.lower[s] <= median && median <= intervals.upper[s],
                    "step {s}: median {median} outside [{}, {}]",
                    intervals.lower[s],
                    intervals.upper[s]
                );
            }
        }
    }

    #[test]
    fn attach_intervals_brackets_the_point() {
        let months = vec![MonthIndex::new(2015, 1).unwrap()];
        let mut result = ForecastResult {
            canton_id: "x".into(),
            method: "rf".into(),
            months,
            point: vec![1.0],
            lower: vec![1.0],
            upper: vec![1.0],
            clamped: 0,
        };
        // Quantiles on one side of the point get widened to include it.
        let intervals = BootstrapIntervals {
            method: "rf".into(),
            lower: vec![1.2],
            upper: vec![1.4],
            samples: vec![],
            refit_failures: 0,
        };
        attach_intervals(&mut result, &intervals).unwrap();
        assert_eq!(result.lower, vec![1.0]);
        assert_eq!(result.upper, vec![1.4]);

        let mismatched = BootstrapIntervals {
            method: "gamlss".into(),
            lower: vec![0.0],
            upper: vec![2.0],
            samples: vec![],
            refit_failures: 0,
        };
        assert!(matches!(
            attach_intervals(&mut result, &mismatched),
            Err(Error::MisalignedInputs(_))
        ));
    }

    #[test]
    fn clamp_rule_zeroes_negatives() {
        assert_eq!(clamp_rr(-0.1), 0.0);
        assert_eq!(clamp_rr(0.0), 0.0);
        assert_eq!(clamp_rr(0.3), 0.3);
        // A pseudo-response draw below zero is clamped before refitting.
        assert_eq!(clamp_rr(1.0 + -10.0), 0.0);
    }

    #[test]
    fn evaluate_single_method_and_missing_months() {
        let m0 = MonthIndex::new(2012, 5).unwrap();
        let months: Vec<MonthIndex> = (0..3).map(|s| m0.plus_months(s)).collect();
        let fc = ForecastResult {
            canton_id: "alpha".into(),
            method: "gamlss".into(),
            months: months.clone(),
            point: vec![1.0, 1.1, 0.9],
            lower: vec![0.5, 0.6, 0.4],
            upper: vec![1.5, 1.6, 1.4],
            clamped: 0,
        };
        let observed = RiskSeries {
            canton_id: "alpha".into(),
            months: months.clone(),
            rr: vec![1.05, 1.0, 0.8],
        };
        // A single method is reported as best by default.
        let report = evaluate(std::slice::from_ref(&fc), &observed).unwrap();
        assert_eq!(report.best, "gamlss");
        assert_eq!(report.scores.len(), 1);
        assert!(report.scores["gamlss"].nis > 0.0);

        let truncated = RiskSeries {
            canton_id: "alpha".into(),
            months: months[..2].to_vec(),
            rr: vec![1.05, 1.0],
        };
        match evaluate(std::slice::from_ref(&fc), &truncated) {
            Err(Error::MissingObservations(msg)) => {
                assert!(msg.contains("alpha"));
                assert!(msg.contains("2012-07"));
            }
            other => panic!("expected MissingObservations, got {other:?}"),
        }

        let duplicated = vec![fc.clone(), fc.clone()];
        assert!(matches!(
            evaluate(&duplicated, &observed),
            Err(Error::MisalignedInputs(_))
        ));
        assert!(matches!(
            evaluate(&[], &observed),
            Err(Error::MisalignedScores(_))
        ));
    }

    #[test]
    fn persistence_repeats_last_observed() {
        let panel = sim_fixture(2, 80, 17);
        let mut spec = spec_for(&panel, 3, 17);
        spec.method = MethodChoice::Gamlss;
        let fit = fit_canton(&panel, "c002", &spec).unwrap();
        let result = persistence_forecast(&fit.canton_id, &fit.rr, fit.spec.train_end, 3).unwrap();
        let last = *fit.rr.last().unwrap();
        assert_eq!(result.method, "persistence");
        assert_eq!(result.point, vec![last; 3]);
        for s in 0..3 {
            assert!(result.lower[s] <= result.point[s]);
            assert!(result.point[s] <= result.upper[s]);
            assert!(result.lower[s] >= 0.0);
        }
        assert_eq!(
            result.months,
            (1..=3)
                .map(|s| spec.train_end.plus_months(s))
                .collect::<Vec<_>>()
        );
    }

    #[test]
    fn gamlss_tracks_risk_on_well_specified_panel() {
        let config = SimConfig {
            n_cantons: 2,
            n_months: 160,
            zero_rate: 0.0,
            sigma: 0.12,
            effect_scale: 1.5,
            seasonal_amplitude: 0.5,
            rr_feedback: 0.2,
            ..SimConfig::default()
        };
        let (panel, _) = simulate_panel(&config, 19).unwrap();
        let mut spec = spec_for(&panel, 20, 19);
        spec.method = MethodChoice::Gamlss;
        let fit = fit_canton(&panel, "c001", &spec).unwrap();
        let climate = fit_climate_var(&fit).unwrap();
        let climate_fc = forecast_climate(&fit, &climate, 20).unwrap();
        let results = forecast_recursive(&fit, &climate_fc).unwrap();
        let point = &results[0].point;

        let test_panel = panel
            .slice(
                spec.train_end.plus_months(1),
                spec.train_end.plus_months(20),
            )
            .unwrap();
        let observed = compute_relative_risk(&test_panel, "c001").unwrap().rr;
        let mean_p = point.iter().sum::<f64>() / 20.0;
        let mean_o = observed.iter().sum::<f64>() / 20.0;
        let mut num = 0.0;
        let mut den_p = 0.0;
        let mut den_o = 0.0;
        for s in 0..20 {
            num += (point[s] - mean_p) * (observed[s] - mean_o);
            den_p += (point[s] - mean_p).powi(2);
            den_o += (observed[s] - mean_o).powi(2);
        }
        let corr = num / (den_p.sqrt() * den_o.sqrt());
        assert!(corr > 0.7, "forecast/observed correlation {corr}");
    }

    #[test]
    fn var_order_cap_respects_train_length() {
        let panel = sim_fixture(2, 60, 25);
        let n = panel.n_months();
        let mut spec = CantonSpec::new(panel.months[0], panel.months[n - 21], 25);
        spec.horizon = 3;
        spec.method = MethodChoice::Rf;
        spec.forest.n_trees = 30;
        // Shallow lags and linear bases keep the design identified on
        // a window this short; the VAR cap depends only on its length.
        spec.max_lag = 6;
        let linear = (BasisSpec::Linear, BasisSpec::Linear);
        spec.bases = [linear, linear, linear, linear, linear];
        let fit = fit_canton(&panel, "c001", &spec).unwrap();
        assert_eq!(fit.months.len(), 40);
        let climate = fit_climate_var(&fit).unwrap();
        // Train length 40 admits at most (40 - 14) / 5 = 5 lags.
        assert_eq!(climate.bics.len(), 5);
        assert!(climate.order >= 1 && climate.order <= 5);
    }

    #[test]
    fn pipeline_is_deterministic_and_ignores_test_data() {
        let panel = sim_fixture(3, 96, 77);
        let mut template = spec_for(&panel, 3, 77);
        template.n_boot = 25;
        template.forest.n_trees = 60;

        let a = run_pipeline(&panel, &template).unwrap();
        let b = run_pipeline(&panel, &template).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.cantons.len(), 3);
        for canton in &a.cantons {
            assert!(canton.report.is_some());
            assert_eq!(canton.forecasts.len(), 2);
            for fc in &canton.forecasts {
                for s in 0..3 {
                    assert!(fc.lower[s] <= fc.point[s] && fc.point[s] <= fc.upper[s]);
                }
            }
            assert!(canton.var_order >= 1);
            assert_eq!(canton.climate_forecast.horizon, 3);
        }

        // Tampering with test-period cases must not change any fit or
        // forecast, only the scores.
        let mut cantons = panel.cantons.clone();
        let series = &mut cantons.get_mut("c001").unwrap().series;
        let n = series.cases.len();
        for t in n - 3..n {
            series.cases[t] = (series.cases[t] + 50).min(panel.national.cases[t]);
        }
        let tampered = MonthlyPanel::new(cantons, panel.national.clone()).unwrap();
        let c = run_pipeline(&tampered, &template).unwrap();
        for (orig, tamp) in a.cantons.iter().zip(&c.cantons) {
            assert_eq!(orig.fitted, tamp.fitted);
            assert_eq!(orig.forecasts, tamp.forecasts);
            assert_eq!(orig.climate_forecast, tamp.climate_forecast);
        }
        let orig_scores = &a.cantons[0].report.as_ref().unwrap().scores;
        let tamp_scores = &c.cantons[0].report.as_ref().unwrap().scores;
        assert_ne!(orig_scores, tamp_scores);
    }

    #[test]
    fn forecast_only_when_test_window_missing() {
        let panel = sim_fixture(2, 70, 41);
        let n = panel.n_months();
        // Train through the final month: no test data remains.
        let mut template = CantonSpec::new(panel.months[0], panel.months[n - 1], 41);
        template.horizon = 3;
        template.n_boot = 10;
        template.forest.n_trees = 30;
        template.method = MethodChoice::Rf;
        let out = run_pipeline(&panel, &template).unwrap();
        for canton in &out.cantons {
            assert!(canton.observed_test.is_none());
            assert!(canton.report.is_none());
            assert_eq!(canton.forecasts.len(), 1);
        }
    }
}
