//! Climate-lagged dengue relative-risk modelling.
//!
//! The library reproduces a forecasting workflow for canton-level
//! dengue relative risk driven by lagged climate covariates:
//!
//! - [`panel`]: monthly case/population/climate panels and relative risk;
//! - [`basis`]: B-spline bases and variable × lag cross-bases;
//! - [`zadist`]: zero-adjusted gamma and inverse-Gaussian distributions;
//! - [`gamlss`]: zero-adjusted gamma regression (log link) by maximum
//!   likelihood on a shared design;
//! - [`forest`]: a deterministic random-forest regressor on the same
//!   design;
//! - [`var`]: VAR models with trend/seasonal terms, BIC order selection,
//!   and mean-path climate forecasts;
//! - [`metrics`]: normalized RMSE and a normalized interval score;
//! - [`pipeline`]: per-canton fit → recursive forecast → block-bootstrap
//!   intervals → method comparison;
//! - [`sim`]: a synthetic panel generator with known ground truth;
//! - [`rng`]: deterministic seed-stream derivation;
//! - [`textfmt`]: 17-significant-digit number formatting for
//!   byte-reproducible artifacts.

pub mod basis;
pub mod error;
pub mod forest;
pub mod gamlss;
pub mod metrics;
pub mod panel;
pub mod pipeline;
pub mod rng;
pub mod sim;
pub mod textfmt;
pub mod var;
pub mod zadist;

pub use basis::{bspline_basis, cross_basis, quantile_type7, BasisSpec, CrossBasis, FittedBasis};
pub use error::{Error, Result};
pub use forest::{fit_forest, oob_rmse, predict_forest, ForestConfig, ForestModel};
pub use gamlss::{
    assemble_design, fit_zaga, predict_response, prediction_row, AssembledDesign, DesignMatrix,
    ZagaFit,
};
pub use metrics::{best_model, nis, nrmse, MethodScore, ScoredForecast};
pub use panel::{
    align_panel, compute_relative_risk, AlignmentReport, CantonData, CantonSeries, ClimateRecord,
    Covariate, MonthIndex, MonthlyPanel, NationalSeries, RawRow, RawTables, RiskSeries,
    NATIONAL_ID,
};
pub use pipeline::{
    bootstrap_intervals, evaluate, fit_canton, fit_climate_var, forecast_climate,
    forecast_recursive, persistence_forecast, run_canton, run_pipeline, BootstrapIntervals,
    CantonFit, CantonOutput, CantonSpec, ClimateModel, ComparisonReport, ForecastResult, Method,
    MethodChoice, PipelineOutput, ALPHA95,
};
pub use rng::derive_seed;
pub use sim::{simulate_panel, SimConfig, SimTruth};
pub use textfmt::sig17;
pub use var::{fit_var, forecast_var, select_lag_bic, ExogSpec, VarForecast, VarModel, Z95};
pub use zadist::{zaga_moments, zaga_sample, ZagaParams, ZaigParams};
