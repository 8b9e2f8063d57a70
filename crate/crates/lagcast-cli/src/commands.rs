//! The fit / forecast / evaluate / simulate / report subcommands.
//!
//! Canton jobs run in parallel with per-canton derived seeds; every
//! output file is written once, after all jobs finish, so runs are
//! reproducible regardless of thread count. No command modifies its
//! input files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use lagcast_core::{
    compute_relative_risk, derive_seed, evaluate, fit_canton, oob_rmse, run_pipeline, sig17,
    simulate_panel, CantonFit, CantonOutput, CantonSpec, ComparisonReport, ExogSpec,
    ForecastResult, ForestConfig, MonthIndex, MonthlyPanel, SimTruth,
};

use crate::config::RunConfig;
use crate::error::{io_err, CliError, CliResult};
use crate::tables;

/// Read or generate the panel, per the configured mode.
pub fn load_panel(cfg: &RunConfig) -> CliResult<(MonthlyPanel, Option<SimTruth>)> {
    if cfg.simulate {
        let (panel, truth) = simulate_panel(&cfg.sim, cfg.seed)?;
        Ok((panel, Some(truth)))
    } else {
        let (panel, report) = tables::load_tables(cfg)?;
        if report.n_dropped() > 0 {
            eprintln!(
                "note: dropped {} rows outside the common month range",
                report.n_dropped()
            );
        }
        Ok((panel, None))
    }
}

fn month_before(m: MonthIndex) -> MonthIndex {
    if m.month == 1 {
        MonthIndex {
            year: m.year - 1,
            month: 12,
        }
    } else {
        MonthIndex {
            year: m.year,
            month: m.month - 1,
        }
    }
}

/// Resolve the window defaults against the loaded panel and build the
/// spec shared by every canton.
pub fn template_spec(cfg: &RunConfig, panel: &MonthlyPanel) -> CliResult<CantonSpec> {
    let n = panel.n_months();
    let first = panel.months[0];
    let last = panel.months[n - 1];
    let train_start = cfg.train_start.unwrap_or(first);
    let train_end = match (cfg.train_end, cfg.test_start) {
        (Some(e), _) => e,
        (None, Some(ts)) => month_before(ts),
        (None, None) => {
            if n <= cfg.horizon {
                return Err(CliError::Constraint(format!(
                    "panel spans {n} months ({first}..{last}); need more than the \
                     horizon {} to hold out a test window",
                    cfg.horizon
                )));
            }
            panel.months[n - 1 - cfg.horizon]
        }
    };
    Ok(CantonSpec {
        train_start,
        train_end,
        horizon: cfg.horizon,
        max_lag: cfg.max_lag,
        bases: cfg.bases(),
        method: cfg.method,
        n_boot: cfg.n_boot,
        block_len: cfg.block_len,
        seed: cfg.seed,
        forest: ForestConfig {
            n_trees: cfg.forest_trees,
            mtry: cfg.forest_mtry,
            min_node_size: cfg.forest_min_node,
            seed: 0,
        },
        var_p_max: cfg.var_p_max,
        var_exog: ExogSpec::default(),
    })
}

/// Fit every canton in parallel with the same per-canton seed stream
/// the full pipeline uses.
fn fit_all(panel: &MonthlyPanel, template: &CantonSpec) -> CliResult<Vec<CantonFit>> {
    let ids = panel.canton_ids();
    let fits: lagcast_core::Result<Vec<CantonFit>> = ids
        .par_iter()
        .enumerate()
        .map(|(i, id)| {
            let spec = CantonSpec {
                seed: derive_seed(template.seed, i as u64),
                ..template.clone()
            };
            fit_canton(panel, id, &spec)
        })
        .collect();
    Ok(fits?)
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn artifact_file_name(canton_id: &str) -> String {
    canton_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn write_fit_artifacts(dir: &Path, fits: &[CantonFit]) -> CliResult<()> {
    let models = dir.join("models");
    ensure_dir(&models)?;

    let mut fitted = Vec::new();
    let mut coefficients = Vec::new();
    let mut summary = Vec::new();
    for fit in fits {
        let months = fit.design_months();
        for (method, path) in &fit.fitted {
            for (i, &m) in months.iter().enumerate() {
                fitted.push(vec![
                    fit.canton_id.clone(),
                    method.clone(),
                    m.year.to_string(),
                    m.month.to_string(),
                    sig17(fit.assembled.y[i]),
                    sig17(path[i]),
                ]);
            }
        }
        let mut add = |method: &str, key: &str, value: String| {
            summary.push(vec![
                fit.canton_id.clone(),
                method.to_string(),
                key.to_string(),
                value,
            ]);
        };
        if let Some(g) = &fit.gamlss {
            for (j, name) in g.names.iter().enumerate() {
                coefficients.push(vec![
                    fit.canton_id.clone(),
                    name.clone(),
                    sig17(g.beta_mu[j]),
                    sig17(g.beta_se[j]),
                ]);
            }
            add("gamlss", "sigma", sig17(g.sigma_hat));
            add("gamlss", "nu", sig17(g.nu_hat));
            add(
                "gamlss",
                "nu_pinned",
                if g.nu_pinned { "1" } else { "0" }.into(),
            );
            add("gamlss", "loglik", sig17(g.loglik));
            add("gamlss", "n_obs", g.n_obs.to_string());
            add("gamlss", "iterations", g.iterations.to_string());
        }
        if let Some(f) = &fit.forest {
            add("rf", "n_trees", f.trees.len().to_string());
            add("rf", "mtry", f.mtry.to_string());
            add("rf", "min_node_size", f.config.min_node_size.to_string());
            add(
                "rf",
                "degenerate_response",
                if f.degenerate_response { "1" } else { "0" }.into(),
            );
            if let Ok(rmse) = oob_rmse(f, &fit.assembled.design, &fit.assembled.y) {
                add("rf", "oob_rmse", sig17(rmse));
            }
        }
        let stem = artifact_file_name(&fit.canton_id);
        if let Some(g) = &fit.gamlss {
            tables::write_text(&models.join(format!("{stem}.gamlss.txt")), &g.to_text())?;
        }
        if let Some(f) = &fit.forest {
            tables::write_text(&models.join(format!("{stem}.forest.txt")), &f.to_text())?;
        }
    }
    tables::write_generic(&dir.join("fitted.csv"), tables::FITTED_HEADER, fitted)?;
    tables::write_generic(
        &dir.join("coefficients.csv"),
        "canton,term,estimate,se",
        coefficients,
    )?;
    tables::write_generic(
        &dir.join("model_summary.csv"),
        "canton,method,key,value",
        summary,
    )?;
    Ok(())
}

fn write_forecast_artifacts(dir: &Path, outputs: &[CantonOutput]) -> CliResult<()> {
    tables::write_forecasts(&dir.join("forecast.csv"), outputs)?;

    let mut meta = Vec::new();
    for canton in outputs {
        for fc in &canton.forecasts {
            meta.push(vec![
                canton.canton_id.clone(),
                fc.method.clone(),
                fc.clamped.to_string(),
                canton
                    .refit_failures
                    .get(&fc.method)
                    .copied()
                    .unwrap_or(0)
                    .to_string(),
            ]);
        }
    }
    tables::write_generic(
        &dir.join("forecast_meta.csv"),
        "canton,method,clamped,refit_failures",
        meta,
    )?;

    let mut climate = Vec::new();
    for canton in outputs {
        let f = &canton.climate_forecast;
        for (s, &m) in f.months.iter().enumerate() {
            let mut row = vec![
                canton.canton_id.clone(),
                m.year.to_string(),
                m.month.to_string(),
            ];
            for j in 0..f.mean.ncols() {
                row.push(sig17(f.mean[(s, j)]));
            }
            climate.push(row);
        }
    }
    tables::write_generic(
        &dir.join("climate_forecast.csv"),
        tables::CLIMATE_HEADER,
        climate,
    )?;

    let mut orders = Vec::new();
    let mut bics = Vec::new();
    for canton in outputs {
        orders.push(vec![
            canton.canton_id.clone(),
            canton.var_order.to_string(),
            if canton.var_stable { "1" } else { "0" }.into(),
        ]);
        for (i, b) in canton.var_bics.iter().enumerate() {
            bics.push(vec![
                canton.canton_id.clone(),
                (i + 1).to_string(),
                sig17(*b),
            ]);
        }
    }
    tables::write_generic(&dir.join("var_summary.csv"), "canton,order,stable", orders)?;
    tables::write_generic(&dir.join("var_bics.csv"), "canton,lag,bic", bics)?;
    Ok(())
}

fn write_truth(dir: &Path, panel: &MonthlyPanel, truth: &SimTruth) -> CliResult<()> {
    let mut rows = Vec::new();
    for (canton, mu) in &truth.mu {
        let rr = &truth.rr_drawn[canton];
        for (t, &m) in panel.months.iter().enumerate() {
            rows.push(vec![
                canton.clone(),
                m.year.to_string(),
                m.month.to_string(),
                sig17(mu[t]),
                sig17(rr[t]),
            ]);
        }
    }
    tables::write_generic(&dir.join("truth.csv"), "canton,year,month,mu,rr", rows)?;

    let mut params = vec![
        vec![
            "precip_weight.intercept".to_string(),
            sig17(truth.precip_weights.0),
        ],
        vec![
            "precip_weight.slope".to_string(),
            sig17(truth.precip_weights.1),
        ],
        vec![
            "ssta_weight.intercept".to_string(),
            sig17(truth.ssta_weights.0),
        ],
        vec!["ssta_weight.slope".to_string(), sig17(truth.ssta_weights.1)],
    ];
    for (canton, b0) in &truth.intercepts {
        params.push(vec![format!("intercept.{canton}"), sig17(*b0)]);
    }
    tables::write_generic(&dir.join("truth_params.csv"), "name,value", params)
}

/// Generate a synthetic panel and write it in the input schemas plus
/// the generator's ground truth.
pub fn cmd_simulate(cfg: &RunConfig) -> CliResult<()> {
    let (panel, truth) = simulate_panel(&cfg.sim, cfg.seed)?;
    ensure_dir(&cfg.output)?;
    tables::write_panel(&cfg.output, &panel)?;
    write_truth(&cfg.output, &panel, &truth)?;
    println!(
        "simulated {} cantons x {} months (seed {}) -> {}",
        panel.cantons.len(),
        panel.n_months(),
        cfg.seed,
        cfg.output.display()
    );
    Ok(())
}

/// Fit the configured methods on the train window and write fit
/// artifacts and in-sample fitted values.
pub fn cmd_fit(cfg: &RunConfig) -> CliResult<()> {
    let (panel, _) = load_panel(cfg)?;
    let template = template_spec(cfg, &panel)?;
    let fits = fit_all(&panel, &template)?;
    ensure_dir(&cfg.output)?;
    write_fit_artifacts(&cfg.output, &fits)?;
    println!(
        "fitted {} cantons on {}..{} -> {}",
        fits.len(),
        template.train_start,
        template.train_end,
        cfg.output.display()
    );
    Ok(())
}

/// Run the full pipeline and write forecasts with bootstrap intervals.
pub fn cmd_forecast(cfg: &RunConfig) -> CliResult<()> {
    let (panel, _) = load_panel(cfg)?;
    let template = template_spec(cfg, &panel)?;
    let pipe = run_pipeline(&panel, &template)?;
    ensure_dir(&cfg.output)?;
    write_forecast_artifacts(&cfg.output, &pipe.cantons)?;
    println!(
        "forecast {} months from {} for {} cantons -> {}",
        template.horizon,
        template.train_end,
        pipe.cantons.len(),
        cfg.output.display()
    );
    Ok(())
}

/// Score a previously written forecast table against observed risk.
pub fn cmd_evaluate(cfg: &RunConfig) -> CliResult<()> {
    let (panel, _) = load_panel(cfg)?;
    let path = cfg.output.join("forecast.csv");
    if !path.exists() {
        return Err(CliError::MissingFile(format!(
            "{} (run the forecast command first)",
            path.display()
        )));
    }
    let forecasts = tables::read_forecasts(&path)?;
    if forecasts.is_empty() {
        return Err(CliError::Constraint(format!(
            "{} contains no forecast rows",
            path.display()
        )));
    }
    let mut groups: BTreeMap<String, Vec<ForecastResult>> = BTreeMap::new();
    for fc in forecasts {
        groups.entry(fc.canton_id.clone()).or_default().push(fc);
    }
    let mut reports = Vec::new();
    for (canton, group) in &groups {
        let first = group
            .iter()
            .map(|f| f.months[0])
            .min()
            .expect("non-empty group");
        let last = group
            .iter()
            .map(|f| *f.months.last().expect("non-empty months"))
            .max()
            .expect("non-empty group");
        let window = panel.slice(first, last)?;
        let observed = compute_relative_risk(&window, canton)?;
        reports.push(evaluate(group, &observed)?);
    }
    let refs: Vec<&ComparisonReport> = reports.iter().collect();
    tables::write_scores(&cfg.output.join("scores.csv"), &refs)?;
    println!(
        "scored {} cantons -> {}",
        refs.len(),
        cfg.output.join("scores.csv").display()
    );
    Ok(())
}

/// Everything in one directory: synthetic inputs (in simulate mode),
/// fit artifacts, forecasts with intervals, and scores when the panel
/// covers the test window.
pub fn cmd_report(cfg: &RunConfig) -> CliResult<()> {
    let (panel, truth) = load_panel(cfg)?;
    ensure_dir(&cfg.output)?;
    if let Some(truth) = &truth {
        tables::write_panel(&cfg.output, &panel)?;
        write_truth(&cfg.output, &panel, truth)?;
    }
    let template = template_spec(cfg, &panel)?;
    let fits = fit_all(&panel, &template)?;
    write_fit_artifacts(&cfg.output, &fits)?;
    let pipe = run_pipeline(&panel, &template)?;
    write_forecast_artifacts(&cfg.output, &pipe.cantons)?;
    let reports: Vec<&ComparisonReport> = pipe
        .cantons
        .iter()
        .filter_map(|c| c.report.as_ref())
        .collect();
    if !reports.is_empty() {
        tables::write_scores(&cfg.output.join("scores.csv"), &reports)?;
    }
    println!(
        "report for {} cantons ({} scored) -> {}",
        pipe.cantons.len(),
        reports.len(),
        cfg.output.display()
    );
    Ok(())
}

/// Merge simulate-subcommand flags over a base config.
pub fn apply_simulate_flags(
    cfg: &mut RunConfig,
    seed: Option<u64>,
    cantons: Option<usize>,
    months: Option<usize>,
    out: Option<PathBuf>,
) {
    cfg.simulate = true;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(c) = cantons {
        cfg.sim.n_cantons = c;
    }
    if let Some(m) = months {
        cfg.sim.n_months = m;
    }
    if let Some(o) = out {
        cfg.output = o;
    }
}
