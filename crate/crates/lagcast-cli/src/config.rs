//! Flat `key = value` run configuration.
//!
//! One pair per line; lines whose first non-blank character is `#` are
//! comments; the file must be UTF-8. Unknown keys are errors, as are
//! duplicate keys. Paths are resolved relative to the config file's
//! directory.
//!
//! Keys (defaults in parentheses):
//!
//! ```text
//! data.cases / data.population / data.climate   input CSV paths
//! simulate            true to generate a synthetic panel (false)
//! simulate.cantons    (8)       simulate.months   (252)
//! simulate.start      (2000-01) simulate.zero_rate (0.16)
//! simulate.sigma      (0.5)     simulate.persistence (0.5)
//! simulate.effect_scale (1.0)   simulate.seasonal_amplitude (0.3)
//! simulate.rr_feedback (0.15)
//! train.start / train.end / test.start / test.end   YYYY-MM windows
//! horizon             forecast months (3, or the test window length)
//! max_lag             cross-basis lag depth (18)
//! method              gamlss | rf | both (both)
//! basis.precip … basis.tna   linear | bspline (bspline for precip and
//!                     ssta, linear for ndvi, lst, tna)
//! basis.degree        B-spline degree (3)
//! basis.df            B-spline basis functions per variable (4)
//! bootstrap.replicates (100)    bootstrap.block (6)
//! seed                master RNG seed (0)
//! forest.trees (500)  forest.mtry (auto)  forest.min_node (5)
//! var.p_max           largest VAR order tried (13)
//! output              output directory (lagcast_out)
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use lagcast_core::{BasisSpec, MethodChoice, MonthIndex, SimConfig};

use crate::error::{io_err, CliError, CliResult};

/// Which basis each covariate gets in the variable dimension; the lag
/// dimension is always linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisChoice {
    Linear,
    BSpline,
}

/// A fully validated run configuration with defaults applied.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub cases: Option<PathBuf>,
    pub population: Option<PathBuf>,
    pub climate: Option<PathBuf>,
    /// Generate the panel instead of reading it.
    pub simulate: bool,
    pub sim: SimConfig,
    pub train_start: Option<MonthIndex>,
    pub train_end: Option<MonthIndex>,
    pub test_start: Option<MonthIndex>,
    pub test_end: Option<MonthIndex>,
    pub horizon: usize,
    pub max_lag: usize,
    pub method: MethodChoice,
    /// Variable-dimension basis per covariate, in precip/ssta/ndvi/
    /// lst/tna order.
    pub basis_choices: [BasisChoice; 5],
    pub basis_degree: usize,
    pub basis_df: usize,
    pub n_boot: usize,
    pub block_len: usize,
    pub seed: u64,
    pub forest_trees: usize,
    pub forest_mtry: Option<usize>,
    pub forest_min_node: usize,
    pub var_p_max: usize,
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            cases: None,
            population: None,
            climate: None,
            simulate: false,
            sim: SimConfig::default(),
            train_start: None,
            train_end: None,
            test_start: None,
            test_end: None,
            horizon: 3,
            max_lag: 18,
            method: MethodChoice::Both,
            basis_choices: [
                BasisChoice::BSpline,
                BasisChoice::BSpline,
                BasisChoice::Linear,
                BasisChoice::Linear,
                BasisChoice::Linear,
            ],
            basis_degree: 3,
            basis_df: 4,
            n_boot: 100,
            block_len: 6,
            seed: 0,
            forest_trees: 500,
            forest_mtry: None,
            forest_min_node: 5,
            var_p_max: 13,
            output: PathBuf::from("lagcast_out"),
        }
    }
}

impl RunConfig {
    /// The per-covariate (variable, lag) basis pairs the pipeline wants.
    pub fn bases(&self) -> [(BasisSpec, BasisSpec); 5] {
        self.basis_choices.map(|choice| {
            let var = match choice {
                BasisChoice::Linear => BasisSpec::Linear,
                BasisChoice::BSpline => BasisSpec::BSpline {
                    degree: self.basis_degree,
                    df: self.basis_df,
                },
            };
            (var, BasisSpec::Linear)
        })
    }
}

/// Load and fully validate a config file. An empty file yields all
/// defaults, which fail validation: a run must either point at input
/// tables or enable simulate mode.
pub fn load_config(path: &Path) -> CliResult<RunConfig> {
    let cfg = load_config_lenient(path)?;
    require_input_source(&cfg)?;
    Ok(cfg)
}

/// Like [`load_config`] but without the data-or-simulate requirement;
/// the simulate command supplies that mode itself.
pub fn load_config_lenient(path: &Path) -> CliResult<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let cfg = parse_config(&text, &path.display().to_string(), base)?;
    validate_config(&cfg)?;
    Ok(cfg)
}

pub fn require_input_source(cfg: &RunConfig) -> CliResult<()> {
    if !cfg.simulate && cfg.cases.is_none() {
        return Err(CliError::Constraint(
            "no input tables configured and simulate mode is off; set the data.* \
             paths or simulate = true"
                .into(),
        ));
    }
    Ok(())
}

fn parse_config(text: &str, path: &str, base: &Path) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut horizon_explicit = false;
    let mut sim_keys = false;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (key, value) = trimmed.split_once('=').ok_or_else(|| CliError::Config {
            path: path.to_string(),
            line,
            msg: "expected 'key = value'".into(),
        })?;
        let key = key.trim();
        let value = value.trim();
        if !seen.insert(key.to_string()) {
            return Err(CliError::Config {
                path: path.to_string(),
                line,
                msg: format!("duplicate key '{key}'"),
            });
        }
        let bad = |msg: String| CliError::Config {
            path: path.to_string(),
            line,
            msg,
        };
        let num = |what: &str| bad(format!("cannot parse {what} from '{value}'"));
        let month = || -> CliResult<MonthIndex> {
            MonthIndex::parse(value).map_err(|e| bad(e.to_string()))
        };

        match key {
            "data.cases" => cfg.cases = Some(base.join(value)),
            "data.population" => cfg.population = Some(base.join(value)),
            "data.climate" => cfg.climate = Some(base.join(value)),
            "simulate" => {
                cfg.simulate = parse_bool(value).ok_or_else(|| num("a boolean"))?;
            }
            "simulate.cantons" => {
                cfg.sim.n_cantons = value.parse().map_err(|_| num("a count"))?;
                sim_keys = true;
            }
            "simulate.months" => {
                cfg.sim.n_months = value.parse().map_err(|_| num("a count"))?;
                sim_keys = true;
            }
            "simulate.start" => {
                cfg.sim.start = month()?;
                sim_keys = true;
            }
            "simulate.zero_rate" => {
                cfg.sim.zero_rate = value.parse().map_err(|_| num("a number"))?;
                sim_keys = true;
            }
            "simulate.sigma" => {
                cfg.sim.sigma = value.parse().map_err(|_| num("a number"))?;
                sim_keys = true;
            }
            "simulate.persistence" => {
                cfg.sim.climate_persistence = value.parse().map_err(|_| num("a number"))?;
                sim_keys = true;
            }
            "simulate.effect_scale" => {
                cfg.sim.effect_scale = value.parse().map_err(|_| num("a number"))?;
                sim_keys = true;
            }
            "simulate.seasonal_amplitude" => {
                cfg.sim.seasonal_amplitude = value.parse().map_err(|_| num("a number"))?;
                sim_keys = true;
            }
            "simulate.rr_feedback" => {
                cfg.sim.rr_feedback = value.parse().map_err(|_| num("a number"))?;
                sim_keys = true;
            }
            "train.start" => cfg.train_start = Some(month()?),
            "train.end" => cfg.train_end = Some(month()?),
            "test.start" => cfg.test_start = Some(month()?),
            "test.end" => cfg.test_end = Some(month()?),
            "horizon" => {
                cfg.horizon = value.parse().map_err(|_| num("a count"))?;
                horizon_explicit = true;
            }
            "max_lag" => cfg.max_lag = value.parse().map_err(|_| num("a count"))?,
            "method" => {
                cfg.method = MethodChoice::parse(value).map_err(|e| bad(e.to_string()))?;
            }
            "basis.precip" => {
                cfg.basis_choices[0] = parse_basis(value).ok_or_else(|| num("a basis"))?
            }
            "basis.ssta" => {
                cfg.basis_choices[1] = parse_basis(value).ok_or_else(|| num("a basis"))?
            }
            "basis.ndvi" => {
                cfg.basis_choices[2] = parse_basis(value).ok_or_else(|| num("a basis"))?
            }
            "basis.lst" => {
                cfg.basis_choices[3] = parse_basis(value).ok_or_else(|| num("a basis"))?
            }
            "basis.tna" => {
                cfg.basis_choices[4] = parse_basis(value).ok_or_else(|| num("a basis"))?
            }
            "basis.degree" => cfg.basis_degree = value.parse().map_err(|_| num("a count"))?,
            "basis.df" => cfg.basis_df = value.parse().map_err(|_| num("a count"))?,
            "bootstrap.replicates" => cfg.n_boot = value.parse().map_err(|_| num("a count"))?,
            "bootstrap.block" => cfg.block_len = value.parse().map_err(|_| num("a count"))?,
            "seed" => cfg.seed = value.parse().map_err(|_| num("a seed"))?,
            "forest.trees" => cfg.forest_trees = value.parse().map_err(|_| num("a count"))?,
            "forest.mtry" => {
                cfg.forest_mtry = if value == "auto" {
                    None
                } else {
                    Some(value.parse().map_err(|_| num("a count or 'auto'"))?)
                };
            }
            "forest.min_node" => cfg.forest_min_node = value.parse().map_err(|_| num("a count"))?,
            "var.p_max" => cfg.var_p_max = value.parse().map_err(|_| num("a count"))?,
            "output" => cfg.output = base.join(value),
            other => {
                return Err(CliError::UnknownKey {
                    path: path.to_string(),
                    line,
                    key: other.to_string(),
                });
            }
        }
    }

    if sim_keys {
        cfg.simulate = true;
    }
    if let (Some(s), Some(e)) = (cfg.test_start, cfg.test_end) {
        let len = e.months_since(s) + 1;
        if horizon_explicit && cfg.horizon as i64 != len {
            return Err(CliError::Constraint(format!(
                "horizon {} conflicts with the test window {s}..{e} ({len} months)",
                cfg.horizon
            )));
        }
        if len >= 1 {
            cfg.horizon = len as usize;
        }
    }
    Ok(cfg)
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "true" => Some(true),
        "false" => Some(false),
        _ => None,
    }
}

fn parse_basis(s: &str) -> Option<BasisChoice> {
    match s {
        "linear" => Some(BasisChoice::Linear),
        "bspline" => Some(BasisChoice::BSpline),
        _ => None,
    }
}

fn validate_config(cfg: &RunConfig) -> CliResult<()> {
    let data_given = [&cfg.cases, &cfg.population, &cfg.climate];
    let n_given = data_given.iter().filter(|p| p.is_some()).count();
    if n_given > 0 && n_given < 3 {
        return Err(CliError::Constraint(
            "data.cases, data.population and data.climate must be configured together".into(),
        ));
    }
    if n_given == 3 && cfg.simulate {
        return Err(CliError::Constraint(
            "configure either input tables or simulate mode, not both".into(),
        ));
    }
    for path in data_given.into_iter().flatten() {
        if !path.exists() {
            return Err(CliError::MissingFile(path.display().to_string()));
        }
    }

    if let (Some(s), Some(e)) = (cfg.train_start, cfg.train_end) {
        if e.months_since(s) < 0 {
            return Err(CliError::Constraint(format!(
                "train window {s}..{e} is empty"
            )));
        }
    }
    if let (Some(s), Some(e)) = (cfg.test_start, cfg.test_end) {
        if e.months_since(s) < 0 {
            return Err(CliError::Constraint(format!(
                "test window {s}..{e} is empty"
            )));
        }
    }
    if cfg.test_end.is_some() && cfg.test_start.is_none() {
        return Err(CliError::Constraint("test.end requires test.start".into()));
    }
    if let Some(ts) = cfg.test_start {
        let te = cfg
            .train_end
            .ok_or_else(|| CliError::Constraint("test.start requires train.end".into()))?;
        if ts != te.next() {
            return Err(CliError::Constraint(format!(
                "windows must be contiguous and non-overlapping: test.start {ts} \
                 is not the month after train.end {te}"
            )));
        }
    }

    if cfg.horizon == 0 {
        return Err(CliError::Constraint("horizon must be at least 1".into()));
    }
    for (key, v) in [
        ("bootstrap.replicates", cfg.n_boot),
        ("bootstrap.block", cfg.block_len),
        ("forest.trees", cfg.forest_trees),
        ("var.p_max", cfg.var_p_max),
    ] {
        if v == 0 {
            return Err(CliError::Constraint(format!("{key} must be at least 1")));
        }
    }
    if cfg.basis_df < cfg.basis_degree + 1 {
        return Err(CliError::Constraint(format!(
            "basis.df {} must be at least basis.degree + 1 = {}",
            cfg.basis_df,
            cfg.basis_degree + 1
        )));
    }
    if !(0.0..1.0).contains(&cfg.sim.zero_rate) {
        return Err(CliError::Constraint(format!(
            "simulate.zero_rate {} must lie in [0, 1)",
            cfg.sim.zero_rate
        )));
    }
    if cfg.simulate && cfg.sim.sigma <= 0.0 {
        return Err(CliError::Constraint(format!(
            "simulate.sigma {} must be positive",
            cfg.sim.sigma
        )));
    }
    Ok(())
}
