//! Variable-space and lag-space basis matrices and their tensor-product
//! cross-basis, which encodes a covariate's effect jointly over its value
//! and its lag.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::panel::lag_matrix;

/// Basis family for one dimension (variable values or lag indices).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisSpec {
    /// Untransformed: a single column equal to the value. Over the lag
    /// dimension this becomes constant + slope (see [`FittedBasis`]).
    Linear,
    /// Clamped B-spline with `df` basis functions of the given degree;
    /// `df - degree - 1` internal knots at empirical quantiles.
    BSpline { degree: usize, df: usize },
}

impl BasisSpec {
    /// The default smooth basis: cubic with no internal knots.
    pub fn default_bspline() -> Self {
        BasisSpec::BSpline { degree: 3, df: 4 }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            BasisSpec::Linear => Ok(()),
            BasisSpec::BSpline { degree, df } => {
                if degree < 1 {
                    return Err(Error::InvalidBasisSpec(format!(
                        "B-spline degree must be >= 1, got {degree}"
                    )));
                }
                if df < degree + 1 {
                    return Err(Error::InvalidBasisSpec(format!(
                        "B-spline df {df} must be >= degree + 1 = {}",
                        degree + 1
                    )));
                }
                Ok(())
            }
        }
    }
}

/// A basis whose free parameters (knots, boundary) have been pinned to the
/// training data, so it can be evaluated at arbitrary new points.
#[derive(Debug, Clone, PartialEq)]
pub enum FittedBasis {
    /// One column: the value itself (linear variable basis).
    Identity,
    /// Two columns `[1, x]` — the linear lag basis: a constant level plus
    /// an effect that changes linearly with lag.
    Affine,
    /// One constant-one column (the lag basis degenerated by `max_lag = 0`).
    Constant,
    /// Clamped B-spline; `knots` is the full knot vector of length
    /// `df + degree + 1` with `degree + 1` copies of each boundary.
    BSpline { degree: usize, knots: Vec<f64> },
}

/// Type-7 (linear-interpolation) quantile of pre-sorted values: the
/// order-statistic interpolation at index `(n−1)·p`, the same rule used
/// for knot placement and bootstrap interval endpoints.
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 < n {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    } else {
        sorted[n - 1]
    }
}

/// Full clamped knot vector for `df` basis functions of `degree`.
fn clamped_knots(degree: usize, lo: f64, hi: f64, internal: &[f64]) -> Vec<f64> {
    let mut knots = Vec::with_capacity(internal.len() + 2 * (degree + 1));
    knots.extend(std::iter::repeat_n(lo, degree + 1));
    knots.extend_from_slice(internal);
    knots.extend(std::iter::repeat_n(hi, degree + 1));
    knots
}

fn check_boundary(lo: f64, hi: f64) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
        return Err(Error::DegenerateBoundary { lo, hi });
    }
    Ok(())
}

fn check_internal_knots(internal: &[f64], lo: f64, hi: f64) -> Result<()> {
    for &k in internal {
        if !(k > lo && k < hi) {
            return Err(Error::KnotsOutOfRange { knot: k, lo, hi });
        }
    }
    if internal.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidBasisSpec(format!(
            "internal knots must be strictly increasing, got {internal:?}"
        )));
    }
    Ok(())
}

impl FittedBasis {
    /// Pin a spec to observed variable values: boundary at min/max,
    /// internal knots at equally spaced quantiles.
    pub fn fit_to_values(spec: &BasisSpec, values: &[f64]) -> Result<FittedBasis> {
        spec.validate()?;
        match *spec {
            BasisSpec::Linear => Ok(FittedBasis::Identity),
            BasisSpec::BSpline { degree, df } => {
                if values.is_empty() {
                    return Err(Error::InvalidBasisSpec(
                        "cannot place knots on an empty series".into(),
                    ));
                }
                let mut sorted: Vec<f64> =
                    values.iter().copied().filter(|v| v.is_finite()).collect();
                sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
                check_boundary(lo, hi)?;
                let n_internal = df - degree - 1;
                let internal: Vec<f64> = (1..=n_internal)
                    .map(|i| quantile_type7(&sorted, i as f64 / (n_internal + 1) as f64))
                    .collect();
                check_internal_knots(&internal, lo, hi)?;
                Ok(FittedBasis::BSpline {
                    degree,
                    knots: clamped_knots(degree, lo, hi, &internal),
                })
            }
        }
    }

    /// Pin a spec to the lag dimension, evaluated on the integers
    /// `0..=max_lag`.
    pub fn for_lags(spec: &BasisSpec, max_lag: usize) -> Result<FittedBasis> {
        spec.validate()?;
        match *spec {
            BasisSpec::Linear => Ok(if max_lag == 0 {
                FittedBasis::Constant
            } else {
                FittedBasis::Affine
            }),
            BasisSpec::BSpline { degree, df } => {
                let lags: Vec<f64> = (0..=max_lag).map(|l| l as f64).collect();
                if max_lag == 0 {
                    return Err(Error::DegenerateBoundary { lo: 0.0, hi: 0.0 });
                }
                FittedBasis::fit_to_values(&BasisSpec::BSpline { degree, df }, &lags)
            }
        }
    }

    /// Number of basis functions (columns).
    pub fn n_cols(&self) -> usize {
        match self {
            FittedBasis::Identity | FittedBasis::Constant => 1,
            FittedBasis::Affine => 2,
            FittedBasis::BSpline { degree, knots } => knots.len() - degree - 1,
        }
    }

    /// Boundary of the supported range, if the basis has one.
    pub fn boundary(&self) -> Option<(f64, f64)> {
        match self {
            FittedBasis::BSpline { knots, .. } => Some((knots[0], *knots.last().unwrap())),
            _ => None,
        }
    }

    /// Evaluate all basis functions at `x` into `out` (length `n_cols`).
    /// B-spline arguments outside the boundary are clamped to it; the
    /// return value counts clamped evaluations (0 or 1).
    pub fn eval_into(&self, x: f64, out: &mut [f64]) -> usize {
        debug_assert_eq!(out.len(), self.n_cols());
        match self {
            FittedBasis::Identity => {
                out[0] = x;
                0
            }
            FittedBasis::Constant => {
                out[0] = 1.0;
                0
            }
            FittedBasis::Affine => {
                out[0] = 1.0;
                out[1] = x;
                0
            }
            FittedBasis::BSpline { degree, knots } => {
                let lo = knots[0];
                let hi = *knots.last().unwrap();
                let (xc, clamped) = if x < lo {
                    (lo, 1)
                } else if x > hi {
                    (hi, 1)
                } else {
                    (x, 0)
                };
                bspline_row(*degree, knots, xc, out);
                clamped
            }
        }
    }

    /// Evaluate without clamping; out-of-range B-spline arguments are
    /// errors (used at fit time, where the data defines the boundary).
    pub fn eval_strict(&self, x: f64, out: &mut [f64]) -> Result<()> {
        if let Some((lo, hi)) = self.boundary() {
            if x < lo || x > hi {
                return Err(Error::ValueOutOfRange { value: x, lo, hi });
            }
        }
        self.eval_into(x, out);
        Ok(())
    }

    /// Evaluate at every point of `x`, one row per point (strict range).
    pub fn eval_matrix(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(x.len(), self.n_cols());
        for (t, &v) in x.iter().enumerate() {
            let mut row = vec![0.0; self.n_cols()];
            self.eval_strict(v, &mut row)?;
            for (j, b) in row.iter().enumerate() {
                out[(t, j)] = *b;
            }
        }
        Ok(out)
    }
}

/// Knot span index i with `knots[i] <= x < knots[i+1]`; the right boundary
/// maps to the last non-empty span so splines are left-continuous there.
fn find_span(n_basis: usize, degree: usize, knots: &[f64], x: f64) -> usize {
    if x >= knots[n_basis] {
        return n_basis - 1;
    }
    if x <= knots[degree] {
        return degree;
    }
    let (mut lo, mut hi) = (degree, n_basis);
    let mut mid = (lo + hi) / 2;
    while x < knots[mid] || x >= knots[mid + 1] {
        if x < knots[mid] {
            hi = mid;
        } else {
            lo = mid;
        }
        mid = (lo + hi) / 2;
    }
    mid
}

/// All `n_basis` B-spline values at one point by the banded Cox–de Boor
/// recurrence: only `degree + 1` functions are non-zero on any span.
fn bspline_row(degree: usize, knots: &[f64], x: f64, out: &mut [f64]) {
    let n_basis = knots.len() - degree - 1;
    out.fill(0.0);
    let span = find_span(n_basis, degree, knots, x);
    let mut vals = vec![0.0; degree + 1];
    let mut left = vec![0.0; degree + 1];
    let mut right = vec![0.0; degree + 1];
    vals[0] = 1.0;
    for j in 1..=degree {
        left[j] = x - knots[span + 1 - j];
        right[j] = knots[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            let tmp = vals[r] / (right[r + 1] + left[j - r]);
            vals[r] = saved + right[r + 1] * tmp;
            saved = left[j - r] * tmp;
        }
        vals[j] = saved;
    }
    for (r, &v) in vals.iter().enumerate() {
        out[span - degree + r] = v;
    }
}

/// B-spline basis matrix with explicit boundary and internal knots:
/// row t holds the `df` basis functions evaluated at `x[t]`.
///
/// The full basis is returned, summing to 1 in every row; no function is
/// dropped for identifiability — intercept handling is the regression's
/// job. Points outside `[lo, hi]` are errors here, not clamped.
pub fn bspline_basis(
    x: &[f64],
    spec: &BasisSpec,
    boundary: (f64, f64),
    internal_knots: &[f64],
) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let (degree, df) = match *spec {
        BasisSpec::BSpline { degree, df } => (degree, df),
        BasisSpec::Linear => {
            return Err(Error::InvalidBasisSpec(
                "bspline_basis requires a bspline spec".into(),
            ))
        }
    };
    let (lo, hi) = boundary;
    check_boundary(lo, hi)?;
    check_internal_knots(internal_knots, lo, hi)?;
    if internal_knots.len() != df - degree - 1 {
        return Err(Error::InvalidBasisSpec(format!(
            "df {df} with degree {degree} needs {} internal knots, got {}",
            df - degree - 1,
            internal_knots.len()
        )));
    }
    let basis = FittedBasis::BSpline {
        degree,
        knots: clamped_knots(degree, lo, hi, internal_knots),
    };
    basis.eval_matrix(x)
}

/// Single-column basis equal to the series itself.
pub fn linear_basis(x: &[f64]) -> DMatrix<f64> {
    DMatrix::from_iterator(x.len(), 1, x.iter().copied())
}

/// Distributed-lag cross-basis of one covariate.
///
/// Column `(j, k)` at row `t` is `Σ_{ℓ=0..max_lag} B_j(x[t−ℓ]) · C_k(ℓ)`
/// with `B` the variable basis and `C` the lag basis on `{0..max_lag}`.
/// Columns are ordered variable-major: index `j·l + k`.
#[derive(Debug, Clone)]
pub struct CrossBasis {
    /// T×(v·l); rows before `valid_from` are NaN (incomplete lag history).
    pub matrix: DMatrix<f64>,
    pub var_spec: BasisSpec,
    pub lag_spec: BasisSpec,
    pub max_lag: usize,
    /// First row with a complete lag window.
    pub valid_from: usize,
    pub var_basis: FittedBasis,
    pub lag_basis: FittedBasis,
    /// Precomputed lag-basis values: entry (ℓ, k) = C_k(ℓ).
    lag_values: DMatrix<f64>,
}

impl CrossBasis {
    pub fn n_var_cols(&self) -> usize {
        self.var_basis.n_cols()
    }

    pub fn n_lag_cols(&self) -> usize {
        self.lag_basis.n_cols()
    }

    pub fn n_cols(&self) -> usize {
        self.matrix.ncols()
    }

    /// Column names `{prefix}_v{j}_l{k}` (1-based), matching the
    /// variable-major column order.
    pub fn column_names(&self, prefix: &str) -> Vec<String> {
        let (v, l) = (self.n_var_cols(), self.n_lag_cols());
        let mut names = Vec::with_capacity(v * l);
        for j in 1..=v {
            for k in 1..=l {
                names.push(format!("{prefix}_v{j}_l{k}"));
            }
        }
        names
    }

    /// Cross-basis row for the latest time point of `history`
    /// (chronological; the last element is time t). Values outside the
    /// training boundary are clamped; the count of clamped evaluations is
    /// returned alongside the row.
    pub fn eval_row(&self, history: &[f64]) -> Result<(Vec<f64>, usize)> {
        if history.len() <= self.max_lag {
            return Err(Error::LagTooLarge {
                lag: self.max_lag,
                len: history.len(),
            });
        }
        let (v, l) = (self.n_var_cols(), self.n_lag_cols());
        let mut row = vec![0.0; v * l];
        let mut var_vals = vec![0.0; v];
        let mut clamped = 0;
        let t = history.len() - 1;
        for lag in 0..=self.max_lag {
            clamped += self.var_basis.eval_into(history[t - lag], &mut var_vals);
            for j in 0..v {
                for k in 0..l {
                    row[j * l + k] += var_vals[j] * self.lag_values[(lag, k)];
                }
            }
        }
        Ok((row, clamped))
    }
}

/// Build the cross-basis of `x` with lags `0..=max_lag`.
///
/// The variable basis is pinned to the observed values of `x` (boundary at
/// min/max, quantile knots); the lag basis is pinned to `{0..max_lag}`.
pub fn cross_basis(
    x: &[f64],
    max_lag: usize,
    var_spec: &BasisSpec,
    lag_spec: &BasisSpec,
) -> Result<CrossBasis> {
    // Validates max_lag < len and gives the incomplete-row convention.
    let lags = lag_matrix(x, max_lag)?;
    let var_basis = FittedBasis::fit_to_values(var_spec, x)?;
    let lag_basis = FittedBasis::for_lags(lag_spec, max_lag)?;
    let (v, l) = (var_basis.n_cols(), lag_basis.n_cols());

    let mut lag_values = DMatrix::zeros(max_lag + 1, l);
    let mut lag_row = vec![0.0; l];
    for lag in 0..=max_lag {
        lag_basis.eval_strict(lag as f64, &mut lag_row)?;
        for k in 0..l {
            lag_values[(lag, k)] = lag_row[k];
        }
    }

    let t_len = x.len();
    let mut matrix = DMatrix::from_element(t_len, v * l, f64::NAN);
    let mut var_vals = vec![0.0; v];
    for t in lags.complete_from..t_len {
        for c in 0..v * l {
            matrix[(t, c)] = 0.0;
        }
        for lag in 0..=max_lag {
            var_basis.eval_strict(lags.values[(t, lag)], &mut var_vals)?;
            for j in 0..v {
                for k in 0..l {
                    matrix[(t, j * l + k)] += var_vals[j] * lag_values[(lag, k)];
                }
            }
        }
    }

    Ok(CrossBasis {
        matrix,
        var_spec: *var_spec,
        lag_spec: *lag_spec,
        max_lag,
        valid_from: lags.complete_from,
        var_basis,
        lag_basis,
        lag_values,
    })
}
