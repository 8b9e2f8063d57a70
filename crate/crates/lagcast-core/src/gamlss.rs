//! Maximum-likelihood regression with a zero-adjusted gamma response:
//! log link for μ carrying the covariates, intercept-only σ (log link)
//! and ν (logit link).

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::basis::CrossBasis;
use crate::error::{Error, Result};
use crate::panel::{MonthIndex, RiskSeries};
use crate::textfmt::sig17;

pub const INTERCEPT: &str = "intercept";
pub const RR_LAG1: &str = "rr_lag1";

/// Names of the 11 month-dummy columns; January is the reference level.
pub fn month_dummy_names() -> Vec<String> {
    (2..=12).map(|m| format!("month_{m:02}")).collect()
}

/// Dummy encoding of a calendar month (January → all zeros).
pub fn month_dummy_row(month: MonthIndex) -> [f64; 11] {
    let mut row = [0.0; 11];
    if month.month >= 2 {
        row[(month.month - 2) as usize] = 1.0;
    }
    row
}

/// A named, validated regression design.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub names: Vec<String>,
    pub x: DMatrix<f64>,
}

impl DesignMatrix {
    pub fn new(names: Vec<String>, x: DMatrix<f64>) -> Result<Self> {
        if names.len() != x.ncols() {
            return Err(Error::MisalignedInputs(format!(
                "{} column names for {} columns",
                names.len(),
                x.ncols()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::MisalignedInputs(
                "design matrix contains non-finite values".into(),
            ));
        }
        Ok(Self { names, x })
    }

    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.x.ncols()
    }
}

/// Design matrix, response and originating time indices produced by
/// [`assemble_design`].
#[derive(Debug, Clone)]
pub struct AssembledDesign {
    pub design: DesignMatrix,
    pub y: DVector<f64>,
    /// Index into the source series for each design row.
    pub rows: Vec<usize>,
}

/// Columns of one cross-basis that enter a design containing an intercept.
///
/// A partition-of-unity variable basis sums to one across its functions,
/// so each lag column of one variable function is a linear combination of
/// the intercept and the other functions' columns; the first variable
/// function is omitted to keep the design full rank.
pub fn regression_columns(cb: &CrossBasis) -> std::ops::Range<usize> {
    if cb.var_basis.boundary().is_some() {
        cb.n_lag_cols()..cb.n_cols()
    } else {
        0..cb.n_cols()
    }
}

/// Verify columns are linearly independent via modified Gram–Schmidt;
/// columns whose residual norm collapses are named in the error.
fn rank_check(names: &[String], x: &DMatrix<f64>) -> Result<()> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut offending = Vec::new();
    for (j, name) in names.iter().enumerate() {
        let mut v = x.column(j).clone_owned();
        let orig = v.norm();
        for _ in 0..2 {
            for b in &basis {
                let proj = b.dot(&v);
                v -= b * proj;
            }
        }
        let norm = v.norm();
        if norm <= 1e-10 * (orig + 1.0) {
            offending.push(name.clone());
        } else {
            basis.push(v / norm);
        }
    }
    if offending.is_empty() {
        Ok(())
    } else {
        Err(Error::RankDeficient(offending))
    }
}

/// Assemble the shared regression design: intercept, lagged relative risk,
/// the five cross-bases, and 11 month dummies (January reference).
///
/// Row `t` is usable once every cross-basis has a complete lag window at
/// `t` and `RR_{t−1}` exists, i.e. `t ≥ max(valid_from) + 1`.
pub fn assemble_design(
    risk: &RiskSeries,
    crossbases: &[(&str, &CrossBasis)],
    months: &[MonthIndex],
) -> Result<AssembledDesign> {
    let t_len = risk.rr.len();
    if months.len() != t_len || risk.months.len() != t_len {
        return Err(Error::MisalignedInputs(format!(
            "risk series spans {} months, month list {}",
            risk.months.len(),
            months.len()
        )));
    }
    for (name, cb) in crossbases {
        if cb.matrix.nrows() != t_len {
            return Err(Error::MisalignedInputs(format!(
                "cross-basis '{name}' has {} rows for {} months",
                cb.matrix.nrows(),
                t_len
            )));
        }
    }
    let valid_from = crossbases
        .iter()
        .map(|(_, cb)| cb.valid_from)
        .max()
        .unwrap_or(0);
    let start = valid_from + 1;
    if start >= t_len {
        return Err(Error::MisalignedInputs(format!(
            "no usable rows: series length {t_len}, first valid row {start}"
        )));
    }

    let mut names = vec![INTERCEPT.to_string(), RR_LAG1.to_string()];
    for (prefix, cb) in crossbases {
        let all = cb.column_names(prefix);
        for c in regression_columns(cb) {
            names.push(all[c].clone());
        }
    }
    names.extend(month_dummy_names());

    let rows: Vec<usize> = (start..t_len).collect();
    let mut x = DMatrix::zeros(rows.len(), names.len());
    let mut y = DVector::zeros(rows.len());
    for (i, &t) in rows.iter().enumerate() {
        y[i] = risk.rr[t];
        let mut j = 0;
        x[(i, j)] = 1.0;
        j += 1;
        x[(i, j)] = risk.rr[t - 1];
        j += 1;
        for (_, cb) in crossbases {
            for c in regression_columns(cb) {
                x[(i, j)] = cb.matrix[(t, c)];
                j += 1;
            }
        }
        for d in month_dummy_row(months[t]) {
            x[(i, j)] = d;
            j += 1;
        }
    }

    rank_check(&names, &x)?;
    let design = DesignMatrix::new(names, x)?;
    Ok(AssembledDesign { design, y, rows })
}

/// One design row in [`assemble_design`] column order, built from the
/// lagged relative risk, each cross-basis's evaluated row (full
/// `n_cols` width, in the same order as `crossbases`), and the calendar
/// month. Used to score months outside the assembled training window.
pub fn prediction_row(
    rr_lag1: f64,
    crossbases: &[(&str, &CrossBasis)],
    cb_rows: &[Vec<f64>],
    month: MonthIndex,
) -> Result<Vec<f64>> {
    if cb_rows.len() != crossbases.len() {
        return Err(Error::MisalignedInputs(format!(
            "{} cross-basis rows for {} cross-bases",
            cb_rows.len(),
            crossbases.len()
        )));
    }
    let mut row = vec![1.0, rr_lag1];
    for ((name, cb), values) in crossbases.iter().zip(cb_rows) {
        if values.len() != cb.n_cols() {
            return Err(Error::MisalignedInputs(format!(
                "cross-basis '{name}' row has {} values, expected {}",
                values.len(),
                cb.n_cols()
            )));
        }
        for c in regression_columns(cb) {
            row.push(values[c]);
        }
    }
    row.extend(month_dummy_row(month));
    Ok(row)
}

/// Fitted zero-adjusted gamma regression.
#[derive(Debug, Clone, PartialEq)]
pub struct ZagaFit {
    pub names: Vec<String>,
    pub beta_mu: DVector<f64>,
    /// Standard errors from the inverse observed information of β.
    pub beta_se: DVector<f64>,
    pub sigma_hat: f64,
    pub nu_hat: f64,
    /// True when the sample had no zeros and ν was pinned to `1/(2n)`.
    pub nu_pinned: bool,
    pub loglik: f64,
    pub n_obs: usize,
    pub iterations: usize,
}

impl ZagaFit {
    pub fn n_params(&self) -> usize {
        self.beta_mu.len() + 2
    }
}

/// ψ′(x), via the recurrence ψ′(x) = ψ′(x+1) + 1/x² and the asymptotic
/// Bernoulli series for large arguments.
fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 20.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    acc + inv
        * (1.0
            + inv
                * (0.5
                    + inv
                        * (1.0 / 6.0
                            + inv2
                                * (-1.0 / 30.0
                                    + inv2
                                        * (1.0 / 42.0
                                            + inv2 * (-1.0 / 30.0 + inv2 * (5.0 / 66.0)))))))
}

/// Gamma log-likelihood of the positive part at shape `k = 1/σ²`:
/// `Σ [(k−1)·ln y + k·ln k − lnΓ(k) − k·(y/μ + ln μ)]`.
fn gamma_loglik(k: f64, sum_ln_y: f64, s_beta: f64, n: f64) -> f64 {
    n * (k * k.ln() - ln_gamma(k)) + (k - 1.0) * sum_ln_y - k * s_beta
}

/// `S(β) = Σ (y·e^{−η} + η)` — the k-free part of the negative gamma
/// log-likelihood; minimized over β.
fn s_of_eta(yp: &DVector<f64>, eta: &DVector<f64>) -> f64 {
    yp.iter()
        .zip(eta.iter())
        .map(|(&y, &e)| y * (-e).exp() + e)
        .sum()
}

fn solve_spd_or_svd(h: &DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(chol) = h.clone().cholesky() {
        return Some(chol.solve(g));
    }
    // Bounded iteration count: a Hessian degenerate enough to stall the
    // SVD should fail the step (caller falls back), not spin.
    h.clone()
        .try_svd(true, true, f64::EPSILON, 10_000)
        .and_then(|svd| svd.solve(g, 1e-12).ok())
}

const MAX_OUTER: usize = 200;
const K_MAX: f64 = 1e12;

/// Fit the zero-adjusted gamma regression by maximum likelihood.
///
/// The likelihood factorizes: ν̂ is the exact zero proportion (pinned to
/// `1/(2n)` with a flag when there are no zeros), and (β, σ) maximize the
/// gamma likelihood of the positive observations via Newton steps on β
/// with step halving, profiling σ by a one-dimensional Newton iteration
/// on the shape each outer step. Converged when the relative change in
/// the full log-likelihood drops below 1e-9.
pub fn fit_zaga(design: &DesignMatrix, y: &DVector<f64>) -> Result<ZagaFit> {
    let n = design.n_rows();
    let p = design.n_cols();
    if y.len() != n {
        return Err(Error::MisalignedInputs(format!(
            "{n} design rows for {} responses",
            y.len()
        )));
    }
    if let Some(&bad) = y.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::NegativeY(bad));
    }
    if n <= p {
        return Err(Error::InsufficientData { rows: n, cols: p });
    }
    rank_check(&design.names, &design.x)?;

    let pos_idx: Vec<usize> = (0..n).filter(|&i| y[i] > 0.0).collect();
    let n_pos = pos_idx.len();
    let n_zero = n - n_pos;
    if n_pos == 0 {
        return Err(Error::AllZeroResponse);
    }
    if n_pos <= p {
        return Err(Error::InsufficientData {
            rows: n_pos,
            cols: p,
        });
    }
    let (nu_hat, nu_pinned) = if n_zero == 0 {
        (1.0 / (2.0 * n as f64), true)
    } else {
        (n_zero as f64 / n as f64, false)
    };
    // Constant in the optimization; part of the reported log-likelihood.
    let bernoulli_ll = if n_zero > 0 {
        n_zero as f64 * nu_hat.ln() + n_pos as f64 * (1.0 - nu_hat).ln()
    } else {
        n_pos as f64 * (1.0 - nu_hat).ln()
    };

    let xp = DMatrix::from_fn(n_pos, p, |i, j| design.x[(pos_idx[i], j)]);
    let yp = DVector::from_fn(n_pos, |i, _| y[pos_idx[i]]);
    let sum_ln_y: f64 = yp.iter().map(|v| v.ln()).sum();

    // Initialize β by least squares of log(y + ε), ε = half the smallest
    // positive response; σ² by the method of moments on (y − μ)/μ.
    let min_pos = yp.iter().cloned().fold(f64::INFINITY, f64::min);
    let log_y = DVector::from_fn(n_pos, |i, _| (yp[i] + 0.5 * min_pos).ln());
    let mut beta = xp
        .clone()
        .try_svd(true, true, f64::EPSILON, 10_000)
        .ok_or_else(|| {
            Error::SingularRegressors("singular value decomposition did not converge".into())
        })?
        .solve(&log_y, 1e-12)
        .map_err(|e| Error::SingularRegressors(e.to_string()))?;
    let mut eta = &xp * &beta;
    let mut k = {
        let mut sq = 0.0;
        for i in 0..n_pos {
            let mu = eta[i].exp();
            let r = (yp[i] - mu) / mu;
            sq += r * r;
        }
        (sq / n_pos as f64).clamp(1e-8, 1e8).recip()
    };

    let mut s_curr = s_of_eta(&yp, &eta);
    let mut ll_prev = bernoulli_ll + gamma_loglik(k, sum_ln_y, s_curr, n_pos as f64);
    let mut iterations = 0;
    let mut converged = false;

    while iterations < MAX_OUTER {
        iterations += 1;

        // Newton step on β: ∇S = Xᵀ(1 − y·e^{−η}), ∇²S = Xᵀdiag(y·e^{−η})X.
        let w = DVector::from_fn(n_pos, |i, _| yp[i] * (-eta[i]).exp());
        let grad = xp.transpose() * DVector::from_fn(n_pos, |i, _| 1.0 - w[i]);
        let mut xw = xp.clone();
        for i in 0..n_pos {
            for j in 0..p {
                xw[(i, j)] *= w[i];
            }
        }
        let hess = xp.transpose() * xw;
        let step = solve_spd_or_svd(&hess, &grad).ok_or_else(|| Error::NonConvergence {
            iterations,
            grad_norm: grad.norm(),
        })?;

        let mut lambda = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let cand = &beta - &step * lambda;
            let cand_eta = &xp * &cand;
            let cand_s = s_of_eta(&yp, &cand_eta);
            if cand_s <= s_curr + 1e-14 * s_curr.abs() {
                beta = cand;
                eta = cand_eta;
                s_curr = cand_s;
                improved = true;
                break;
            }
            lambda *= 0.5;
        }
        if !improved && grad.norm() > 1e-6 * (1.0 + s_curr.abs()) {
            return Err(Error::NonConvergence {
                iterations,
                grad_norm: grad.norm(),
            });
        }

        // One-dimensional Newton on the shape k (concave in k):
        // dℓ/dk = n(ln k + 1 − ψ(k)) + D with D = Σ[ln(y/μ) − y/μ].
        let d_term = sum_ln_y - s_curr;
        for _ in 0..100 {
            let score = n_pos as f64 * (k.ln() + 1.0 - digamma(k)) + d_term;
            let hess_k = n_pos as f64 * (1.0 / k - trigamma(k));
            let mut delta = -score / hess_k;
            if !delta.is_finite() {
                break;
            }
            // Keep k positive and the likelihood non-decreasing.
            let ll_at = |kk: f64| gamma_loglik(kk, sum_ln_y, s_curr, n_pos as f64);
            let base = ll_at(k);
            let mut accepted = false;
            for _ in 0..40 {
                let cand = (k + delta).clamp(1e-12, K_MAX);
                if ll_at(cand) >= base - 1e-13 * base.abs() {
                    if (cand - k).abs() <= 1e-12 * k {
                        k = cand;
                        break;
                    }
                    k = cand;
                    accepted = true;
                    break;
                }
                delta *= 0.5;
            }
            if !accepted || score.abs() < 1e-10 * n_pos as f64 {
                break;
            }
            if k >= K_MAX {
                break;
            }
        }

        let ll = bernoulli_ll + gamma_loglik(k, sum_ln_y, s_curr, n_pos as f64);
        debug_assert!(
            ll >= ll_prev - 1e-7 * (1.0 + ll_prev.abs()),
            "log-likelihood decreased: {ll_prev} -> {ll}"
        );
        if (ll - ll_prev).abs() <= 1e-9 * (1.0 + ll.abs()) {
            ll_prev = ll;
            converged = true;
            break;
        }
        ll_prev = ll;
    }

    if !converged {
        let w = DVector::from_fn(n_pos, |i, _| yp[i] * (-eta[i]).exp());
        let grad = xp.transpose() * DVector::from_fn(n_pos, |i, _| 1.0 - w[i]);
        return Err(Error::NonConvergence {
            iterations,
            grad_norm: k * grad.norm(),
        });
    }

    // Standard errors from the observed information of β at the optimum:
    // I(β) = k·Xᵀdiag(y/μ)X.
    let w = DVector::from_fn(n_pos, |i, _| yp[i] * (-eta[i]).exp());
    let mut xw = xp.clone();
    for i in 0..n_pos {
        for j in 0..p {
            xw[(i, j)] *= k * w[i];
        }
    }
    let info = xp.transpose() * xw;
    let beta_se = match info.clone().cholesky() {
        Some(chol) => {
            let cov = chol.inverse();
            DVector::from_fn(p, |j, _| cov[(j, j)].max(0.0).sqrt())
        }
        None => {
            let cov = info
                .try_svd(true, true, f64::EPSILON, 10_000)
                .ok_or_else(|| {
                    Error::SingularRegressors(
                        "singular value decomposition did not converge".into(),
                    )
                })?
                .pseudo_inverse(1e-12)
                .map_err(|e| Error::SingularRegressors(e.to_string()))?;
            DVector::from_fn(p, |j, _| cov[(j, j)].max(0.0).sqrt())
        }
    };

    Ok(ZagaFit {
        names: design.names.clone(),
        beta_mu: beta,
        beta_se,
        sigma_hat: (1.0 / k).sqrt(),
        nu_hat,
        nu_pinned,
        loglik: ll_prev,
        n_obs: n,
        iterations,
    })
}

/// Per-row `(μ, mean response)` on a new design with matching columns;
/// the mean response `(1−ν̂)·μ` is the mixture mean used as the point
/// forecast of RR.
pub fn predict_response(fit: &ZagaFit, new_design: &DesignMatrix) -> Result<Vec<(f64, f64)>> {
    if fit.names != new_design.names {
        return Err(Error::ColumnMismatch(format!(
            "fit columns {:?} vs design columns {:?}",
            fit.names, new_design.names
        )));
    }
    let eta = &new_design.x * &fit.beta_mu;
    Ok(eta
        .iter()
        .map(|&e| {
            let mu = e.exp();
            (mu, (1.0 - fit.nu_hat) * mu)
        })
        .collect())
}

/// μ and mixture mean for a single predictor row.
pub fn predict_row(fit: &ZagaFit, row: &[f64]) -> Result<(f64, f64)> {
    if row.len() != fit.beta_mu.len() {
        return Err(Error::ColumnMismatch(format!(
            "row width {} vs {} coefficients",
            row.len(),
            fit.beta_mu.len()
        )));
    }
    let eta: f64 = row.iter().zip(fit.beta_mu.iter()).map(|(a, b)| a * b).sum();
    let mu = eta.exp();
    Ok((mu, (1.0 - fit.nu_hat) * mu))
}

/// Akaike information criterion: `−2·loglik + 2·(len(β) + 2)`.
pub fn aic(fit: &ZagaFit) -> f64 {
    -2.0 * fit.loglik + 2.0 * fit.n_params() as f64
}

impl ZagaFit {
    /// Flat text record (17 significant digits) for bit-reproducible
    /// round trips.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("zaga-fit v1\n");
        out.push_str(&format!("n_obs {}\n", self.n_obs));
        out.push_str(&format!("iterations {}\n", self.iterations));
        out.push_str(&format!("nu_pinned {}\n", u8::from(self.nu_pinned)));
        out.push_str(&format!("sigma {}\n", sig17(self.sigma_hat)));
        out.push_str(&format!("nu {}\n", sig17(self.nu_hat)));
        out.push_str(&format!("loglik {}\n", sig17(self.loglik)));
        for j in 0..self.names.len() {
            out.push_str(&format!(
                "coef {} {} {}\n",
                self.names[j],
                sig17(self.beta_mu[j]),
                sig17(self.beta_se[j])
            ));
        }
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<ZagaFit> {
        let bad = |msg: &str| Error::MalformedRecord(msg.to_string());
        let mut lines = text.lines();
        if lines.next() != Some("zaga-fit v1") {
            return Err(bad("missing 'zaga-fit v1' header"));
        }
        let mut n_obs = None;
        let mut iterations = None;
        let mut nu_pinned = None;
        let mut sigma = None;
        let mut nu = None;
        let mut loglik = None;
        let mut names = Vec::new();
        let mut beta = Vec::new();
        let mut se = Vec::new();
        let mut ended = false;
        for line in lines {
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("n_obs") => {
                    n_obs = Some(
                        parts
                            .next()
                            .and_then(|v| v.parse().ok())
                            .ok_or_else(|| bad("bad n_obs"))?,
                    )
                }
                Some("iterations") => {
                    iterations = Some(
                        parts
                            .next()
                            .and_then(|v| v.parse().ok())
                            .ok_or_else(|| bad("bad iterations"))?,
                    )
                }
                Some("nu_pinned") => {
                    nu_pinned = Some(match parts.next() {
                        Some("0") => false,
                        Some("1") => true,
                        _ => return Err(bad("bad nu_pinned")),
                    })
                }
                Some("sigma") => {
                    sigma = Some(
                        parts
                            .next()
                            .and_then(|v| v.parse().ok())
                            .ok_or_else(|| bad("bad sigma"))?,
                    )
                }
                Some("nu") => {
                    nu = Some(
                        parts
                            .next()
                            .and_then(|v| v.parse().ok())
                            .ok_or_else(|| bad("bad nu"))?,
                    )
                }
                Some("loglik") => {
                    loglik = Some(
                        parts
                            .next()
                            .and_then(|v| v.parse().ok())
                            .ok_or_else(|| bad("bad loglik"))?,
                    )
                }
                Some("coef") => {
                    let name = parts.next().ok_or_else(|| bad("coef missing name"))?;
                    let b: f64 = parts
                        .next()
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| bad("coef missing value"))?;
                    let s: f64 = parts
                        .next()
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| bad("coef missing standard error"))?;
                    names.push(name.to_string());
                    beta.push(b);
                    se.push(s);
                }
                Some("end") => {
                    ended = true;
                    break;
                }
                Some(other) => return Err(bad(&format!("unknown record '{other}'"))),
                None => continue,
            }
        }
        if !ended {
            return Err(bad("missing 'end' terminator"));
        }
        if names.is_empty() {
            return Err(bad("no coefficients"));
        }
        Ok(ZagaFit {
            names,
            beta_mu: DVector::from_vec(beta),
            beta_se: DVector::from_vec(se),
            sigma_hat: sigma.ok_or_else(|| bad("missing sigma"))?,
            nu_hat: nu.ok_or_else(|| bad("missing nu"))?,
            nu_pinned: nu_pinned.ok_or_else(|| bad("missing nu_pinned"))?,
            loglik: loglik.ok_or_else(|| bad("missing loglik"))?,
            n_obs: n_obs.ok_or_else(|| bad("missing n_obs"))?,
            iterations: iterations.ok_or_else(|| bad("missing iterations"))?,
        })
    }
}
