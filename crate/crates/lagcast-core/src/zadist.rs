//! Zero-adjusted gamma (ZAGA) and zero-adjusted inverse-Gaussian (ZAIG)
//! distributions: mixed discrete-continuous laws with a point mass ν at
//! zero and a continuous density on the positive reals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::error::{Error, Result};

/// ZAGA(μ, σ, ν): `P(Y=0) = ν`; conditional on `Y > 0`, `Y` is gamma with
/// `E = μ` and `V = σ²μ²` (shape `1/σ²`, scale `σ²μ`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZagaParams {
    pub mu: f64,
    pub sigma: f64,
    pub nu: f64,
}

/// ZAIG(μ, σ, ν): same mixture with an inverse-Gaussian positive part.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZaigParams {
    pub mu: f64,
    pub sigma: f64,
    pub nu: f64,
}

fn check_params(mu: f64, sigma: f64, nu: f64) -> Result<()> {
    if !(mu.is_finite() && sigma.is_finite() && nu.is_finite()) {
        return Err(Error::InvalidParams(format!(
            "non-finite parameters mu={mu}, sigma={sigma}, nu={nu}"
        )));
    }
    if mu <= 0.0 {
        return Err(Error::InvalidParams(format!("mu must be > 0, got {mu}")));
    }
    if sigma <= 0.0 {
        return Err(Error::InvalidParams(format!(
            "sigma must be > 0, got {sigma}"
        )));
    }
    // Degenerate nu = 0 and nu = 1 are well-defined for evaluation and
    // sampling; only fitting requires an interior value.
    if !(0.0..=1.0).contains(&nu) {
        return Err(Error::InvalidParams(format!(
            "nu must be in [0, 1], got {nu}"
        )));
    }
    Ok(())
}

impl ZagaParams {
    pub fn new(mu: f64, sigma: f64, nu: f64) -> Result<Self> {
        check_params(mu, sigma, nu)?;
        Ok(Self { mu, sigma, nu })
    }

    /// Gamma shape of the positive part: `k = 1/σ²`.
    pub fn shape(&self) -> f64 {
        1.0 / (self.sigma * self.sigma)
    }

    /// Gamma scale of the positive part: `θ = σ²μ`.
    pub fn scale(&self) -> f64 {
        self.sigma * self.sigma * self.mu
    }
}

impl ZaigParams {
    pub fn new(mu: f64, sigma: f64, nu: f64) -> Result<Self> {
        check_params(mu, sigma, nu)?;
        Ok(Self { mu, sigma, nu })
    }
}

/// Log-density of the gamma positive part, evaluated in log space so that
/// extreme shapes (small σ) cannot overflow.
fn gamma_log_pdf(y: f64, shape: f64, scale: f64) -> f64 {
    -ln_gamma(shape) - shape * scale.ln() + (shape - 1.0) * y.ln() - y / scale
}

/// ZAGA density: `ν` at `y = 0`, `(1−ν)·f_Gamma(y)` for `y > 0`.
pub fn zaga_pdf(y: f64, p: &ZagaParams) -> Result<f64> {
    Ok(zaga_log_pdf(y, p)?.exp())
}

/// Natural log of [`zaga_pdf`]; `-inf` where the density is zero.
pub fn zaga_log_pdf(y: f64, p: &ZagaParams) -> Result<f64> {
    check_params(p.mu, p.sigma, p.nu)?;
    if y < 0.0 || !y.is_finite() {
        return Err(Error::NegativeY(y));
    }
    if y == 0.0 {
        return Ok(p.nu.ln());
    }
    if p.nu >= 1.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok((1.0 - p.nu).ln() + gamma_log_pdf(y, p.shape(), p.scale()))
}

/// ZAGA distribution function: `F(y) = ν + (1−ν)·GammaCDF(y)`.
pub fn zaga_cdf(y: f64, p: &ZagaParams) -> Result<f64> {
    check_params(p.mu, p.sigma, p.nu)?;
    if y < 0.0 || y.is_nan() {
        return Err(Error::NegativeY(y));
    }
    if y == 0.0 {
        return Ok(p.nu);
    }
    let gamma_cdf = if y.is_infinite() {
        1.0
    } else {
        gamma_lr(p.shape(), y / p.scale())
    };
    Ok(p.nu + (1.0 - p.nu) * gamma_cdf)
}

/// One ZAGA draw from the supplied generator.
pub fn zaga_draw<R: Rng + ?Sized>(p: &ZagaParams, rng: &mut R) -> f64 {
    if rng.random::<f64>() < p.nu {
        return 0.0;
    }
    Gamma::new(p.shape(), p.scale())
        .expect("validated gamma parameters")
        .sample(rng)
}

/// `n` ZAGA draws from an explicit generator (one generator per task).
pub fn zaga_sample_with<R: Rng + ?Sized>(p: &ZagaParams, n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| zaga_draw(p, rng)).collect()
}

/// `n` ZAGA draws, deterministic in `seed`.
pub fn zaga_sample(p: &ZagaParams, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    zaga_sample_with(p, n, &mut rng)
}

/// Mean and variance of the mixture:
/// `E = (1−ν)μ`, `V = (1−ν)μ²(σ² + ν)`.
pub fn zaga_moments(p: &ZagaParams) -> (f64, f64) {
    let (mu, sigma, nu) = (p.mu, p.sigma, p.nu);
    let mean = (1.0 - nu) * mu;
    let var = (1.0 - nu) * mu * mu * (sigma * sigma + nu);
    (mean, var)
}

/// ZAIG density: `ν` at zero; for `y > 0`,
/// `(1−ν)·(2πσ²y³)^{−1/2}·exp(−(y−μ)²/(2μ²σ²y))`.
pub fn zaig_pdf(y: f64, p: &ZaigParams) -> Result<f64> {
    check_params(p.mu, p.sigma, p.nu)?;
    if y < 0.0 || !y.is_finite() {
        return Err(Error::NegativeY(y));
    }
    if y == 0.0 {
        return Ok(p.nu);
    }
    if p.nu >= 1.0 {
        return Ok(0.0);
    }
    let (mu, sigma) = (p.mu, p.sigma);
    let log_norm = -0.5 * (2.0 * std::f64::consts::PI * sigma * sigma * y * y * y).ln();
    let exponent = -(y - mu) * (y - mu) / (2.0 * mu * mu * sigma * sigma * y);
    Ok((1.0 - p.nu) * (log_norm + exponent).exp())
}
