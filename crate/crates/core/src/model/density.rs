//! Negative Binomial density in the mean/dispersion parameterization.
//!
//! `NB(y | mu, phi) = Γ(phi + y) / (Γ(phi) Γ(y + 1)) (phi / (phi + mu))^phi (mu / (phi + mu))^y`,
//! so `E[y] = mu` and `Var[y] = mu + mu^2 / phi`.

use statrs::function::gamma::ln_gamma;

use crate::error::{domain, Result};

/// Log-probability of `y` under `NB(mu, phi)`.
pub fn nb_log_pmf(y: u64, mu: f64, phi: f64) -> Result<f64> {
    if !mu.is_finite() || !phi.is_finite() || mu <= 0.0 || phi <= 0.0 {
        return domain(format!("negative binomial needs finite mu > 0 and phi > 0, got mu={mu}, phi={phi}"));
    }
    Ok(NbKernel::new(mu, phi).ln_pmf(y, ln_gamma(y as f64 + 1.0)))
}

/// `NB(mu, phi)` with the count-independent terms precomputed.
#[derive(Debug, Clone, Copy)]
pub(crate) struct NbKernel {
    phi: f64,
    ln_gamma_phi: f64,
    ln_p0: f64,
    ln_q: f64,
}

impl NbKernel {
    #[inline]
    pub(crate) fn new(mu: f64, phi: f64) -> Self {
        Self {
            phi,
            ln_gamma_phi: ln_gamma(phi),
            // phi * ln(phi / (phi + mu)), stable for phi >> mu
            ln_p0: -phi * (mu / phi).ln_1p(),
            ln_q: mu.ln() - (phi + mu).ln(),
        }
    }

    /// `ln_gamma_y1` is `ln Γ(y + 1)`, cached by callers that reuse counts.
    #[inline]
    pub(crate) fn ln_pmf(&self, y: u64, ln_gamma_y1: f64) -> f64 {
        if y == 0 {
            return self.ln_p0;
        }
        let yf = y as f64;
        ln_gamma(self.phi + yf) - self.ln_gamma_phi - ln_gamma_y1 + self.ln_p0 + yf * self.ln_q
    }
}
