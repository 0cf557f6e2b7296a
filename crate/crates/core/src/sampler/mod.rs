//! MCMC samplers: MAM (global weights), CAR-MAM (spatial field) and the
//! conventional NegBinMix baseline.

mod car;
mod kernels;
mod mam;
mod negbinmix;
mod record;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};

pub use car::{marginal_unit_log_lik, run_car_mam, CarSampler};
pub use mam::{run_mam, sample_pi, MamSampler};
pub use negbinmix::{run_negbinmix, sample_dirichlet};

/// Acceptance rate targeted by burn-in adaptation.
pub const TARGET_ACCEPT: f64 = 0.35;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Mam,
    CarMam,
    #[serde(rename = "negbinmix")]
    NegBinMix,
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mam" => Ok(ModelKind::Mam),
            "car-mam" | "carmam" | "car_mam" => Ok(ModelKind::CarMam),
            "negbinmix" | "nbmix" => Ok(ModelKind::NegBinMix),
            other => config(format!("unknown model '{other}' (expected mam, car-mam or negbinmix)")),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Mam => "mam",
            ModelKind::CarMam => "car-mam",
            ModelKind::NegBinMix => "negbinmix",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerSettings {
    pub n_iter: usize,
    pub n_burnin: usize,
    pub thin: usize,
    pub seed: u64,
    /// Random-walk scale on `log mu` (co-dominance schemes).
    pub proposal_sd_mu: f64,
    /// Random-walk scale on `phi`.
    pub proposal_sd_phi: f64,
    /// Random-walk scale on each field coordinate `x_ij`.
    pub proposal_sd_x: f64,
    /// Random-walk scale on `log eta`.
    pub proposal_sd_eta: f64,
    /// Adapt proposal scales during burn-in.
    pub adapt: bool,
    /// Number of starting points tried before the chain proper.
    pub n_starts: usize,
    /// Sweeps run from each starting point; the best mean log-likelihood
    /// over the second half picks the start.
    pub pilot_iters: usize,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        Self {
            n_iter: 10_000,
            n_burnin: 5_000,
            thin: 1,
            seed: 1,
            proposal_sd_mu: 0.05,
            proposal_sd_phi: 100.0,
            proposal_sd_x: 0.5,
            proposal_sd_eta: 0.2,
            adapt: true,
            n_starts: 8,
            pilot_iters: 100,
        }
    }
}

impl SamplerSettings {
    pub fn new(n_iter: usize, n_burnin: usize, seed: u64) -> Self {
        Self { n_iter, n_burnin, seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_burnin >= self.n_iter {
            return config(format!("burn-in ({}) must be shorter than the chain ({})", self.n_burnin, self.n_iter));
        }
        if self.thin == 0 {
            return config("thinning stride must be at least 1");
        }
        if self.n_starts == 0 {
            return config("at least one starting point is required");
        }
        if self.n_starts > 1 && self.pilot_iters < 2 {
            return config("pilot runs need at least 2 sweeps");
        }
        let sds = [self.proposal_sd_mu, self.proposal_sd_phi, self.proposal_sd_x, self.proposal_sd_eta];
        if sds.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return config("proposal scales must be positive");
        }
        Ok(())
    }

    /// Whether iteration `t` (0-based) is stored.
    pub fn keeps(&self, t: usize) -> bool {
        t >= self.n_burnin && (t - self.n_burnin).is_multiple_of(self.thin)
    }

    pub fn n_stored(&self) -> usize {
        (self.n_iter - self.n_burnin).div_ceil(self.thin)
    }
}

/// One stored post-burn-in sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub iter: usize,
    /// Primary means `k x D` (component means for NegBinMix).
    pub mu: DMatrix<f64>,
    /// Dispersions, one row per component.
    pub phi: DMatrix<f64>,
    /// Global primary weights (MAM) or component weights (NegBinMix).
    pub pi: Option<Vec<f64>>,
    pub eta: Option<f64>,
    pub log_lik: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    pub model: ModelKind,
    /// Primary clusters (MAM, CAR-MAM); 0 for NegBinMix.
    pub k: usize,
    pub n_components: usize,
    pub seed: u64,
    pub draws: Vec<Draw>,
    /// `p x n_components` averages of allocation indicators over stored draws.
    pub alloc_probs: DMatrix<f64>,
    pub map_alloc: Vec<usize>,
    /// Post-burn-in acceptance fraction per Metropolis block.
    pub accept_rates: BTreeMap<String, f64>,
    /// Mixture log-likelihood at the start of every iteration.
    pub log_lik_trace: Vec<f64>,
    /// Posterior mean `pi_ij` (`k x p`), CAR-MAM only.
    pub weight_tracks: Option<DMatrix<f64>>,
}

impl ChainOutput {
    /// Posterior probability that each unit belongs to primary cluster `i`,
    /// i.e. the sum of allocation probabilities over components containing `i`.
    pub fn membership_probs(&self) -> Option<DMatrix<f64>> {
        if self.k == 0 {
            return None;
        }
        let p = self.alloc_probs.nrows();
        Some(DMatrix::from_fn(self.k, p, |i, j| {
            (0..self.n_components)
                .filter(|h| (h >> i) & 1 == 1)
                .map(|h| self.alloc_probs[(j, h)])
                .sum()
        }))
    }

    /// Posterior mean of primary means across stored draws.
    pub fn posterior_mean_mu(&self) -> DMatrix<f64> {
        let n = self.draws.len() as f64;
        let mut acc = DMatrix::zeros(self.draws[0].mu.nrows(), self.draws[0].mu.ncols());
        for d in &self.draws {
            acc += &d.mu;
        }
        acc / n
    }
}

/// Adaptive random-walk scale with acceptance bookkeeping.
#[derive(Debug, Clone)]
pub(crate) struct Proposal {
    log_sd: f64,
    accepted: u64,
    proposed: u64,
}

impl Proposal {
    pub(crate) fn new(sd: f64) -> Self {
        Self { log_sd: sd.ln(), accepted: 0, proposed: 0 }
    }

    #[inline]
    pub(crate) fn sd(&self) -> f64 {
        self.log_sd.exp()
    }

    /// Records an outcome; adapts during burn-in, counts afterwards.
    #[inline]
    pub(crate) fn record(&mut self, accepted: bool, iter: usize, settings: &SamplerSettings) {
        if iter < settings.n_burnin {
            if settings.adapt {
                let rate = (iter as f64 + 1.0).powf(-0.6);
                let a = if accepted { 1.0 } else { 0.0 };
                self.log_sd = (self.log_sd + rate * (a - TARGET_ACCEPT)).clamp(-12.0, 12.0);
            }
        } else {
            self.proposed += 1;
            if accepted {
                self.accepted += 1;
            }
        }
    }
}

/// Runs `pilot_iters` sweeps from each of `n_starts` starting points and
/// returns the state whose late pilot log-likelihood is highest.
pub(crate) fn select_start<R: rand::Rng + ?Sized, S>(
    settings: &SamplerSettings,
    rng: &mut R,
    mut make: impl FnMut(usize, &mut R) -> Result<S>,
    mut step: impl FnMut(&mut S, usize, &mut R) -> Result<f64>,
) -> Result<S> {
    if settings.n_starts == 1 {
        return make(0, rng);
    }
    let mut best: Option<(f64, S)> = None;
    for c in 0..settings.n_starts {
        let mut s = make(c, rng)?;
        let mut score = 0.0;
        for t in 0..settings.pilot_iters {
            let ll = step(&mut s, t, rng)?;
            if 2 * t >= settings.pilot_iters {
                score += ll;
            }
        }
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, s));
        }
    }
    Ok(best.expect("at least one start").1)
}

pub(crate) fn block_rate(props: &[Proposal]) -> f64 {
    let (a, n) = props.iter().fold((0u64, 0u64), |(a, n), p| (a + p.accepted, n + p.proposed));
    if n == 0 {
        0.0
    } else {
        a as f64 / n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn settings_validation() {
        assert!(SamplerSettings::new(10, 10, 0).validate().is_err());
        let mut s = SamplerSettings::new(10, 5, 0);
        assert!(s.validate().is_ok());
        s.thin = 0;
        assert!(s.validate().is_err());
        s.thin = 1;
        s.proposal_sd_x = 0.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn stored_iterations() {
        let mut s = SamplerSettings::new(11, 10, 0);
        assert_eq!(s.n_stored(), 1);
        assert_eq!((0..11).filter(|&t| s.keeps(t)).count(), 1);
        s.n_iter = 20;
        s.thin = 3;
        assert_eq!(s.n_stored(), (0..20).filter(|&t| s.keeps(t)).count());
    }

    #[test]
    fn adaptation_moves_toward_target() {
        let s = SamplerSettings::new(1000, 500, 0);
        let mut p = Proposal::new(1.0);
        for t in 0..100 {
            p.record(false, t, &s);
        }
        assert!(p.sd() < 1.0);
        let mut p = Proposal::new(1.0);
        for t in 0..100 {
            p.record(true, t, &s);
        }
        assert!(p.sd() > 1.0);
        p.record(true, 600, &s);
        assert_eq!((p.accepted, p.proposed), (1, 1));
    }

    #[test]
    fn model_names() {
        for m in [ModelKind::Mam, ModelKind::CarMam, ModelKind::NegBinMix] {
            assert_eq!(m.to_string().parse::<ModelKind>().unwrap(), m);
        }
    }
}
