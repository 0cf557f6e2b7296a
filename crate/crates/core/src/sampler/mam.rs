//! Metropolis-within-Gibbs for the MAM model with global primary weights.
//!
//! One sweep updates `z* -> s -> mu -> phi -> pi`. Allocations and
//! dispersions are drawn with the augmentation variables integrated out;
//! `s` is redrawn right after `z*` and consumed only by the `mu` step.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Binomial, Distribution};

use super::kernels::{self, CountCache};
use super::record::Recorder;
use super::{block_rate, select_start, ChainOutput, Draw, ModelKind, Proposal, SamplerSettings};
use crate::data::Dataset;
use crate::error::{config, Result};
use crate::model::{
    component_means, ln_multiple_weights_into, ConnectionMatrix, MixingWeights, ModelConfig, ParameterState,
    Scheme, WEIGHT_CLAMP,
};
use crate::spatial::logistic_weight;

/// Full-conditional updates for one MAM chain over a fixed dataset.
pub struct MamSampler<'a> {
    data: &'a Dataset,
    cfg: &'a ModelConfig,
    settings: SamplerSettings,
    u: ConnectionMatrix,
    cache: CountCache,
    mu_props: Vec<Proposal>,
    phi_props: Vec<Proposal>,
    iter: usize,
}

impl<'a> MamSampler<'a> {
    pub fn new(data: &'a Dataset, cfg: &'a ModelConfig, settings: &SamplerSettings) -> Result<Self> {
        cfg.validate()?;
        cfg.check_conditions(data.n_conditions())?;
        settings.validate()?;
        let u = cfg.connection();
        let n_cond = data.n_conditions();
        Ok(Self {
            data,
            cfg,
            settings: settings.clone(),
            mu_props: vec![Proposal::new(settings.proposal_sd_mu); cfg.k * n_cond],
            phi_props: vec![Proposal::new(settings.proposal_sd_phi); u.n_components() * n_cond],
            u,
            cache: CountCache::new(data),
            iter: 0,
        })
    }

    pub fn data(&self) -> &Dataset {
        self.data
    }

    pub fn config(&self) -> &ModelConfig {
        self.cfg
    }

    pub fn connection(&self) -> &ConnectionMatrix {
        &self.u
    }

    pub(crate) fn settings(&self) -> &SamplerSettings {
        &self.settings
    }

    /// Sets the iteration index used for burn-in adaptation and bookkeeping.
    pub fn set_iteration(&mut self, t: usize) {
        self.iter = t;
    }

    pub fn iteration(&self) -> usize {
        self.iter
    }

    /// Starting point: primary means at nonzero-count quantiles, mid-range
    /// dispersions, `s = 1`, allocations drawn once from that model.
    pub fn initial_state<R: Rng + ?Sized>(&self, weights: MixingWeights, rng: &mut R) -> Result<ParameterState> {
        self.start_state(0, weights, rng)
    }

    /// Like [`initial_state`](Self::initial_state) with the means of starting
    /// candidate `candidate` (0 is the quantile start).
    pub fn start_state<R: Rng + ?Sized>(
        &self,
        candidate: usize,
        weights: MixingWeights,
        rng: &mut R,
    ) -> Result<ParameterState> {
        let (p, n_cond) = (self.data.n_units(), self.data.n_conditions());
        let mu = kernels::start_means(self.data, self.cfg.k, candidate, rng);
        let hyper = &self.cfg.hyper;
        let mut state = ParameterState {
            mu,
            phi: DMatrix::from_element(self.u.n_components(), n_cond, 0.5 * (hyper.a_phi + hyper.b_phi)),
            weights,
            s: DMatrix::from_element(p, n_cond, 1.0),
            z_star: vec![0; p],
        };
        self.sample_z_star(&mut state, rng)?;
        Ok(state)
    }

    pub fn component_means(&self, state: &ParameterState) -> DMatrix<f64> {
        component_means(&state.mu, self.cfg)
    }

    /// Row-major `p x k*` table of per-unit component log-likelihoods.
    pub fn component_loglik(&self, state: &ParameterState) -> Vec<f64> {
        kernels::component_loglik(self.data, &self.cache, &self.component_means(state), &state.phi)
    }

    /// Draws every `z*_j` from its categorical full conditional. Returns the
    /// mixture log-likelihood at the incoming parameters.
    pub fn sample_z_star<R: Rng + ?Sized>(&self, state: &mut ParameterState, rng: &mut R) -> Result<f64> {
        let loglik = self.component_loglik(state);
        let n_comp = self.u.n_components();
        let u = &self.u;
        let ParameterState { weights, z_star, .. } = state;
        match weights {
            MixingWeights::Global(pi) => {
                let mut lw = vec![0.0; n_comp];
                ln_multiple_weights_into(pi, u, &mut lw);
                kernels::draw_allocations(rng, &loglik, n_comp, |_, b| b.copy_from_slice(&lw), z_star)
            }
            MixingWeights::Spatial { x, eta } => {
                let mut pi = vec![0.0; u.k()];
                let (x, eta) = (&*x, *eta);
                kernels::draw_allocations(
                    rng,
                    &loglik,
                    n_comp,
                    |j, b| {
                        for (i, p) in pi.iter_mut().enumerate() {
                            *p = logistic_weight(x[(i, j)], eta);
                        }
                        ln_multiple_weights_into(&pi, u, b);
                    },
                    z_star,
                )
            }
        }
    }

    /// `s_jd ~ Gamma(phi_hd + y_jd, phi_hd + mu*_dh)`.
    pub fn sample_s<R: Rng + ?Sized>(&self, state: &mut ParameterState, rng: &mut R) {
        let means = self.component_means(state);
        kernels::draw_augmentation(rng, self.data, &state.z_star, &means, &state.phi, &mut state.s);
    }

    /// Conjugate update of the primary means under the additive scheme.
    ///
    /// Each count of a multiple-allocation unit is thinned into per-cluster
    /// Poisson subcounts with probabilities proportional to the primary means;
    /// then `mu_id ~ Gamma(a_mu + subcounts, b_mu + exposure)`.
    pub fn sample_mu_additive<R: Rng + ?Sized>(&self, state: &mut ParameterState, rng: &mut R) -> Result<()> {
        if self.cfg.scheme != Scheme::Additive {
            return config(format!("the conjugate mean update needs the additive scheme, not {}", self.cfg.scheme));
        }
        let (k, n_cond) = (self.cfg.k, self.data.n_conditions());
        let mut sub = DMatrix::<f64>::zeros(k, n_cond);
        let mut exposure = DMatrix::<f64>::zeros(k, n_cond);
        let mut selected = Vec::with_capacity(k);
        for (j, &h) in state.z_star.iter().enumerate() {
            selected.clear();
            selected.extend((0..k).filter(|&i| self.u.member(h, i)));
            if selected.is_empty() {
                continue;
            }
            for d in 0..n_cond {
                let y = self.data.count(j, d);
                let s = state.s[(j, d)];
                for &i in &selected {
                    exposure[(i, d)] += s;
                }
                if y == 0 {
                    continue;
                }
                // multinomial split as a chain of binomials
                let mut remaining = y;
                let mut mass: f64 = selected.iter().map(|&i| state.mu[(i, d)]).sum();
                for (n, &i) in selected.iter().enumerate() {
                    let take = if n + 1 == selected.len() {
                        remaining
                    } else {
                        let prob = (state.mu[(i, d)] / mass).clamp(0.0, 1.0);
                        mass -= state.mu[(i, d)];
                        Binomial::new(remaining, prob).expect("valid binomial").sample(rng)
                    };
                    sub[(i, d)] += take as f64;
                    remaining -= take;
                    if remaining == 0 {
                        break;
                    }
                }
            }
        }
        let hyper = &self.cfg.hyper;
        for i in 0..k {
            for d in 0..n_cond {
                state.mu[(i, d)] = kernels::gamma(rng, hyper.a_mu + sub[(i, d)], hyper.b_mu + exposure[(i, d)]);
            }
        }
        Ok(())
    }

    /// Random-walk Metropolis on `log mu_id` against the complete-data NB
    /// likelihood of units whose component includes cluster `i`.
    pub fn sample_mu_mh<R: Rng + ?Sized>(&mut self, state: &mut ParameterState, rng: &mut R) -> Result<()> {
        let members = kernels::members(&state.z_star, self.u.n_components());
        let (k, n_cond) = (self.cfg.k, self.data.n_conditions());
        let hyper = self.cfg.hyper;
        for i in 0..k {
            let comps: Vec<usize> = (0..self.u.n_components()).filter(|&h| self.u.member(h, i)).collect();
            for d in 0..n_cond {
                let cur = state.mu[(i, d)];
                let prop = &self.mu_props[i * n_cond + d];
                let new = cur * (prop.sd() * kernels::normal(rng)).exp();
                let mut log_ratio = hyper.a_mu * (new.ln() - cur.ln()) - hyper.b_mu * (new - cur);
                let theta_b = self.cfg.theta_b(d);
                for &h in &comps {
                    if members[h].is_empty() {
                        continue;
                    }
                    let phi = state.phi[(h, d)];
                    let m_cur = crate::model::component_mean(&self.u, h, &state.mu, d, theta_b, self.cfg.scheme);
                    state.mu[(i, d)] = new;
                    let m_new = crate::model::component_mean(&self.u, h, &state.mu, d, theta_b, self.cfg.scheme);
                    state.mu[(i, d)] = cur;
                    log_ratio += kernels::nb_sum(self.data, &self.cache, &members[h], d, m_new, phi)
                        - kernels::nb_sum(self.data, &self.cache, &members[h], d, m_cur, phi);
                }
                let accept = log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio;
                if accept {
                    state.mu[(i, d)] = new;
                }
                self.mu_props[i * n_cond + d].record(accept, self.iter, &self.settings);
            }
        }
        Ok(())
    }

    /// Scheme-appropriate mean update.
    pub fn sample_mu<R: Rng + ?Sized>(&mut self, state: &mut ParameterState, rng: &mut R) -> Result<()> {
        match self.cfg.scheme {
            Scheme::Additive => self.sample_mu_additive(state, rng),
            Scheme::Codominance0 | Scheme::Codominance1 => self.sample_mu_mh(state, rng),
        }
    }

    /// Reflected random walk on each `phi_hd` over `[a_phi, b_phi]`.
    pub fn sample_phi<R: Rng + ?Sized>(&mut self, state: &mut ParameterState, rng: &mut R) {
        let members = kernels::members(&state.z_star, self.u.n_components());
        let means = self.component_means(state);
        let bounds = (self.cfg.hyper.a_phi, self.cfg.hyper.b_phi);
        kernels::update_phi(
            rng,
            self.data,
            &self.cache,
            &members,
            &means,
            &mut state.phi,
            bounds,
            &mut self.phi_props,
            self.iter,
            &self.settings,
        );
    }

    /// `z* -> s -> mu -> phi`; the weight update is left to the caller.
    pub(crate) fn sweep_common<R: Rng + ?Sized>(&mut self, state: &mut ParameterState, rng: &mut R) -> Result<f64> {
        let ll = self.sample_z_star(state, rng)?;
        self.sample_s(state, rng);
        self.sample_mu(state, rng)?;
        self.sample_phi(state, rng);
        Ok(ll)
    }

    /// One full sweep `z* -> s -> mu -> phi -> pi` with global weights.
    pub fn sweep<R: Rng + ?Sized>(&mut self, state: &mut ParameterState, rng: &mut R) -> Result<f64> {
        let ll = self.sweep_common(state, rng)?;
        state.weights = MixingWeights::Global(sample_pi(&state.z_star, &self.u, rng));
        Ok(ll)
    }

    pub(crate) fn accept_rates(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        if self.cfg.scheme != Scheme::Additive {
            out.insert("mu".to_string(), block_rate(&self.mu_props));
        }
        out.insert("phi".to_string(), block_rate(&self.phi_props));
        out
    }
}

/// `pi_i ~ Beta(1 + m_i, 1 + p - m_i)` with `m_i` the number of units whose
/// component includes cluster `i`, clamped away from 0 and 1.
pub fn sample_pi<R: Rng + ?Sized>(z_star: &[usize], u: &ConnectionMatrix, rng: &mut R) -> Vec<f64> {
    let p = z_star.len() as f64;
    (0..u.k())
        .map(|i| {
            let m = z_star.iter().filter(|&&h| u.member(h, i)).count() as f64;
            let draw = Beta::new(1.0 + m, 1.0 + p - m).expect("positive beta parameters").sample(rng);
            draw.clamp(WEIGHT_CLAMP, 1.0 - WEIGHT_CLAMP)
        })
        .collect()
}

/// Runs a MAM chain and collects posterior summaries.
pub fn run_mam(data: &Dataset, cfg: &ModelConfig, settings: &SamplerSettings) -> Result<ChainOutput> {
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut state = select_start(
        settings,
        &mut rng,
        |c, rng| {
            let s = MamSampler::new(data, cfg, settings)?;
            let st = s.start_state(c, MixingWeights::Global(vec![0.5; cfg.k]), rng)?;
            Ok((s, st))
        },
        |(s, st), t, rng| {
            s.set_iteration(t);
            s.sweep(st, rng)
        },
    )?
    .1;
    let mut sampler = MamSampler::new(data, cfg, settings)?;
    let mut rec = Recorder::new(ModelKind::Mam, cfg.k, data.n_units(), sampler.u.n_components(), settings.seed);
    for t in 0..settings.n_iter {
        sampler.set_iteration(t);
        let ll = sampler.sweep(&mut state, &mut rng)?;
        rec.trace(ll);
        if settings.keeps(t) {
            let pi = match &state.weights {
                MixingWeights::Global(pi) => pi.clone(),
                MixingWeights::Spatial { .. } => unreachable!("MAM chains keep global weights"),
            };
            let draw = Draw { iter: t, mu: state.mu.clone(), phi: state.phi.clone(), pi: Some(pi), eta: None, log_lik: ll };
            rec.store(draw, &state.z_star);
        }
    }
    Ok(rec.finish(sampler.accept_rates()))
}
