//! CAR-MAM: MAM with unit-specific primary weights driven by a latent
//! conditional autoregressive field.
//!
//! Sweep: `z* -> s -> mu -> phi -> x -> eta`. The field and `eta` are updated
//! with allocations integrated out.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernels;
use super::mam::MamSampler;
use super::record::Recorder;
use super::{block_rate, select_start, ChainOutput, Draw, ModelKind, Proposal, SamplerSettings};
use crate::data::Dataset;
use crate::error::{config, domain, Result};
use crate::math::log_sum_exp;
use crate::model::{ln_multiple_weights_into, ConnectionMatrix, MixingWeights, ModelConfig, ParameterState};
use crate::spatial::{build_precision, field_to_weights, gamma_weights, logistic_weight, PrecisionSummary};

/// `log sum_h pi*_jh(x) prod_d NB(y_jd | mu*_dh, phi_hd)` for one unit.
pub fn marginal_unit_log_lik(
    y_j: &[u64],
    x_col: &[f64],
    eta: f64,
    state: &ParameterState,
    cfg: &ModelConfig,
) -> Result<f64> {
    if x_col.len() != cfg.k {
        return domain(format!("field column has {} entries, expected {}", x_col.len(), cfg.k));
    }
    if !(eta > 0.0) {
        return domain("eta must be positive");
    }
    let u = cfg.connection();
    let pi: Vec<f64> = x_col.iter().map(|&x| logistic_weight(x, eta)).collect();
    let mut terms = vec![0.0; u.n_components()];
    ln_multiple_weights_into(&pi, &u, &mut terms);
    for (h, t) in terms.iter_mut().enumerate() {
        *t += crate::model::unit_log_likelihood(y_j, h, state, cfg)?;
    }
    Ok(log_sum_exp(&terms))
}

/// Scratch buffers for marginal likelihood evaluations.
struct Marginal {
    pi: Vec<f64>,
    terms: Vec<f64>,
}

impl Marginal {
    fn new(k: usize, n_comp: usize) -> Self {
        Self { pi: vec![0.0; k], terms: vec![0.0; n_comp] }
    }

    /// Marginal log-likelihood of a unit given its component log-likelihood row.
    #[inline]
    fn eval(&mut self, u: &ConnectionMatrix, loglik_row: &[f64], x: impl Fn(usize) -> f64, eta: f64) -> f64 {
        for (i, p) in self.pi.iter_mut().enumerate() {
            *p = logistic_weight(x(i), eta);
        }
        ln_multiple_weights_into(&self.pi, u, &mut self.terms);
        for (t, l) in self.terms.iter_mut().zip(loglik_row) {
            *t += l;
        }
        log_sum_exp(&self.terms)
    }
}

/// Full-conditional updates for a CAR-MAM chain.
pub struct CarSampler<'a> {
    mam: MamSampler<'a>,
    prec: PrecisionSummary,
    x_props: Vec<Proposal>,
    eta_prop: Proposal,
    eta_bounds: (f64, f64),
    eta_init: f64,
    frozen: bool,
}

impl<'a> CarSampler<'a> {
    pub fn new(data: &'a Dataset, cfg: &'a ModelConfig, settings: &SamplerSettings) -> Result<Self> {
        let Some(pos) = data.positions() else {
            return config("the spatial model needs unit positions");
        };
        let spatial = cfg.spatial.unwrap_or_default();
        spatial.validate()?;
        let prec = build_precision(gamma_weights(pos, &spatial)?)?;
        Self::with_precision(data, cfg, settings, prec)
    }

    /// Uses a precomputed precision summary (its order must equal the number of units).
    pub fn with_precision(
        data: &'a Dataset,
        cfg: &'a ModelConfig,
        settings: &SamplerSettings,
        prec: PrecisionSummary,
    ) -> Result<Self> {
        if prec.len() != data.n_units() {
            return domain(format!("precision has order {}, dataset has {} units", prec.len(), data.n_units()));
        }
        let mam = MamSampler::new(data, cfg, settings)?;
        let eta_init = cfg.spatial.as_ref().map_or(1.0, |s| s.eta_init);
        let eta_bounds = (cfg.hyper.eta_lo, cfg.hyper.eta_hi);
        if !(eta_init >= eta_bounds.0 && eta_init <= eta_bounds.1) {
            return config(format!("initial eta {eta_init} lies outside [{}, {}]", eta_bounds.0, eta_bounds.1));
        }
        Ok(Self {
            mam,
            prec,
            x_props: vec![Proposal::new(settings.proposal_sd_x); cfg.k],
            eta_prop: Proposal::new(settings.proposal_sd_eta),
            eta_bounds,
            eta_init,
            frozen: false,
        })
    }

    pub fn precision(&self) -> &PrecisionSummary {
        &self.prec
    }

    pub fn set_iteration(&mut self, t: usize) {
        self.mam.set_iteration(t);
    }

    /// Row-major `p x k*` component log-likelihood table at the current `mu` and `phi`.
    pub fn component_loglik(&self, state: &ParameterState) -> Vec<f64> {
        self.mam.component_loglik(state)
    }

    /// When frozen, sweeps keep `x` and `eta` at their current values.
    pub fn freeze_field(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    /// Field at zero, `eta` at its configured start.
    pub fn initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ParameterState> {
        self.start_state(0, rng)
    }

    /// Starting state with the means of starting candidate `candidate`.
    pub fn start_state<R: Rng + ?Sized>(&self, candidate: usize, rng: &mut R) -> Result<ParameterState> {
        let x = DMatrix::zeros(self.mam.config().k, self.mam.data().n_units());
        self.mam.start_state(candidate, MixingWeights::Spatial { x, eta: self.eta_init }, rng)
    }

    /// Single-site random-walk Metropolis over every `x_ij`, row by row.
    ///
    /// `loglik` is the row-major `p x k*` component log-likelihood table at the
    /// current `mu` and `phi`.
    pub fn sample_x<R: Rng + ?Sized>(&mut self, state: &mut ParameterState, loglik: &[f64], rng: &mut R) {
        let MixingWeights::Spatial { x, eta } = &mut state.weights else {
            unreachable!("CAR-MAM chains keep a spatial field");
        };
        let eta = *eta;
        let u = self.mam.connection();
        let (k, p, n_comp) = (u.k(), x.ncols(), u.n_components());
        let iter = self.mam.iteration();
        let settings = self.mam.settings();
        let mut marg = Marginal::new(k, n_comp);
        let mut row = vec![0.0; p];
        for i in 0..k {
            row.iter_mut().enumerate().for_each(|(j, v)| *v = x[(i, j)]);
            let prop = &mut self.x_props[i];
            for j in 0..p {
                let cur = row[j];
                let new = cur + prop.sd() * kernels::normal(rng);
                let ll_row = &loglik[j * n_comp..(j + 1) * n_comp];
                let l_cur = marg.eval(u, ll_row, |r| x[(r, j)], eta);
                let l_new = marg.eval(u, ll_row, |r| if r == i { new } else { x[(r, j)] }, eta);
                let log_ratio = l_new - l_cur + self.prec.single_site_log_prior_delta(&row, j, new);
                let accept = log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio;
                if accept {
                    row[j] = new;
                    x[(i, j)] = new;
                }
                prop.record(accept, iter, settings);
            }
        }
    }

    /// Random walk on `log eta`, flat in `log eta` over the configured bounds.
    pub fn sample_eta<R: Rng + ?Sized>(&mut self, state: &mut ParameterState, loglik: &[f64], rng: &mut R) {
        let MixingWeights::Spatial { x, eta } = &mut state.weights else {
            unreachable!("CAR-MAM chains keep a spatial field");
        };
        let u = self.mam.connection();
        let (p, n_comp) = (x.ncols(), u.n_components());
        let cur = *eta;
        let new = cur * (self.eta_prop.sd() * kernels::normal(rng)).exp();
        let accept = if new < self.eta_bounds.0 || new > self.eta_bounds.1 {
            false
        } else {
            let mut marg = Marginal::new(u.k(), n_comp);
            let mut log_ratio = 0.0;
            for j in 0..p {
                let ll_row = &loglik[j * n_comp..(j + 1) * n_comp];
                log_ratio += marg.eval(u, ll_row, |r| x[(r, j)], new) - marg.eval(u, ll_row, |r| x[(r, j)], cur);
            }
            log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio
        };
        if accept {
            *eta = new;
        }
        self.eta_prop.record(accept, self.mam.iteration(), self.mam.settings());
    }

    /// One sweep `z* -> s -> mu -> phi -> x -> eta`.
    pub fn sweep<R: Rng + ?Sized>(&mut self, state: &mut ParameterState, rng: &mut R) -> Result<f64> {
        let ll = self.mam.sweep_common(state, rng)?;
        if self.frozen {
            return Ok(ll);
        }
        let loglik = self.component_loglik(state);
        self.sample_x(state, &loglik, rng);
        self.sample_eta(state, &loglik, rng);
        Ok(ll)
    }

    fn accept_rates(&self) -> BTreeMap<String, f64> {
        let mut out = self.mam.accept_rates();
        out.insert("x".to_string(), block_rate(&self.x_props));
        out.insert("eta".to_string(), block_rate(std::slice::from_ref(&self.eta_prop)));
        out
    }
}

/// Runs a CAR-MAM chain. Stored output includes posterior mean weight tracks.
pub fn run_car_mam(data: &Dataset, cfg: &ModelConfig, settings: &SamplerSettings) -> Result<ChainOutput> {
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut sampler = CarSampler::new(data, cfg, settings)?;
    let prec = sampler.prec.clone();
    let mut state = select_start(
        settings,
        &mut rng,
        |c, rng| {
            let s = CarSampler::with_precision(data, cfg, settings, prec.clone())?;
            let st = s.start_state(c, rng)?;
            Ok((s, st))
        },
        |(s, st), t, rng| {
            s.set_iteration(t);
            s.sweep(st, rng)
        },
    )?
    .1;
    let n_comp = sampler.mam.connection().n_components();
    let mut rec = Recorder::new(ModelKind::CarMam, cfg.k, data.n_units(), n_comp, settings.seed);
    for t in 0..settings.n_iter {
        sampler.set_iteration(t);
        let ll = sampler.sweep(&mut state, &mut rng)?;
        rec.trace(ll);
        if settings.keeps(t) {
            let MixingWeights::Spatial { x, eta } = &state.weights else {
                unreachable!("CAR-MAM chains keep a spatial field");
            };
            rec.add_weights(&field_to_weights(x, *eta));
            let draw = Draw { iter: t, mu: state.mu.clone(), phi: state.phi.clone(), pi: None, eta: Some(*eta), log_lik: ll };
            rec.store(draw, &state.z_star);
        }
    }
    Ok(rec.finish(sampler.accept_rates()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{multiple_weights, Scheme};

    fn state_k2() -> (ModelConfig, ParameterState) {
        let cfg = ModelConfig::new(2, Scheme::Additive).unwrap();
        let state = ParameterState {
            mu: DMatrix::from_row_slice(2, 1, &[4.0, 20.0]),
            phi: DMatrix::from_row_slice(4, 1, &[50.0, 30.0, 80.0, 10.0]),
            weights: MixingWeights::Spatial { x: DMatrix::zeros(2, 1), eta: 1.0 },
            s: DMatrix::from_element(1, 1, 1.0),
            z_star: vec![0],
        };
        (cfg, state)
    }

    #[test]
    fn marginal_matches_component_sum() {
        let (cfg, state) = state_k2();
        let u = cfg.connection();
        for (x, eta) in [([0.3, -1.2], 0.7), ([2.0, 0.5], 3.0), ([0.0, 0.0], 1.0)] {
            let pi: Vec<f64> = x.iter().map(|&v| logistic_weight(v, eta)).collect();
            let w = multiple_weights(&pi, &u).unwrap();
            let mut total = 0.0;
            for (h, wh) in w.iter().enumerate() {
                total += wh * crate::model::unit_log_likelihood(&[7], h, &state, &cfg).unwrap().exp();
            }
            let got = marginal_unit_log_lik(&[7], &x, eta, &state, &cfg).unwrap();
            assert!((got - total.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn marginal_nondecreasing_toward_best_cluster() {
        let (cfg, state) = state_k2();
        // y = 20 is fit best by the component containing cluster 2 alone
        let mut prev = f64::NEG_INFINITY;
        for step in 0..20 {
            let x = [-1.0, -2.0 + 0.25 * step as f64];
            let v = marginal_unit_log_lik(&[20], &x, 1.0, &state, &cfg).unwrap();
            assert!(v >= prev - 1e-12);
            prev = v;
        }
    }

    #[test]
    fn missing_positions_is_config_error() {
        let data = Dataset::new(vec![vec![1], vec![2]], None, None).unwrap();
        let cfg = ModelConfig::new(1, Scheme::Additive).unwrap();
        let err = run_car_mam(&data, &cfg, &SamplerSettings::new(4, 2, 1)).unwrap_err();
        assert!(matches!(err, crate::error::Error::Config(_)));
    }

    #[test]
    fn eta_mixes_over_prior_when_field_is_zero() {
        let data = Dataset::new(vec![vec![3], vec![9]], Some(vec![0.0, 1.0]), None).unwrap();
        let cfg = ModelConfig::new(1, Scheme::Additive).unwrap();
        let settings = SamplerSettings { proposal_sd_eta: 1.0, adapt: false, ..SamplerSettings::new(20_000, 0, 3) };
        let mut s = CarSampler::new(&data, &cfg, &settings).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut state = s.initial_state(&mut rng).unwrap();
        let loglik = s.mam.component_loglik(&state);
        let mut sum = 0.0;
        for t in 0..settings.n_iter {
            s.set_iteration(t);
            s.sample_eta(&mut state, &loglik, &mut rng);
            if let MixingWeights::Spatial { eta, .. } = &state.weights {
                sum += eta.ln();
            }
        }
        // log-uniform on [0.1, 10] has mean 0 on the log scale
        assert!((sum / settings.n_iter as f64).abs() < 0.25);
    }

    #[test]
    fn field_update_targets_car_prior_under_flat_likelihood() {
        let pos = vec![0.0, 1.0, 2.5, 3.0, 5.0];
        let data = Dataset::new(vec![vec![1]; 5], Some(pos), None).unwrap();
        let cfg = ModelConfig::new(1, Scheme::Additive).unwrap();
        let settings = SamplerSettings { proposal_sd_x: 1.2, adapt: false, ..SamplerSettings::new(1, 0, 1) };
        let mut s = CarSampler::new(&data, &cfg, &settings).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut state = s.initial_state(&mut rng).unwrap();
        let flat = vec![0.0; 5 * 2];
        let cov = s.precision().q_dense().try_inverse().unwrap();
        let n = 200_000;
        let mut sum = [0.0; 5];
        let mut sxx = DMatrix::<f64>::zeros(5, 5);
        for _ in 0..n {
            s.sample_x(&mut state, &flat, &mut rng);
            let MixingWeights::Spatial { x, .. } = &state.weights else { unreachable!() };
            for a in 0..5 {
                sum[a] += x[(0, a)];
                for b in 0..5 {
                    sxx[(a, b)] += x[(0, a)] * x[(0, b)];
                }
            }
        }
        for a in 0..5 {
            assert!((sum[a] / n as f64).abs() < 0.03, "mean {a}");
            for b in 0..5 {
                let got = sxx[(a, b)] / n as f64;
                assert!((got - cov[(a, b)]).abs() < 0.04, "cov {a},{b}: {got} vs {}", cov[(a, b)]);
            }
        }
    }
}
