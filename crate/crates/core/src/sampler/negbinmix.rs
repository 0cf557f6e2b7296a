//! Conventional Negative Binomial mixture with mutually exclusive components.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernels::{self, CountCache};
use super::record::Recorder;
use super::{block_rate, select_start, ChainOutput, Draw, ModelKind, Proposal, SamplerSettings};
use crate::data::Dataset;
use crate::error::{config, Result};
use crate::model::Hyperparameters;

/// Dirichlet draw via normalized Gamma variates.
pub fn sample_dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Vec<f64> {
    let mut w: Vec<f64> = alpha.iter().map(|&a| kernels::gamma(rng, a, 1.0)).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

struct NbState {
    means: DMatrix<f64>,
    phi: DMatrix<f64>,
    weights: Vec<f64>,
    s: DMatrix<f64>,
    z: Vec<usize>,
    phi_props: Vec<Proposal>,
}

struct NbMix<'a> {
    data: &'a Dataset,
    cache: CountCache,
    hyper: &'a Hyperparameters,
    settings: &'a SamplerSettings,
    n_comp: usize,
    fixed: Option<f64>,
}

impl NbMix<'_> {
    fn start<R: Rng + ?Sized>(&self, candidate: usize, rng: &mut R) -> NbState {
        let (p, n_cond) = (self.data.n_units(), self.data.n_conditions());
        let first_free = usize::from(self.fixed.is_some());
        let free = kernels::start_means(self.data, self.n_comp - first_free, candidate, rng);
        let means = DMatrix::from_fn(self.n_comp, n_cond, |h, d| match self.fixed {
            Some(m) if h == 0 => m,
            _ => free[(h - first_free, d)],
        });
        NbState {
            means,
            phi: DMatrix::from_element(self.n_comp, n_cond, 0.5 * (self.hyper.a_phi + self.hyper.b_phi)),
            weights: vec![1.0 / self.n_comp as f64; self.n_comp],
            s: DMatrix::from_element(p, n_cond, 1.0),
            z: vec![0; p],
            phi_props: vec![Proposal::new(self.settings.proposal_sd_phi); self.n_comp * n_cond],
        }
    }

    /// `z -> s -> means -> phi -> weights`; returns the log-likelihood at the incoming parameters.
    fn sweep<R: Rng + ?Sized>(&self, st: &mut NbState, t: usize, rng: &mut R) -> Result<f64> {
        let (n_comp, n_cond, hyper) = (self.n_comp, self.data.n_conditions(), self.hyper);
        let loglik = kernels::component_loglik(self.data, &self.cache, &st.means, &st.phi);
        let ln_w: Vec<f64> = st.weights.iter().map(|w| w.ln()).collect();
        let ll = kernels::draw_allocations(rng, &loglik, n_comp, |_, b| b.copy_from_slice(&ln_w), &mut st.z)?;
        kernels::draw_augmentation(rng, self.data, &st.z, &st.means, &st.phi, &mut st.s);

        let mut ysum = DMatrix::<f64>::zeros(n_comp, n_cond);
        let mut ssum = DMatrix::<f64>::zeros(n_comp, n_cond);
        for (j, &h) in st.z.iter().enumerate() {
            for d in 0..n_cond {
                ysum[(h, d)] += self.data.count(j, d) as f64;
                ssum[(h, d)] += st.s[(j, d)];
            }
        }
        for h in usize::from(self.fixed.is_some())..n_comp {
            for d in 0..n_cond {
                st.means[(h, d)] = kernels::gamma(rng, hyper.a_mu + ysum[(h, d)], hyper.b_mu + ssum[(h, d)]);
            }
        }

        let members = kernels::members(&st.z, n_comp);
        kernels::update_phi(
            rng,
            self.data,
            &self.cache,
            &members,
            &st.means,
            &mut st.phi,
            (hyper.a_phi, hyper.b_phi),
            &mut st.phi_props,
            t,
            self.settings,
        );
        let alpha: Vec<f64> = members.iter().map(|m| 1.0 + m.len() as f64).collect();
        st.weights = sample_dirichlet(&alpha, rng);
        Ok(ll)
    }
}

/// Gibbs sampler for a Dirichlet-weighted NB mixture.
///
/// Means get conjugate Gamma updates from the Gamma-Poisson augmentation;
/// `fix_first_mean` pins component 0 to a constant in every condition.
pub fn run_negbinmix(
    data: &Dataset,
    n_components: usize,
    hyper: &Hyperparameters,
    settings: &SamplerSettings,
    fix_first_mean: Option<f64>,
) -> Result<ChainOutput> {
    if n_components < 2 {
        return config(format!("the baseline mixture needs at least 2 components, got {n_components}"));
    }
    if let Some(m) = fix_first_mean {
        if !(m > 0.0 && m.is_finite()) {
            return config(format!("fixed first mean must be positive, got {m}"));
        }
    }
    hyper.validate()?;
    settings.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mix = NbMix { data, cache: CountCache::new(data), hyper, settings, n_comp: n_components, fixed: fix_first_mean };
    let mut st = select_start(settings, &mut rng, |c, rng| Ok(mix.start(c, rng)), |st, t, rng| mix.sweep(st, t, rng))?;
    st.phi_props = vec![Proposal::new(settings.proposal_sd_phi); st.phi_props.len()];

    let mut rec = Recorder::new(ModelKind::NegBinMix, 0, data.n_units(), n_components, settings.seed);
    for t in 0..settings.n_iter {
        let ll = mix.sweep(&mut st, t, &mut rng)?;
        rec.trace(ll);
        if settings.keeps(t) {
            let draw = Draw {
                iter: t,
                mu: st.means.clone(),
                phi: st.phi.clone(),
                pi: Some(st.weights.clone()),
                eta: None,
                log_lik: ll,
            };
            rec.store(draw, &st.z);
        }
    }
    let mut rates = BTreeMap::new();
    rates.insert("phi".to_string(), block_rate(&st.phi_props));
    Ok(rec.finish(rates))
}
