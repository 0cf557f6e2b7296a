//! Update steps shared by the MAM, CAR-MAM and NegBinMix chains. Each works on
//! a `H x D` table of component means and dispersions, whatever produced it.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::function::gamma::ln_gamma;

use super::{Proposal, SamplerSettings};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::math::{normalize_log_weights, sample_categorical};
use crate::model::NbKernel;

/// `ln Γ(y_jd + 1)` for every count.
#[derive(Debug, Clone)]
pub(crate) struct CountCache {
    ln_fact: Vec<f64>,
    n_conditions: usize,
}

impl CountCache {
    pub(crate) fn new(data: &Dataset) -> Self {
        let ln_fact = data.units().flatten().map(|&y| ln_gamma(y as f64 + 1.0)).collect();
        Self { ln_fact, n_conditions: data.n_conditions() }
    }

    #[inline]
    pub(crate) fn get(&self, j: usize, d: usize) -> f64 {
        self.ln_fact[j * self.n_conditions + d]
    }
}

pub(crate) fn kernels(means: &DMatrix<f64>, phi: &DMatrix<f64>) -> Vec<NbKernel> {
    let (h, d) = means.shape();
    (0..h * d).map(|idx| NbKernel::new(means[(idx / d, idx % d)], phi[(idx / d, idx % d)])).collect()
}

/// Row-major `p x H` table of `sum_d log NB(y_jd | m_hd, phi_hd)`.
pub(crate) fn component_loglik(
    data: &Dataset,
    cache: &CountCache,
    means: &DMatrix<f64>,
    phi: &DMatrix<f64>,
) -> Vec<f64> {
    let n_comp = means.nrows();
    let n_cond = data.n_conditions();
    let ks = kernels(means, phi);
    let mut out = vec![0.0; data.n_units() * n_comp];
    for (j, row) in out.chunks_mut(n_comp).enumerate() {
        let y = data.unit(j);
        for (h, cell) in row.iter_mut().enumerate() {
            *cell = (0..n_cond).map(|d| ks[h * n_cond + d].ln_pmf(y[d], cache.get(j, d))).sum();
        }
    }
    out
}

/// Draws every allocation from its categorical full conditional.
///
/// `ln_weights(j, buf)` writes the log prior weights of unit `j`. Returns the
/// observed-data log-likelihood at the current parameters.
pub(crate) fn draw_allocations<R: Rng + ?Sized>(
    rng: &mut R,
    loglik: &[f64],
    n_comp: usize,
    mut ln_weights: impl FnMut(usize, &mut [f64]),
    z: &mut [usize],
) -> Result<f64> {
    let mut buf = vec![0.0; n_comp];
    let mut total = 0.0;
    for (j, zj) in z.iter_mut().enumerate() {
        ln_weights(j, &mut buf);
        for (b, l) in buf.iter_mut().zip(&loglik[j * n_comp..(j + 1) * n_comp]) {
            *b += l;
        }
        let lse = normalize_log_weights(&mut buf);
        if !lse.is_finite() {
            return Err(Error::Internal(format!("unit {j} has no component with positive probability")));
        }
        total += lse;
        *zj = sample_categorical(rng, &buf);
    }
    Ok(total)
}

/// `s_jd ~ Gamma(phi_hd + y_jd, rate = phi_hd + m_hd)` with `h = z_j`.
pub(crate) fn draw_augmentation<R: Rng + ?Sized>(
    rng: &mut R,
    data: &Dataset,
    z: &[usize],
    means: &DMatrix<f64>,
    phi: &DMatrix<f64>,
    s: &mut DMatrix<f64>,
) {
    for (j, &h) in z.iter().enumerate() {
        for d in 0..data.n_conditions() {
            let f = phi[(h, d)];
            let shape = f + data.count(j, d) as f64;
            let rate = f + means[(h, d)];
            s[(j, d)] = gamma(rng, shape, rate);
        }
    }
}

/// Gamma draw with shape/rate parameterization.
#[inline]
pub(crate) fn gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, rate: f64) -> f64 {
    let v = Gamma::new(shape, 1.0 / rate).expect("positive gamma parameters").sample(rng);
    // shapes near zero can underflow to exactly 0
    v.max(f64::MIN_POSITIVE)
}

#[inline]
pub(crate) fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Units currently allocated to each component.
pub(crate) fn members(z: &[usize], n_comp: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); n_comp];
    for (j, &h) in z.iter().enumerate() {
        out[h].push(j);
    }
    out
}

/// Folds `v` back into `[lo, hi]` by reflection at the bounds.
pub(crate) fn reflect(v: f64, lo: f64, hi: f64) -> f64 {
    let w = hi - lo;
    let mut t = (v - lo).rem_euclid(2.0 * w);
    if t > w {
        t = 2.0 * w - t;
    }
    lo + t
}

/// Sum of `log NB(y_jd | mean, phi)` over `units`.
#[inline]
pub(crate) fn nb_sum(data: &Dataset, cache: &CountCache, units: &[usize], d: usize, mean: f64, phi: f64) -> f64 {
    let k = NbKernel::new(mean, phi);
    units.iter().map(|&j| k.ln_pmf(data.count(j, d), cache.get(j, d))).sum()
}

/// Reflected random-walk Metropolis on every `phi_hd`, flat prior on `[lo, hi]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn update_phi<R: Rng + ?Sized>(
    rng: &mut R,
    data: &Dataset,
    cache: &CountCache,
    members: &[Vec<usize>],
    means: &DMatrix<f64>,
    phi: &mut DMatrix<f64>,
    bounds: (f64, f64),
    props: &mut [Proposal],
    iter: usize,
    settings: &SamplerSettings,
) {
    let n_cond = phi.ncols();
    for (h, units) in members.iter().enumerate() {
        for d in 0..n_cond {
            let prop = &mut props[h * n_cond + d];
            let cur = phi[(h, d)];
            let new = reflect(cur + prop.sd() * normal(rng), bounds.0, bounds.1);
            let accept = if units.is_empty() {
                true
            } else {
                let m = means[(h, d)];
                let log_ratio = nb_sum(data, cache, units, d, m, new) - nb_sum(data, cache, units, d, m, cur);
                log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio
            };
            if accept {
                phi[(h, d)] = new;
            }
            prop.record(accept, iter, settings);
        }
    }
}

/// Starting means for `n` clusters, `n x D`.
///
/// Candidate 0 uses per-condition count quantiles; odd candidates shuffle those
/// quantiles independently in each condition; other candidates copy the counts
/// of `n` well-spread units (k-means++ seeding on square-root counts).
pub(crate) fn start_means<R: Rng + ?Sized>(data: &Dataset, n: usize, candidate: usize, rng: &mut R) -> DMatrix<f64> {
    let n_cond = data.n_conditions();
    let mut out = DMatrix::zeros(n, n_cond);
    if candidate == 0 || candidate % 2 == 1 {
        for d in 0..n_cond {
            let mut q = nonzero_quantiles(data, d, n);
            if candidate > 0 {
                q.shuffle(rng);
            }
            for (i, v) in q.into_iter().enumerate() {
                out[(i, d)] = v;
            }
        }
        return out;
    }
    let p = data.n_units();
    let root = |j: usize| data.unit(j).iter().map(|&y| (y as f64).sqrt()).collect::<Vec<_>>();
    let mut chosen = vec![rng.random_range(0..p)];
    let mut dist = vec![f64::INFINITY; p];
    while chosen.len() < n {
        let last = root(*chosen.last().expect("nonempty"));
        for (j, dj) in dist.iter_mut().enumerate() {
            let d2: f64 = root(j).iter().zip(&last).map(|(a, b)| (a - b).powi(2)).sum();
            *dj = dj.min(d2);
        }
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let probs: Vec<f64> = dist.iter().map(|v| v / total).collect();
            sample_categorical(rng, &probs)
        } else {
            rng.random_range(0..p)
        };
        chosen.push(next);
    }
    for (i, &j) in chosen.iter().enumerate() {
        for d in 0..n_cond {
            out[(i, d)] = data.count(j, d) as f64 + 0.5;
        }
    }
    out
}

/// Initial location values: quantiles `q/(n+1)` of the nonzero counts of condition `d`.
pub(crate) fn nonzero_quantiles(data: &Dataset, d: usize, n: usize) -> Vec<f64> {
    let mut nz: Vec<f64> = (0..data.n_units())
        .map(|j| data.count(j, d))
        .filter(|&y| y > 0)
        .map(|y| y as f64)
        .collect();
    if nz.is_empty() {
        return (1..=n).map(|q| q as f64).collect();
    }
    nz.sort_by(|a, b| a.partial_cmp(b).expect("finite counts"));
    let mut out: Vec<f64> = (1..=n)
        .map(|q| crate::math::quantile_sorted(&nz, q as f64 / (n + 1) as f64))
        .collect();
    // ties (common with small counts) would start two clusters on top of each other
    for q in 1..out.len() {
        if out[q] <= out[q - 1] {
            out[q] = out[q - 1] * 1.5 + 0.5;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reflection_stays_in_bounds() {
        assert_eq!(reflect(5.0, 0.0, 10.0), 5.0);
        assert_eq!(reflect(-3.0, 0.0, 10.0), 3.0);
        assert_eq!(reflect(12.0, 0.0, 10.0), 8.0);
        assert_eq!(reflect(23.0, 0.0, 10.0), 3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let v = reflect(rng.random_range(-1e4..1e4), 100.0, 2000.0);
            assert!((100.0..=2000.0).contains(&v));
        }
    }

    #[test]
    fn empty_component_phi_is_prior_uniform() {
        let data = Dataset::new(vec![vec![1]], None, None).unwrap();
        let cache = CountCache::new(&data);
        let members = vec![vec![], vec![0]];
        let means = DMatrix::from_element(2, 1, 1.0);
        let mut phi = DMatrix::from_element(2, 1, 500.0);
        let settings = SamplerSettings { adapt: false, ..SamplerSettings::new(2, 1, 0) };
        let mut props = vec![Proposal::new(800.0), Proposal::new(800.0)];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut draws = Vec::new();
        for _ in 0..20_000 {
            update_phi(&mut rng, &data, &cache, &members, &means, &mut phi, (100.0, 2000.0), &mut props, 5, &settings);
            draws.push(phi[(0, 0)]);
        }
        assert_eq!(props[0].accepted, props[0].proposed);
        let m = crate::math::mean(&draws);
        // uniform mean 1050, sd 548; lag correlation inflates the error
        assert!((m - 1050.0).abs() < 40.0, "{m}");
    }

    #[test]
    fn augmentation_conditional_mean() {
        // y = 0, phi = mu = 1 -> Gamma(1, rate 2) with mean 0.5
        let data = Dataset::new(vec![vec![0]; 50_000], None, None).unwrap();
        let z = vec![0; 50_000];
        let ones = DMatrix::from_element(1, 1, 1.0);
        let mut s = DMatrix::zeros(50_000, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        draw_augmentation(&mut rng, &data, &z, &ones, &ones, &mut s);
        let m = s.mean();
        assert!((m - 0.5).abs() < 3.0 * 0.5 / (50_000f64).sqrt(), "{m}");
    }

    #[test]
    fn augmentation_concentrates_for_large_phi() {
        let data = Dataset::new(vec![vec![3]; 1000], None, None).unwrap();
        let z = vec![0; 1000];
        let mut s = DMatrix::zeros(1000, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        draw_augmentation(
            &mut rng,
            &data,
            &z,
            &DMatrix::from_element(1, 1, 3.0),
            &DMatrix::from_element(1, 1, 1e8),
            &mut s,
        );
        assert!(s.iter().all(|v| (v - 1.0).abs() < 1e-2));
    }

    #[test]
    fn degenerate_allocation_is_certain() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let loglik = vec![0.0, -40.0];
        let mut z = vec![1];
        for _ in 0..1000 {
            draw_allocations(&mut rng, &loglik, 2, |_, b| b.fill(0.0), &mut z).unwrap();
            assert_eq!(z[0], 0);
        }
    }

    #[test]
    fn equal_weights_draw_uniformly() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 100_000;
        let loglik = vec![-1.0; 4];
        let mut counts = [0usize; 4];
        let mut z = vec![0];
        for _ in 0..n {
            draw_allocations(&mut rng, &loglik, 4, |_, b| b.fill(0.25f64.ln()), &mut z).unwrap();
            counts[z[0]] += 1;
        }
        let sd = (n as f64 * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 / 4.0).abs() < 3.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn impossible_allocation_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let loglik = vec![f64::NEG_INFINITY; 2];
        let mut z = vec![0];
        assert!(draw_allocations(&mut rng, &loglik, 2, |_, b| b.fill(0.0), &mut z).is_err());
    }
}
