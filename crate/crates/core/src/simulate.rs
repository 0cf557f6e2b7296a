//! Synthetic data from the generative model, with true allocations recorded.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{config, domain, Error, Result};
use crate::model::{combine_means, ConnectionMatrix, Scheme};
use crate::spatial::{build_precision, gamma_weights, logistic_weight, SpatialConfig};

/// Generating parameters shared by every design.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerativeParams {
    pub k: usize,
    pub scheme: Scheme,
    /// Primary means, `k x D`.
    pub mu: DMatrix<f64>,
    /// Dispersions, `2^k x D`.
    pub phi: DMatrix<f64>,
    pub theta_b: f64,
}

impl GenerativeParams {
    /// Same dispersion for every component and condition.
    pub fn new(scheme: Scheme, mu: DMatrix<f64>, phi: f64, theta_b: f64) -> Result<Self> {
        let k = mu.nrows();
        let u = ConnectionMatrix::new(k)?;
        let params = Self { k, scheme, phi: DMatrix::from_element(u.n_components(), mu.ncols(), phi), mu, theta_b };
        params.validate()?;
        Ok(params)
    }

    pub fn n_conditions(&self) -> usize {
        self.mu.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let u = ConnectionMatrix::new(self.k)?;
        if self.mu.nrows() != self.k || self.mu.ncols() == 0 {
            return config("mu must be k x D with D >= 1");
        }
        if self.phi.shape() != (u.n_components(), self.mu.ncols()) {
            return config(format!("phi must be {} x {}", u.n_components(), self.mu.ncols()));
        }
        let pos = |v: &f64| v.is_finite() && *v > 0.0;
        if !self.mu.iter().all(pos) || !self.phi.iter().all(pos) || !pos(&self.theta_b) {
            return config("generating means, dispersions and outward mean must be positive");
        }
        Ok(())
    }

    /// Combined mean of component `h` in condition `d`.
    pub fn component_mean(&self, u: &ConnectionMatrix, h: usize, d: usize) -> f64 {
        let mu_d: Vec<f64> = self.mu.column(d).iter().cloned().collect();
        combine_means(&u.row(h), &mu_d, self.theta_b, self.scheme)
    }
}

/// Latent field shapes for the spatial designs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    /// Exact draw from the CAR prior.
    ReciprocalCar,
    /// `x_ij = sin(i * pi * pos_j / max pos)`, `i` counted from 1.
    Sine,
}

impl FromStr for FieldKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "reciprocal_car" | "reciprocal-car" | "car" => Ok(FieldKind::ReciprocalCar),
            "sine" | "sin" => Ok(FieldKind::Sine),
            other => config(format!("unknown field kind '{other}' (expected reciprocal_car or sine)")),
        }
    }
}

impl fmt::Display for FieldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FieldKind::ReciprocalCar => "reciprocal_car",
            FieldKind::Sine => "sine",
        })
    }
}

/// NB draw as a Gamma-mixed Poisson.
pub fn sample_nb<R: Rng + ?Sized>(rng: &mut R, mean: f64, phi: f64) -> u64 {
    let s: f64 = Gamma::new(phi, 1.0 / phi).expect("positive dispersion").sample(rng);
    let lambda = mean * s;
    if !(lambda > 0.0) {
        return 0;
    }
    Poisson::new(lambda).expect("finite positive rate").sample(rng) as u64
}

/// `p` sorted positions drawn uniformly on `[0, 1000 p]`.
pub fn uniform_positions<R: Rng + ?Sized>(p: usize, rng: &mut R) -> Vec<f64> {
    let upper = 1000.0 * p as f64;
    let mut pos: Vec<f64> = (0..p).map(|_| rng.random::<f64>() * upper).collect();
    pos.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    pos
}

/// Uniform positions for `seed`, drawn from a ChaCha stream separate from the
/// one the simulators use for counts.
pub fn positions_for_seed(p: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    uniform_positions(p, &mut rng)
}

fn emit<R: Rng + ?Sized>(
    rng: &mut R,
    params: &GenerativeParams,
    u: &ConnectionMatrix,
    weights: impl Fn(usize, usize) -> f64,
    p: usize,
) -> (Vec<Vec<u64>>, Vec<usize>) {
    let n_cond = params.n_conditions();
    let mut rows = Vec::with_capacity(p);
    let mut truth = Vec::with_capacity(p);
    for j in 0..p {
        let memb: Vec<bool> = (0..params.k).map(|i| rng.random::<f64>() < weights(i, j)).collect();
        let h = u.component_of(&memb).expect("k memberships");
        rows.push((0..n_cond).map(|d| sample_nb(rng, params.component_mean(u, h, d), params.phi[(h, d)])).collect());
        truth.push(h);
    }
    (rows, truth)
}

/// Independent memberships `z_ji ~ Bernoulli(pi_i)`, then NB emissions.
/// Units get uniformly drawn sorted positions.
pub fn simulate_mam(p: usize, params: &GenerativeParams, pi: &[f64], seed: u64) -> Result<Dataset> {
    params.validate()?;
    if pi.len() != params.k || pi.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return domain(format!("need {} activation probabilities in [0, 1]", params.k));
    }
    if p == 0 {
        return domain("need at least one unit");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = ConnectionMatrix::new(params.k)?;
    let positions = uniform_positions(p, &mut rng);
    let (rows, truth) = emit(&mut rng, params, &u, |i, _| pi[i], p);
    Dataset::new(rows, Some(positions), Some(truth))
}

/// A `k x p` latent field over `positions`.
pub fn simulate_car_field<R: Rng + ?Sized>(
    k: usize,
    positions: &[f64],
    kind: FieldKind,
    spatial: &SpatialConfig,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let p = positions.len();
    if p == 0 {
        return domain("need at least one position");
    }
    match kind {
        FieldKind::Sine => {
            let max = positions.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if !(max > 0.0) {
                return domain("sine field needs a positive maximum position");
            }
            Ok(DMatrix::from_fn(k, p, |i, j| ((i + 1) as f64 * std::f64::consts::PI * positions[j] / max).sin()))
        }
        FieldKind::ReciprocalCar => {
            let prec = build_precision(gamma_weights(positions, spatial)?)?;
            let chol = prec
                .q_dense()
                .cholesky()
                .ok_or_else(|| Error::Internal("precision matrix is not positive definite".into()))?;
            let lt = chol.l().transpose();
            let mut x = DMatrix::zeros(k, p);
            for i in 0..k {
                let z = DVector::from_fn(p, |_, _| StandardNormal.sample(rng));
                // Q = L L^T, so x = L^{-T} z has covariance Q^{-1}
                let row = lt.solve_upper_triangular(&z).expect("nonsingular factor");
                x.row_mut(i).copy_from(&row.transpose());
            }
            Ok(x)
        }
    }
}

/// Field -> logistic weights -> Bernoulli memberships -> NB emissions.
/// Returns the dataset and the field that generated it.
pub fn simulate_car_mam(
    params: &GenerativeParams,
    positions: Vec<f64>,
    kind: FieldKind,
    eta: f64,
    spatial: &SpatialConfig,
    seed: u64,
) -> Result<(Dataset, DMatrix<f64>)> {
    params.validate()?;
    if !(eta > 0.0) {
        return domain("eta must be positive");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = ConnectionMatrix::new(params.k)?;
    let x = simulate_car_field(params.k, &positions, kind, spatial, &mut rng)?;
    let p = positions.len();
    let (rows, truth) = emit(&mut rng, params, &u, |i, j| logistic_weight(x[(i, j)], eta), p);
    Ok((Dataset::new(rows, Some(positions), Some(truth))?, x))
}

/// Layout of a binned-coverage-like track: long background stretches broken by
/// short high-count segments and a few empty stretches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentDesign {
    pub bin_width: f64,
    /// Expected share of bins inside signal segments.
    pub signal_fraction: f64,
    pub mean_signal_len: f64,
    /// Expected share of bins inside empty segments.
    pub empty_fraction: f64,
    pub mean_empty_len: f64,
    /// Primary membership probabilities on background, signal and empty segments.
    pub pi_background: Vec<f64>,
    pub pi_signal: Vec<f64>,
    pub pi_empty: Vec<f64>,
}

impl Default for SegmentDesign {
    fn default() -> Self {
        Self {
            bin_width: 1000.0,
            signal_fraction: 0.1,
            mean_signal_len: 12.0,
            empty_fraction: 0.04,
            mean_empty_len: 8.0,
            pi_background: vec![0.98, 0.01],
            pi_signal: vec![0.85, 0.95],
            pi_empty: vec![0.05, 0.01],
        }
    }
}

/// Segment label per bin: 0 background, 1 signal, 2 empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment {
    Background,
    Signal,
    Empty,
}

/// Binned track with segment structure. Returns the dataset and each bin's segment.
pub fn simulate_segments(
    p: usize,
    params: &GenerativeParams,
    design: &SegmentDesign,
    seed: u64,
) -> Result<(Dataset, Vec<Segment>)> {
    params.validate()?;
    for w in [&design.pi_background, &design.pi_signal, &design.pi_empty] {
        if w.len() != params.k || w.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return config(format!("segment weights need {} values in [0, 1]", params.k));
        }
    }
    let fr = design.signal_fraction + design.empty_fraction;
    if !(design.signal_fraction >= 0.0 && design.empty_fraction >= 0.0 && fr < 1.0) {
        return config("segment fractions must be nonnegative and sum below 1");
    }
    if !(design.mean_signal_len >= 1.0 && design.mean_empty_len >= 1.0 && design.bin_width > 0.0) {
        return config("segment lengths must be at least one bin and the bin width positive");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // segment starts per background bin chosen so the expected coverage matches
    let bg = 1.0 - fr;
    let start_signal = design.signal_fraction / (design.mean_signal_len * bg);
    let start_empty = design.empty_fraction / (design.mean_empty_len * bg);
    let mut seg = Vec::with_capacity(p);
    while seg.len() < p {
        let r: f64 = rng.random();
        let (kind, mean_len) = if r < start_signal {
            (Segment::Signal, design.mean_signal_len)
        } else if r < start_signal + start_empty {
            (Segment::Empty, design.mean_empty_len)
        } else {
            seg.push(Segment::Background);
            continue;
        };
        // geometric length with the requested mean
        let mut len = 1;
        while rng.random::<f64>() > 1.0 / mean_len {
            len += 1;
        }
        for _ in 0..len.min(p - seg.len()) {
            seg.push(kind);
        }
    }
    let u = ConnectionMatrix::new(params.k)?;
    let (rows, truth) = emit(
        &mut rng,
        params,
        &u,
        |i, j| match seg[j] {
            Segment::Background => design.pi_background[i],
            Segment::Signal => design.pi_signal[i],
            Segment::Empty => design.pi_empty[i],
        },
        p,
    );
    let positions = (0..p).map(|j| j as f64 * design.bin_width).collect();
    Ok((Dataset::new(rows, Some(positions), Some(truth))?, seg))
}
