//! Model definition: connection matrix, combination schemes, product weights
//! and the Negative Binomial mixture likelihood shared by every sampler.

mod connection;
mod density;
mod state;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{config, domain, Error, Result};
use crate::math::log_sum_exp;
use crate::spatial::SpatialConfig;

pub use connection::{connection_matrix, ConnectionMatrix, MAX_PRIMARY};
pub use density::nb_log_pmf;
pub(crate) use density::NbKernel;
pub use state::{MixingWeights, ParameterState};

/// Lower/upper clamp applied to every primary weight after an update.
pub const WEIGHT_CLAMP: f64 = 1e-10;

/// Default fixed mean of the outward component.
pub const DEFAULT_OUTWARD_MEAN: f64 = 0.01;

/// How primary means combine into the mean of a multiple-allocation component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Sum of the selected primary means.
    Additive,
    /// Arithmetic mean of the selected primary means.
    Codominance1,
    /// Geometric mean of the selected primary means.
    Codominance0,
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "additive" | "sum" => Ok(Scheme::Additive),
            "codominance1" | "arithmetic" => Ok(Scheme::Codominance1),
            "codominance0" | "geometric" => Ok(Scheme::Codominance0),
            other => config(format!(
                "unknown combination scheme '{other}' (expected additive, codominance1 or codominance0)"
            )),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Additive => "additive",
            Scheme::Codominance1 => "codominance1",
            Scheme::Codominance0 => "codominance0",
        })
    }
}

/// Prior hyperparameters: `mu ~ Gamma(a_mu, rate b_mu)`, `phi ~ Unif(a_phi, b_phi)`,
/// `log eta ~ Unif(log eta_lo, log eta_hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub a_mu: f64,
    pub b_mu: f64,
    pub a_phi: f64,
    pub b_phi: f64,
    pub eta_lo: f64,
    pub eta_hi: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self { a_mu: 1.0, b_mu: 0.001, a_phi: 100.0, b_phi: 2000.0, eta_lo: 0.1, eta_hi: 10.0 }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        let all = [self.a_mu, self.b_mu, self.a_phi, self.b_phi, self.eta_lo, self.eta_hi];
        if all.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return config(format!("hyperparameters must be finite and positive: {self:?}"));
        }
        if self.a_phi >= self.b_phi {
            return config(format!("a_phi ({}) must be below b_phi ({})", self.a_phi, self.b_phi));
        }
        if self.eta_lo >= self.eta_hi {
            return config(format!("eta_lo ({}) must be below eta_hi ({})", self.eta_lo, self.eta_hi));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of primary clusters.
    pub k: usize,
    pub scheme: Scheme,
    /// Fixed outward mean, one value per condition or a single shared value.
    pub outward_mean: Vec<f64>,
    pub hyper: Hyperparameters,
    pub spatial: Option<SpatialConfig>,
}

impl ModelConfig {
    pub fn new(k: usize, scheme: Scheme) -> Result<Self> {
        let cfg = Self {
            k,
            scheme,
            outward_mean: vec![DEFAULT_OUTWARD_MEAN],
            hyper: Hyperparameters::default(),
            spatial: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_spatial(mut self, spatial: SpatialConfig) -> Self {
        self.spatial = Some(spatial);
        self
    }

    pub fn validate(&self) -> Result<()> {
        ConnectionMatrix::new(self.k)?;
        if self.outward_mean.is_empty() {
            return config("outward mean must have at least one value");
        }
        if self.outward_mean.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return config(format!("outward mean must be positive, got {:?}", self.outward_mean));
        }
        self.hyper.validate()?;
        if let Some(sp) = &self.spatial {
            sp.validate()?;
        }
        Ok(())
    }

    /// Checks that per-condition settings fit a dataset with `n_conditions` columns.
    pub fn check_conditions(&self, n_conditions: usize) -> Result<()> {
        let n = self.outward_mean.len();
        if n != 1 && n != n_conditions {
            return config(format!(
                "outward mean has {n} values but the data has {n_conditions} conditions"
            ));
        }
        Ok(())
    }

    pub fn connection(&self) -> ConnectionMatrix {
        ConnectionMatrix::new(self.k).expect("k validated at construction")
    }

    /// Outward mean `theta_b` for condition `d`.
    #[inline]
    pub fn theta_b(&self, d: usize) -> f64 {
        if self.outward_mean.len() == 1 {
            self.outward_mean[0]
        } else {
            self.outward_mean[d]
        }
    }
}

fn check_open_unit(pi: &[f64]) -> Result<()> {
    match pi.iter().find(|&&p| !(p > 0.0 && p < 1.0)) {
        Some(p) => domain(format!("primary weights must lie strictly inside (0, 1), got {p}")),
        None => Ok(()),
    }
}

/// Product weights `pi*_h = prod_i pi_i^{u_hi} (1 - pi_i)^{1 - u_hi}`.
pub fn multiple_weights(pi: &[f64], u: &ConnectionMatrix) -> Result<Vec<f64>> {
    if pi.len() != u.k() {
        return domain(format!("expected {} primary weights, got {}", u.k(), pi.len()));
    }
    check_open_unit(pi)?;
    let mut out = vec![0.0; u.n_components()];
    ln_multiple_weights_into(pi, u, &mut out);
    out.iter_mut().for_each(|w| *w = w.exp());
    Ok(out)
}

/// Log product weights written into `out`. Inputs are assumed inside (0, 1).
pub(crate) fn ln_multiple_weights_into(pi: &[f64], u: &ConnectionMatrix, out: &mut [f64]) {
    let mut ln_in = [0.0f64; MAX_PRIMARY];
    let mut ln_out = [0.0f64; MAX_PRIMARY];
    for (i, &p) in pi.iter().enumerate() {
        ln_in[i] = p.ln();
        ln_out[i] = (-p).ln_1p();
    }
    for (h, o) in out.iter_mut().enumerate() {
        *o = (0..u.k())
            .map(|i| if u.member(h, i) { ln_in[i] } else { ln_out[i] })
            .sum();
    }
}

/// Combined mean `psi(u_h, mu_d)` for one condition.
///
/// The outward row (no members) returns `theta_b` under every scheme;
/// otherwise the scheme is applied to the selected primary means only.
pub fn combine_means(row: &[bool], mu_d: &[f64], theta_b: f64, scheme: Scheme) -> f64 {
    let selected = row.iter().zip(mu_d).filter(|(&m, _)| m).map(|(_, &v)| v);
    combine_selected(selected, theta_b, scheme)
}

#[inline]
fn combine_selected(selected: impl Iterator<Item = f64>, theta_b: f64, scheme: Scheme) -> f64 {
    let (n, sum, ln_sum) =
        selected.fold((0usize, 0.0, 0.0), |(n, s, l), v| (n + 1, s + v, l + v.ln()));
    if n == 0 {
        return theta_b;
    }
    match scheme {
        Scheme::Additive => sum,
        Scheme::Codominance1 => sum / n as f64,
        Scheme::Codominance0 => (ln_sum / n as f64).exp(),
    }
}

/// Combined mean of component `h` in condition `d`, from the `k x D` mean matrix.
#[inline]
pub(crate) fn component_mean(
    u: &ConnectionMatrix,
    h: usize,
    mu: &DMatrix<f64>,
    d: usize,
    theta_b: f64,
    scheme: Scheme,
) -> f64 {
    combine_selected(
        (0..u.k()).filter(|&i| u.member(h, i)).map(|i| mu[(i, d)]),
        theta_b,
        scheme,
    )
}

/// All combined means as a `k* x D` matrix.
pub fn component_means(mu: &DMatrix<f64>, cfg: &ModelConfig) -> DMatrix<f64> {
    let u = cfg.connection();
    DMatrix::from_fn(u.n_components(), mu.ncols(), |h, d| {
        component_mean(&u, h, mu, d, cfg.theta_b(d), cfg.scheme)
    })
}

/// `sum_d log NB(y_jd | psi(u_h, mu_d), phi_hd)`.
pub fn unit_log_likelihood(
    y_j: &[u64],
    h: usize,
    state: &ParameterState,
    cfg: &ModelConfig,
) -> Result<f64> {
    let u = cfg.connection();
    u.check_component(h)?;
    if y_j.len() != state.mu.ncols() {
        return domain(format!("unit has {} conditions, state has {}", y_j.len(), state.mu.ncols()));
    }
    y_j.iter().enumerate().try_fold(0.0, |acc, (d, &y)| {
        let mean = component_mean(&u, h, &state.mu, d, cfg.theta_b(d), cfg.scheme);
        Ok(acc + nb_log_pmf(y, mean, state.phi[(h, d)])?)
    })
}

/// Observed-data log-likelihood `sum_j log sum_h pi*_jh prod_d NB(...)`.
pub fn mixture_log_likelihood(data: &Dataset, state: &ParameterState, cfg: &ModelConfig) -> Result<f64> {
    if data.n_units() == 0 {
        return domain("empty dataset");
    }
    let u = cfg.connection();
    let mut terms = vec![0.0; u.n_components()];
    let mut total = 0.0;
    for j in 0..data.n_units() {
        let pi = state.primary_weights(j);
        let w = multiple_weights(&pi, &u)?;
        for (h, t) in terms.iter_mut().enumerate() {
            *t = w[h].ln() + unit_log_likelihood(data.unit(j), h, state, cfg)?;
        }
        total += log_sum_exp(&terms);
    }
    Ok(total)
}
