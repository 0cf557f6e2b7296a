//! Conditional auto-regressive latent field.
//!
//! Each primary cluster carries a field `x_i ~ N(0, Q^{-1})` with
//! `Q = I + Δ - Γ`, where `Γ` holds distance-decaying weights and `Δ` their
//! row sums. Per-unit weights are `pi_ij = logistic(x_ij / eta)`.

use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Error, Result};
use crate::model::WEIGHT_CLAMP;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GammaKind {
    /// `gamma = 1 / (1 + distance / scale)`.
    Reciprocal,
    /// No spatial coupling; `Q = I`.
    None,
}

impl FromStr for GammaKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "reciprocal" => Ok(GammaKind::Reciprocal),
            "none" => Ok(GammaKind::None),
            other => config(format!("unknown gamma kind '{other}' (expected reciprocal or none)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialConfig {
    pub gamma_kind: GammaKind,
    /// Pairs farther apart than this get zero weight. `f64::INFINITY` keeps all pairs.
    pub radius: f64,
    /// Distance unit: distances are divided by `scale` before the reciprocal map.
    pub scale: f64,
    pub eta_init: f64,
}

impl Default for SpatialConfig {
    fn default() -> Self {
        Self { gamma_kind: GammaKind::Reciprocal, radius: f64::INFINITY, scale: 1.0, eta_init: 1.0 }
    }
}

impl SpatialConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) {
            return config(format!("spatial radius must be positive, got {}", self.radius));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return config(format!("spatial scale must be positive and finite, got {}", self.scale));
        }
        if !(self.eta_init > 0.0 && self.eta_init.is_finite()) {
            return config(format!("eta_init must be positive, got {}", self.eta_init));
        }
        Ok(())
    }
}

/// Symmetric nonnegative weights `gamma_{jj'}` with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub enum SpatialWeights {
    Dense(DMatrix<f64>),
    /// Row-wise neighbor lists `(j', gamma_{jj'})`, nonzero entries only.
    Sparse(Vec<Vec<(usize, f64)>>),
}

impl SpatialWeights {
    pub fn len(&self) -> usize {
        match self {
            SpatialWeights::Dense(m) => m.nrows(),
            SpatialWeights::Sparse(rows) => rows.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, j: usize, jp: usize) -> f64 {
        match self {
            SpatialWeights::Dense(m) => m[(j, jp)],
            SpatialWeights::Sparse(rows) => {
                rows[j].iter().find(|(c, _)| *c == jp).map(|(_, v)| *v).unwrap_or(0.0)
            }
        }
    }

    pub fn row_sum(&self, j: usize) -> f64 {
        match self {
            SpatialWeights::Dense(m) => m.row(j).sum(),
            SpatialWeights::Sparse(rows) => rows[j].iter().map(|(_, v)| v).sum(),
        }
    }

    /// `sum_{j'} gamma_{jj'} x_{j'}`.
    #[inline]
    pub fn row_dot(&self, j: usize, x: &[f64]) -> f64 {
        match self {
            SpatialWeights::Dense(m) => {
                let mut acc = 0.0;
                for (jp, xv) in x.iter().enumerate() {
                    acc += m[(j, jp)] * xv;
                }
                acc
            }
            SpatialWeights::Sparse(rows) => rows[j].iter().map(|&(jp, g)| g * x[jp]).sum(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            SpatialWeights::Dense(m) => m.clone(),
            SpatialWeights::Sparse(rows) => {
                let p = rows.len();
                let mut m = DMatrix::zeros(p, p);
                for (j, row) in rows.iter().enumerate() {
                    for &(jp, g) in row {
                        m[(j, jp)] = g;
                    }
                }
                m
            }
        }
    }

    pub fn from_dense(m: DMatrix<f64>) -> Self {
        SpatialWeights::Dense(m)
    }

    fn check(&self) -> Result<()> {
        let p = self.len();
        let tol = |a: f64, b: f64| (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()));
        for j in 0..p {
            if self.get(j, j) != 0.0 {
                return domain(format!("spatial weights must have a zero diagonal (row {j})"));
            }
        }
        match self {
            SpatialWeights::Dense(m) => {
                if m.ncols() != p {
                    return domain("spatial weight matrix must be square");
                }
                for j in 0..p {
                    for jp in 0..j {
                        let (a, b) = (m[(j, jp)], m[(jp, j)]);
                        if !(a >= 0.0) || !a.is_finite() {
                            return domain(format!("negative or non-finite weight at ({j}, {jp})"));
                        }
                        if !tol(a, b) {
                            return domain(format!("spatial weights are not symmetric at ({j}, {jp})"));
                        }
                    }
                }
            }
            SpatialWeights::Sparse(rows) => {
                for (j, row) in rows.iter().enumerate() {
                    for &(jp, g) in row {
                        if jp >= p || !(g >= 0.0) || !g.is_finite() {
                            return domain(format!("invalid weight at ({j}, {jp})"));
                        }
                        if !tol(g, self.get(jp, j)) {
                            return domain(format!("spatial weights are not symmetric at ({j}, {jp})"));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Reciprocal distance weights `1 / (1 + |pos_j - pos_j'| / scale)` within the radius.
///
/// Dense storage when the radius is infinite, sparse neighbor lists otherwise.
pub fn gamma_weights(pos: &[f64], cfg: &SpatialConfig) -> Result<SpatialWeights> {
    if pos.iter().any(|v| !v.is_finite()) {
        return domain("positions must be finite");
    }
    let p = pos.len();
    let weight = |j: usize, jp: usize| -> f64 {
        let dist = (pos[j] - pos[jp]).abs();
        match cfg.gamma_kind {
            GammaKind::None => 0.0,
            GammaKind::Reciprocal if dist > cfg.radius => 0.0,
            GammaKind::Reciprocal => 1.0 / (1.0 + dist / cfg.scale),
        }
    };
    if cfg.radius.is_infinite() && cfg.gamma_kind == GammaKind::Reciprocal {
        return Ok(SpatialWeights::Dense(DMatrix::from_fn(p, p, |j, jp| {
            if j == jp {
                0.0
            } else {
                weight(j, jp)
            }
        })));
    }
    let sorted = pos.windows(2).all(|w| w[0] <= w[1]);
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); p];
    if cfg.gamma_kind == GammaKind::Reciprocal {
        for j in 0..p {
            for jp in (j + 1)..p {
                if sorted && pos[jp] - pos[j] > cfg.radius {
                    break;
                }
                let g = weight(j, jp);
                if g > 0.0 {
                    rows[j].push((jp, g));
                    rows[jp].push((j, g));
                }
            }
        }
        for row in rows.iter_mut() {
            row.sort_by_key(|&(c, _)| c);
        }
    }
    Ok(SpatialWeights::Sparse(rows))
}

/// Precision matrix data for a fixed set of positions.
#[derive(Debug, Clone)]
pub struct PrecisionSummary {
    gamma: SpatialWeights,
    /// Diagonal of `Q`: `1 + sum_{j'} gamma_{jj'}`.
    diag: Vec<f64>,
    /// Eigenvalues `v_j` of `Δ - Γ`, ascending.
    eigs: Vec<f64>,
    /// `log c = -(p/2) log(2 pi) + (1/2) sum_j log(1 + v_j)`.
    log_const: f64,
}

impl PrecisionSummary {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn gamma(&self) -> &SpatialWeights {
        &self.gamma
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigs
    }

    pub fn log_const(&self) -> f64 {
        self.log_const
    }

    pub fn q_diag(&self, j: usize) -> f64 {
        self.diag[j]
    }

    /// Dense `Q = I + Δ - Γ`.
    pub fn q_dense(&self) -> DMatrix<f64> {
        let mut q = -self.gamma.to_dense();
        for (j, d) in self.diag.iter().enumerate() {
            q[(j, j)] = *d;
        }
        q
    }

    /// `x^T Q x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        (0..self.len())
            .map(|j| x[j] * (self.diag[j] * x[j] - self.gamma.row_dot(j, x)))
            .sum()
    }

    /// Change in `-(1/2) x^T Q x` when `x[j]` alone moves to `new`.
    #[inline]
    pub fn single_site_log_prior_delta(&self, x: &[f64], j: usize, new: f64) -> f64 {
        let old = x[j];
        // gamma has a zero diagonal, so row_dot excludes x[j] itself
        let nb = self.gamma.row_dot(j, x);
        -0.5 * self.diag[j] * (new * new - old * old) + (new - old) * nb
    }
}

/// Builds `Q`, its spectrum and the normalizing constant from spatial weights.
pub fn build_precision(gamma: SpatialWeights) -> Result<PrecisionSummary> {
    gamma.check()?;
    let p = gamma.len();
    let diag: Vec<f64> = (0..p).map(|j| 1.0 + gamma.row_sum(j)).collect();
    let mut laplacian = -gamma.to_dense();
    for j in 0..p {
        laplacian[(j, j)] = diag[j] - 1.0;
    }
    let mut eigs: Vec<f64> = laplacian.symmetric_eigenvalues().iter().cloned().collect();
    eigs.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
    let log_const = -(p as f64 / 2.0) * (2.0 * std::f64::consts::PI).ln()
        + 0.5 * eigs.iter().map(|v| (1.0 + v).ln()).sum::<f64>();
    Ok(PrecisionSummary { gamma, diag, eigs, log_const })
}

/// `log c - (1/2) x^T Q x`.
pub fn car_log_density(x: &[f64], prec: &PrecisionSummary) -> Result<f64> {
    if x.len() != prec.len() {
        return domain(format!("field has length {}, precision has order {}", x.len(), prec.len()));
    }
    Ok(prec.log_const - 0.5 * prec.quad_form(x))
}

/// The same density written as `log c - (1/2)[sum_{j<j'} gamma (x_j - x_j')^2 + sum_j x_j^2]`.
pub fn car_log_density_pairwise(x: &[f64], prec: &PrecisionSummary) -> Result<f64> {
    if x.len() != prec.len() {
        return domain(format!("field has length {}, precision has order {}", x.len(), prec.len()));
    }
    let p = x.len();
    let mut pairs = 0.0;
    match &prec.gamma {
        SpatialWeights::Dense(m) => {
            for j in 0..p {
                for jp in (j + 1)..p {
                    pairs += m[(j, jp)] * (x[j] - x[jp]).powi(2);
                }
            }
        }
        SpatialWeights::Sparse(rows) => {
            for (j, row) in rows.iter().enumerate() {
                for &(jp, g) in row.iter().filter(|(jp, _)| *jp > j) {
                    pairs += g * (x[j] - x[jp]).powi(2);
                }
            }
        }
    }
    let own: f64 = x.iter().map(|v| v * v).sum();
    Ok(prec.log_const - 0.5 * (pairs + own))
}

/// `exp(x / eta) / (1 + exp(x / eta))`, kept inside `[1e-10, 1 - 1e-10]`.
///
/// Computed on `|x|` and reflected, so `w(-x) == 1 - w(x)` holds bit for bit.
#[inline]
pub fn logistic_weight(x: f64, eta: f64) -> f64 {
    let t = x / eta;
    let p = (1.0 / (1.0 + (-t.abs()).exp())).min(1.0 - WEIGHT_CLAMP);
    if t >= 0.0 {
        p
    } else {
        1.0 - p
    }
}

/// Elementwise logistic map of a `k x p` field.
pub fn field_to_weights(x: &DMatrix<f64>, eta: f64) -> DMatrix<f64> {
    x.map(|v| logistic_weight(v, eta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_point() -> PrecisionSummary {
        let cfg = SpatialConfig::default();
        build_precision(gamma_weights(&[0.0, 1.0], &cfg).unwrap()).unwrap()
    }

    #[test]
    fn reciprocal_weights() {
        let cfg = SpatialConfig::default();
        let g = gamma_weights(&[0.0, 1.0], &cfg).unwrap();
        assert_eq!(g.get(0, 1), 0.5);
        assert_eq!(g.get(1, 0), 0.5);
        assert_eq!(g.get(0, 0), 0.0);

        let g = gamma_weights(&[3.0, 3.0], &cfg).unwrap();
        assert_eq!(g.get(0, 1), 1.0);

        let cfg = SpatialConfig { radius: 2.0, ..SpatialConfig::default() };
        let g = gamma_weights(&[0.0, 1.0, 5.0], &cfg).unwrap();
        assert_eq!(g.get(0, 1), 0.5);
        assert_eq!(g.get(0, 2), 0.0);
        assert_eq!(g.get(1, 2), 0.0);
    }

    #[test]
    fn sparse_matches_dense_inside_radius() {
        let pos: Vec<f64> = (0..40).map(|j| j as f64 * 1.7).collect();
        let dense = gamma_weights(&pos, &SpatialConfig::default()).unwrap().to_dense();
        let cfg = SpatialConfig { radius: 10.0, ..SpatialConfig::default() };
        let sparse = gamma_weights(&pos, &cfg).unwrap();
        for j in 0..40 {
            for jp in 0..40 {
                let want = if (pos[j] - pos[jp]).abs() <= 10.0 { dense[(j, jp)] } else { 0.0 };
                assert_eq!(sparse.get(j, jp), want);
            }
        }
    }

    #[test]
    fn two_point_precision() {
        let prec = two_point();
        let q = prec.q_dense();
        assert_eq!(q, DMatrix::from_row_slice(2, 2, &[1.5, -0.5, -0.5, 1.5]));
        let v = prec.eigenvalues();
        assert!(v[0].abs() < 1e-12 && (v[1] - 1.0).abs() < 1e-12);
        let c = (2.0 * std::f64::consts::PI).powi(-1) * 2f64.sqrt();
        assert!((prec.log_const() - c.ln()).abs() < 1e-12);
    }

    #[test]
    fn no_coupling_gives_standard_normal_constant() {
        let cfg = SpatialConfig { gamma_kind: GammaKind::None, ..SpatialConfig::default() };
        let prec = build_precision(gamma_weights(&[0.0, 1.0, 2.0], &cfg).unwrap()).unwrap();
        assert_eq!(prec.q_dense(), DMatrix::identity(3, 3));
        let want = -1.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((prec.log_const() - want).abs() < 1e-12);
    }

    #[test]
    fn asymmetric_weights_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.4, 0.0]);
        assert!(build_precision(SpatialWeights::Dense(m)).is_err());
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 0.0]);
        assert!(build_precision(SpatialWeights::Dense(m)).is_err());
    }

    #[test]
    fn two_point_density_values() {
        let prec = two_point();
        assert_eq!(car_log_density(&[0.0, 0.0], &prec).unwrap(), prec.log_const());
        // x^T Q x = 1.5 + 1.5 + 2 * 0.5 = 4
        let quad = car_log_density(&[1.0, -1.0], &prec).unwrap();
        let pair = car_log_density_pairwise(&[1.0, -1.0], &prec).unwrap();
        assert!((quad - (prec.log_const() - 2.0)).abs() < 1e-12);
        assert!((pair - quad).abs() < 1e-12);
    }

    #[test]
    fn pairwise_and_quadratic_forms_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let p = rng.random_range(2..30);
            let mut m = DMatrix::zeros(p, p);
            for j in 0..p {
                for jp in 0..j {
                    let g = if rng.random_bool(0.5) { rng.random_range(0.0..2.0) } else { 0.0 };
                    m[(j, jp)] = g;
                    m[(jp, j)] = g;
                }
            }
            let prec = build_precision(SpatialWeights::Dense(m)).unwrap();
            let x: Vec<f64> = (0..p).map(|_| rng.random_range(-3.0..3.0)).collect();
            let a = car_log_density(&x, &prec).unwrap();
            let b = car_log_density_pairwise(&x, &prec).unwrap();
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn precision_is_positive_definite() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for p in [2usize, 17, 80, 200] {
            let mut pos: Vec<f64> = (0..p).map(|_| rng.random_range(0.0..100.0)).collect();
            pos.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let prec = build_precision(gamma_weights(&pos, &SpatialConfig::default()).unwrap()).unwrap();
            let min_q = prec.q_dense().symmetric_eigenvalues().min();
            assert!(min_q >= 1.0 - 1e-9, "p={p}: {min_q}");
            assert!(prec.eigenvalues()[0] > -1e-9);
        }
    }

    #[test]
    fn single_site_delta_matches_full_recompute() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut pos: Vec<f64> = (0..25).map(|_| rng.random_range(0.0..50.0)).collect();
        pos.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for cfg in [SpatialConfig::default(), SpatialConfig { radius: 5.0, ..SpatialConfig::default() }] {
            let prec = build_precision(gamma_weights(&pos, &cfg).unwrap()).unwrap();
            let mut x: Vec<f64> = (0..25).map(|_| rng.random_range(-2.0..2.0)).collect();
            for _ in 0..10_000 {
                let j = rng.random_range(0..25);
                let new = x[j] + rng.random_range(-1.0..1.0);
                let before = -0.5 * prec.quad_form(&x);
                let delta = prec.single_site_log_prior_delta(&x, j, new);
                x[j] = new;
                let after = -0.5 * prec.quad_form(&x);
                assert!((after - before - delta).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn logistic_examples() {
        assert_eq!(logistic_weight(0.0, 0.3), 0.5);
        assert!((logistic_weight(3f64.ln(), 1.0) - 0.75).abs() < 1e-15);
        let w = logistic_weight(500.0, 1.0);
        assert!(w < 1.0 && w > 0.999);
        let w = logistic_weight(-500.0, 1.0);
        assert!(w > 0.0 && w < 1e-3);
    }

    #[test]
    fn logistic_reflection_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let x = rng.random_range(-40.0..40.0);
            let eta = rng.random_range(0.1..10.0);
            assert_eq!(logistic_weight(-x, eta), 1.0 - logistic_weight(x, eta));
        }
    }

    #[test]
    fn field_weights_contract_with_eta() {
        let x = DMatrix::from_row_slice(2, 3, &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(field_to_weights(&x, 2.0).iter().all(|&w| w == 0.5));

        let x = DMatrix::from_row_slice(1, 4, &[-2.0, -0.5, 0.7, 3.0]);
        let w1 = field_to_weights(&x, 1.0);
        let w2 = field_to_weights(&x, 2.0);
        for (a, b) in w1.iter().zip(w2.iter()) {
            assert!((b - 0.5).abs() < (a - 0.5).abs());
            assert_eq!((a - 0.5).signum(), (b - 0.5).signum());
        }
    }
}
