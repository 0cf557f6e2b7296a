use nalgebra::DMatrix;

use super::{ConnectionMatrix, ModelConfig};
use crate::error::{domain, Result};
use crate::spatial::logistic_weight;

/// Primary-cluster weights: one global vector, or a latent field mapped
/// through the logistic link per unit.
#[derive(Debug, Clone, PartialEq)]
pub enum MixingWeights {
    Global(Vec<f64>),
    /// `x` is `k x p`; `pi_ij = logistic(x_ij / eta)`.
    Spatial { x: DMatrix<f64>, eta: f64 },
}

/// Current values of every sampled quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterState {
    /// Primary means, `k x D`.
    pub mu: DMatrix<f64>,
    /// Dispersions, `k* x D`.
    pub phi: DMatrix<f64>,
    pub weights: MixingWeights,
    /// Gamma-Poisson augmentation variables, `p x D`.
    pub s: DMatrix<f64>,
    /// Augmented component of each unit.
    pub z_star: Vec<usize>,
}

impl ParameterState {
    /// `pi_{.j}` for unit `j`.
    pub fn primary_weights(&self, j: usize) -> Vec<f64> {
        match &self.weights {
            MixingWeights::Global(pi) => pi.clone(),
            MixingWeights::Spatial { x, eta } => {
                (0..x.nrows()).map(|i| logistic_weight(x[(i, j)], *eta)).collect()
            }
        }
    }

    pub fn k(&self) -> usize {
        self.mu.nrows()
    }

    pub fn validate(&self, cfg: &ModelConfig, n_units: usize, n_conditions: usize) -> Result<()> {
        let u: ConnectionMatrix = cfg.connection();
        if self.mu.shape() != (cfg.k, n_conditions) {
            return domain(format!("mu has shape {:?}, expected ({}, {n_conditions})", self.mu.shape(), cfg.k));
        }
        if self.phi.shape() != (u.n_components(), n_conditions) {
            return domain(format!("phi has shape {:?}", self.phi.shape()));
        }
        if self.s.shape() != (n_units, n_conditions) || self.z_star.len() != n_units {
            return domain("augmentation variables do not match the dataset size");
        }
        let positive = |m: &DMatrix<f64>| m.iter().all(|v| v.is_finite() && *v > 0.0);
        if !positive(&self.mu) || !positive(&self.phi) || !positive(&self.s) {
            return domain("mu, phi and s must be strictly positive");
        }
        if let Some(h) = self.z_star.iter().find(|&&h| h >= u.n_components()) {
            return domain(format!("component index {h} is not a row of U"));
        }
        match &self.weights {
            MixingWeights::Global(pi) => {
                if pi.len() != cfg.k || pi.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
                    return domain(format!("global weights must be {} values in (0, 1)", cfg.k));
                }
            }
            MixingWeights::Spatial { x, eta } => {
                if x.shape() != (cfg.k, n_units) || !(*eta > 0.0) {
                    return domain("spatial field must be k x p with eta > 0");
                }
            }
        }
        Ok(())
    }
}
