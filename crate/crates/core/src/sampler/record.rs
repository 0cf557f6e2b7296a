use std::collections::BTreeMap;

use nalgebra::DMatrix;

use super::{ChainOutput, Draw, ModelKind};
use crate::math::argmax;

/// Accumulates stored draws and allocation frequencies during a run.
pub(crate) struct Recorder {
    model: ModelKind,
    k: usize,
    seed: u64,
    alloc_counts: DMatrix<f64>,
    n_stored: usize,
    draws: Vec<Draw>,
    trace: Vec<f64>,
    weight_acc: Option<DMatrix<f64>>,
}

impl Recorder {
    pub(crate) fn new(model: ModelKind, k: usize, n_units: usize, n_components: usize, seed: u64) -> Self {
        Self {
            model,
            k,
            seed,
            alloc_counts: DMatrix::zeros(n_units, n_components),
            n_stored: 0,
            draws: Vec::new(),
            trace: Vec::new(),
            weight_acc: None,
        }
    }

    pub(crate) fn trace(&mut self, log_lik: f64) {
        self.trace.push(log_lik);
    }

    pub(crate) fn store(&mut self, draw: Draw, z: &[usize]) {
        for (j, &h) in z.iter().enumerate() {
            self.alloc_counts[(j, h)] += 1.0;
        }
        self.n_stored += 1;
        self.draws.push(draw);
    }

    /// Adds one draw of the `k x p` weight field to the running sum.
    pub(crate) fn add_weights(&mut self, w: &DMatrix<f64>) {
        match &mut self.weight_acc {
            Some(acc) => *acc += w,
            None => self.weight_acc = Some(w.clone()),
        }
    }

    pub(crate) fn finish(self, accept_rates: BTreeMap<String, f64>) -> ChainOutput {
        let n = self.n_stored.max(1) as f64;
        let alloc_probs = self.alloc_counts / n;
        let map_alloc = (0..alloc_probs.nrows())
            .map(|j| argmax(&alloc_probs.row(j).iter().cloned().collect::<Vec<_>>()))
            .collect();
        ChainOutput {
            model: self.model,
            k: self.k,
            n_components: alloc_probs.ncols(),
            seed: self.seed,
            draws: self.draws,
            alloc_probs,
            map_alloc,
            accept_rates,
            log_lik_trace: self.trace,
            weight_tracks: self.weight_acc.map(|w| w / n),
        }
    }
}
