//! Label-aligned misclassification and posterior summaries.

use std::collections::BTreeMap;

use pathfinding::prelude::{kuhn_munkres, Matrix};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::math::{batch_means_var_of_mean, mean, quantile_sorted};
use crate::model::ConnectionMatrix;
use crate::sampler::{ChainOutput, ModelKind};

/// Largest `k` for which every primary-label permutation is enumerated.
pub const MAX_ALIGN_K: usize = 8;

fn permutations(k: usize) -> Vec<Vec<usize>> {
    fn go(cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if cur.len() == used.len() {
            out.push(cur.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                go(cur, used, out);
                cur.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::with_capacity(k), &mut vec![false; k], &mut out);
    out
}

fn check_labels(est: &[usize], truth: &[usize], n_comp: usize) -> Result<()> {
    if est.len() != truth.len() {
        return domain(format!("{} estimated labels vs {} true labels", est.len(), truth.len()));
    }
    if est.is_empty() {
        return domain("no labels to compare");
    }
    if let Some(h) = est.iter().chain(truth).find(|&&h| h >= n_comp) {
        return domain(format!("label {h} out of range for {n_comp} components"));
    }
    Ok(())
}

/// Fraction of units whose component differs from the truth, minimized over
/// renamings of the primary clusters (which permute components through `U`).
pub fn misclassification(est: &[usize], truth: &[usize], u: &ConnectionMatrix) -> Result<f64> {
    check_labels(est, truth, u.n_components())?;
    if u.k() > MAX_ALIGN_K {
        return domain(format!("label alignment supports k <= {MAX_ALIGN_K}"));
    }
    let n_comp = u.n_components();
    let mut table = vec![0usize; n_comp * n_comp];
    for (&e, &t) in est.iter().zip(truth) {
        table[e * n_comp + t] += 1;
    }
    let best = permutations(u.k())
        .iter()
        .map(|perm| (0..n_comp).map(|h| table[h * n_comp + u.permute(h, perm)]).sum::<usize>())
        .max()
        .unwrap_or(0);
    Ok(1.0 - best as f64 / est.len() as f64)
}

/// Misclassification under the best one-to-one matching of arbitrary labels,
/// for mixtures whose components carry no membership structure.
pub fn misclassification_unstructured(est: &[usize], truth: &[usize], n_comp: usize) -> Result<f64> {
    check_labels(est, truth, n_comp)?;
    let mut counts = Matrix::new(n_comp, n_comp, 0i64);
    for (&e, &t) in est.iter().zip(truth) {
        counts[(e, t)] += 1;
    }
    let (matched, _) = kuhn_munkres(&counts);
    Ok(1.0 - matched as f64 / est.len() as f64)
}

/// Misclassification appropriate to the model that produced `out`.
pub fn chain_misclassification(out: &ChainOutput, truth: &[usize]) -> Result<f64> {
    match out.model {
        ModelKind::NegBinMix => misclassification_unstructured(&out.map_alloc, truth, out.n_components),
        ModelKind::Mam | ModelKind::CarMam => misclassification(&out.map_alloc, truth, &ConnectionMatrix::new(out.k)?),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
}

impl ParamSummary {
    /// Mean, SD and central 95% interval of a sample.
    pub fn from_values(name: impl Into<String>, values: &[f64]) -> Self {
        let m = mean(values);
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
        } else {
            0.0
        };
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite draws"));
        Self { name: name.into(), mean: m, sd, lower: quantile_sorted(&sorted, 0.025), upper: quantile_sorted(&sorted, 0.975) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub model: ModelKind,
    pub seed: u64,
    pub k: usize,
    pub n_components: usize,
    pub n_draws: usize,
    pub params: Vec<ParamSummary>,
    pub accept_rates: BTreeMap<String, f64>,
    /// Geweke z-score of the stored log-likelihood trace.
    pub geweke_z: f64,
    /// Units per component under the MAP allocation.
    pub component_sizes: Vec<usize>,
}

/// Geweke z comparing the first 10% and last 50% of a series.
pub fn geweke_z(xs: &[f64]) -> f64 {
    let n = xs.len();
    let a = &xs[..(n / 10).max(1)];
    let b = &xs[n - (n / 2).max(1)..];
    let diff = mean(a) - mean(b);
    let var = batch_means_var_of_mean(a) + batch_means_var_of_mean(b);
    if diff == 0.0 {
        0.0
    } else if var > 0.0 {
        diff / var.sqrt()
    } else {
        f64::INFINITY.copysign(diff)
    }
}

/// Posterior summaries of every stored parameter.
pub fn summarize_chain(out: &ChainOutput) -> Result<ChainSummary> {
    let Some(first) = out.draws.first() else {
        return domain("chain has no stored draws");
    };
    let mut params = Vec::new();
    // baseline draws hold component means rather than primary means
    let prefix = if out.model == ModelKind::NegBinMix { "m" } else { "mu" };
    let col = |f: &dyn Fn(&crate::sampler::Draw) -> f64| out.draws.iter().map(f).collect::<Vec<f64>>();
    for i in 0..first.mu.nrows() {
        for d in 0..first.mu.ncols() {
            params.push(ParamSummary::from_values(format!("{prefix}_{}_{}", i + 1, d + 1), &col(&|dr| dr.mu[(i, d)])));
        }
    }
    for h in 0..first.phi.nrows() {
        for d in 0..first.phi.ncols() {
            params.push(ParamSummary::from_values(format!("phi_{}_{}", h + 1, d + 1), &col(&|dr| dr.phi[(h, d)])));
        }
    }
    if let Some(pi) = &first.pi {
        for i in 0..pi.len() {
            params.push(ParamSummary::from_values(
                format!("pi_{}", i + 1),
                &col(&|dr| dr.pi.as_ref().map_or(f64::NAN, |p| p[i])),
            ));
        }
    }
    if first.eta.is_some() {
        params.push(ParamSummary::from_values("eta", &col(&|dr| dr.eta.unwrap_or(f64::NAN))));
    }
    let mut sizes = vec![0; out.n_components];
    for &h in &out.map_alloc {
        sizes[h] += 1;
    }
    let trace = col(&|dr| dr.log_lik);
    Ok(ChainSummary {
        model: out.model,
        seed: out.seed,
        k: out.k,
        n_components: out.n_components,
        n_draws: out.draws.len(),
        params,
        accept_rates: out.accept_rates.clone(),
        geweke_z: geweke_z(&trace),
        component_sizes: sizes,
    })
}
