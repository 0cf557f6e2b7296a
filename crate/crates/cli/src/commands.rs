//! The four subcommands as plain functions over paths.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mam_core::io::{
    atomic_write, format_allocations, format_draws, format_report, format_weights, parse_allocations, parse_weights,
    read_dataset, write_dataset, Allocations, KvConfig,
};
use mam_core::{
    chain_misclassification, misclassification, misclassification_unstructured, summarize_chain, ChainOutput,
    ChainSummary, ConnectionMatrix, Dataset, ModelKind,
};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::scenario::{FitSpec, SimulationSpec};

pub const DRAWS_FILE: &str = "draws.csv";
pub const ALLOCATIONS_FILE: &str = "allocations.tsv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const WEIGHTS_FILE: &str = "weights.tsv";
pub const TIMING_FILE: &str = "timing.json";

/// Error with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    /// 2 for bad input or configuration, 3 for internal failures.
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn user(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self { code: 3, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<mam_core::Error> for CliError {
    fn from(e: mam_core::Error) -> Self {
        match e {
            mam_core::Error::Internal(_) => Self::internal(e.to_string()),
            _ => Self::user(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn with_path<T>(path: &Path, r: mam_core::Result<T>) -> CliResult<T> {
    r.map_err(|e| {
        let mut err = CliError::from(e);
        err.message = format!("{}: {}", path.display(), err.message);
        err
    })
}

fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| CliError::internal(format!("cannot serialize JSON: {e}")))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    with_path(path, atomic_write(path, text.as_bytes()))
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::user(format!("{}: {e}", path.display())))
}

fn read_config(path: Option<&Path>) -> CliResult<KvConfig> {
    match path {
        Some(p) => with_path(p, KvConfig::read(p)),
        None => Ok(KvConfig::default()),
    }
}

/// Simulates a dataset from a scenario config; `seed` overrides `simulate.seed`.
pub fn simulate(config: &Path, out: &Path, seed: Option<u64>) -> CliResult<Dataset> {
    let mut cfg = read_config(Some(config))?;
    if let Some(s) = seed {
        cfg.set("simulate.seed", s);
    }
    let ds = with_path(config, SimulationSpec::from_config(&cfg))?.run()?;
    with_path(out, write_dataset(out, &ds))?;
    Ok(ds)
}

/// Command-line values that take precedence over the fit config.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitOverrides {
    pub seed: Option<u64>,
    pub iters: Option<usize>,
    pub burnin: Option<usize>,
    pub thin: Option<usize>,
    pub model: Option<ModelKind>,
    pub scheme: Option<String>,
    pub k: Option<usize>,
}

impl FitOverrides {
    pub fn apply(&self, cfg: &mut KvConfig) {
        let set = |cfg: &mut KvConfig, key: &str, v: Option<String>| {
            if let Some(v) = v {
                cfg.set(key, v);
            }
        };
        set(cfg, "mcmc.seed", self.seed.map(|v| v.to_string()));
        set(cfg, "mcmc.iters", self.iters.map(|v| v.to_string()));
        set(cfg, "mcmc.burnin", self.burnin.map(|v| v.to_string()));
        set(cfg, "mcmc.thin", self.thin.map(|v| v.to_string()));
        set(cfg, "model.kind", self.model.map(|v| v.to_string()));
        set(cfg, "model.scheme", self.scheme.clone());
        set(cfg, "model.k", self.k.map(|v| v.to_string()));
    }
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub model: ModelKind,
    pub seed: u64,
    pub k: usize,
    pub n_components: usize,
    pub n_units: usize,
    /// Aligned misclassification against the dataset's truth column, if any.
    pub misclassification: Option<f64>,
    pub posterior: ChainSummary,
    /// Effective configuration after command-line overrides.
    pub config: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub runtime_seconds: f64,
}

/// Fits one chain and writes every output file into `out_dir`.
pub fn fit(config: Option<&Path>, data: &Path, out_dir: &Path, ov: &FitOverrides) -> CliResult<(ChainOutput, FitSummary)> {
    let mut cfg = read_config(config)?;
    ov.apply(&mut cfg);
    let spec = match config {
        Some(p) => with_path(p, FitSpec::from_config(&cfg))?,
        None => FitSpec::from_config(&cfg)?,
    };
    let ds = with_path(data, read_dataset(data))?;
    if spec.kind == ModelKind::CarMam && ds.positions().is_none() {
        return Err(CliError::user(format!("{}: car-mam needs a position column", data.display())));
    }
    fs::create_dir_all(out_dir).map_err(|e| CliError::user(format!("{}: {e}", out_dir.display())))?;

    let start = Instant::now();
    let out = spec.run(&ds)?;
    let runtime = start.elapsed().as_secs_f64();

    let misclassification = ds.truth().map(|t| chain_misclassification(&out, t)).transpose()?;
    let summary = FitSummary {
        model: out.model,
        seed: out.seed,
        k: out.k,
        n_components: out.n_components,
        n_units: ds.n_units(),
        misclassification,
        posterior: summarize_chain(&out)?,
        config: cfg.echo(),
    };
    write_text(&out_dir.join(DRAWS_FILE), &format_draws(&out))?;
    write_text(&out_dir.join(ALLOCATIONS_FILE), &format_allocations(&out, &ds))?;
    if let Some(w) = &out.weight_tracks {
        write_text(&out_dir.join(WEIGHTS_FILE), &format_weights(w, &ds))?;
    }
    write_text(&out_dir.join(SUMMARY_FILE), &to_json(&summary)?)?;
    write_text(&out_dir.join(TIMING_FILE), &to_json(&Timing { runtime_seconds: runtime })?)?;
    Ok((out, summary))
}

/// Contents of the evaluation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub misclassification: f64,
    pub n_units: usize,
    pub n_components: usize,
    /// `primary-permutation` for MAM-type labels, `hungarian` otherwise.
    pub alignment: String,
}

/// Truth labels from any TSV with a `region_id` first column and a `truth` column.
pub fn read_truth(path: &Path) -> CliResult<(Vec<String>, Vec<usize>)> {
    let text = read_text(path)?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
    let Some((_, header)) = lines.next() else {
        return Err(CliError::user(format!("{}: empty file", path.display())));
    };
    let cols: Vec<&str> = header.split('\t').map(str::trim).collect();
    let Some(tc) = cols.iter().position(|c| *c == "truth") else {
        return Err(CliError::user(format!("{}: no 'truth' column", path.display())));
    };
    let (mut ids, mut truth) = (Vec::new(), Vec::new());
    for (i, line) in lines {
        let f: Vec<&str> = line.split('\t').map(str::trim).collect();
        let label = f.get(tc).and_then(|v| v.parse::<usize>().ok()).ok_or_else(|| {
            CliError::user(format!("{}: line {}: invalid truth label", path.display(), i + 1))
        })?;
        ids.push(f[0].to_string());
        truth.push(label);
    }
    Ok((ids, truth))
}

fn summary_beside(path: &Path) -> Option<FitSummary> {
    let p = path.parent().unwrap_or(Path::new(".")).join(SUMMARY_FILE);
    serde_json::from_str(&fs::read_to_string(p).ok()?).ok()
}

/// Aligned misclassification of an allocation file against truth labels.
///
/// The label structure comes from `model` when given, else from a
/// `summary.json` next to the allocations, else from the component count
/// (a power of two is read as MAM-type labels).
pub fn evaluate(alloc: &Path, truth: &Path, model: Option<ModelKind>, out: Option<&Path>) -> CliResult<Metrics> {
    let a = with_path(alloc, parse_allocations(&read_text(alloc)?))?;
    let (ids, labels) = read_truth(truth)?;
    if ids.len() != a.map.len() {
        return Err(CliError::user(format!(
            "{} has {} units but {} has {}",
            alloc.display(),
            a.map.len(),
            truth.display(),
            ids.len()
        )));
    }
    if let Some(j) = (0..ids.len()).find(|&j| ids[j] != a.region_ids[j]) {
        return Err(CliError::user(format!("region {} differs: '{}' vs '{}'", j + 1, a.region_ids[j], ids[j])));
    }
    let n_comp = a.probs.ncols();
    let model = model.or_else(|| summary_beside(alloc).map(|s| s.model));
    let structured = match model {
        Some(m) => m != ModelKind::NegBinMix,
        None => n_comp.is_power_of_two() && n_comp >= 2,
    };
    let (err, alignment) = if structured {
        if !n_comp.is_power_of_two() || n_comp < 2 {
            return Err(CliError::user(format!("{n_comp} components is not 2^k for a MAM-type model")));
        }
        let u = ConnectionMatrix::new(n_comp.trailing_zeros() as usize)?;
        (misclassification(&a.map, &labels, &u)?, "primary-permutation")
    } else {
        (misclassification_unstructured(&a.map, &labels, n_comp)?, "hungarian")
    };
    let metrics =
        Metrics { misclassification: err, n_units: ids.len(), n_components: n_comp, alignment: alignment.into() };
    if let Some(o) = out {
        write_text(o, &to_json(&metrics)?)?;
    }
    Ok(metrics)
}

/// Per-primary membership probabilities (`k x p`) from MAM allocation probabilities.
pub fn membership_from_allocations(a: &Allocations, k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(k, a.probs.nrows(), |i, j| {
        (0..a.probs.ncols()).filter(|h| (h >> i) & 1 == 1).map(|h| a.probs[(j, h)]).sum()
    })
}

/// Writes the plot-ready report for a finished fit.
pub fn report(fit_dir: &Path, data: &Path, out: &Path) -> CliResult<usize> {
    let need = |name: &str| -> CliResult<PathBuf> {
        let p = fit_dir.join(name);
        if p.is_file() {
            Ok(p)
        } else {
            Err(CliError::user(format!("{}: missing fit output", p.display())))
        }
    };
    let summary_path = need(SUMMARY_FILE)?;
    let summary: FitSummary = serde_json::from_str(&read_text(&summary_path)?)
        .map_err(|e| CliError::user(format!("{}: {e}", summary_path.display())))?;
    let alloc_path = need(ALLOCATIONS_FILE)?;
    let a = with_path(&alloc_path, parse_allocations(&read_text(&alloc_path)?))?;
    let ds = with_path(data, read_dataset(data))?;
    if a.map.len() != ds.n_units() {
        return Err(CliError::user(format!(
            "{} has {} units but {} has {}",
            alloc_path.display(),
            a.map.len(),
            data.display(),
            ds.n_units()
        )));
    }
    let (tracks, name) = match summary.model {
        ModelKind::CarMam => {
            let wp = need(WEIGHTS_FILE)?;
            (with_path(&wp, parse_weights(&read_text(&wp)?))?, "weight")
        }
        ModelKind::Mam => (membership_from_allocations(&a, summary.k), "prob"),
        ModelKind::NegBinMix => (a.probs.transpose(), "prob"),
    };
    if tracks.ncols() != ds.n_units() {
        return Err(CliError::user("weight file does not match the dataset"));
    }
    write_text(out, &format_report(&ds, &a.map, &tracks, name))?;
    Ok(ds.n_units())
}
