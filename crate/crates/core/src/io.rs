//! File formats: count tables, flat key-value configs, and fit outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::data::Dataset;
use crate::error::{config, Error, Result};
use crate::sampler::ChainOutput;

fn parse_err<T>(line: usize, msg: impl Into<String>) -> Result<T> {
    Err(Error::Parse { line, msg: msg.into() })
}

/// Writes `contents` to a sibling temp file, then renames it over `path`.
pub fn atomic_write(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| Error::Config(format!("'{}' is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    fs::write(&tmp, contents)?;
    if let Err(e) = fs::rename(&tmp, path) {
        let _ = fs::remove_file(&tmp);
        return Err(e.into());
    }
    Ok(())
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
}

/// Parses a tab-separated count table.
///
/// Header: `region_id [position] count_1 .. count_D [truth]`; lines starting
/// with `#` are ignored. Truth labels are 0-based component indices.
pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let mut lines = data_lines(text);
    let Some((hline, header)) = lines.next() else {
        return parse_err(1, "empty count file");
    };
    let cols: Vec<&str> = header.split('\t').map(str::trim).collect();
    if cols.first() != Some(&"region_id") {
        return parse_err(hline, "header must start with region_id");
    }
    let has_pos = cols.get(1) == Some(&"position");
    let has_truth = cols.last() == Some(&"truth");
    let first_count = 1 + usize::from(has_pos);
    let n_counts = cols.len() - first_count - usize::from(has_truth);
    if n_counts == 0 {
        return parse_err(hline, "header has no count columns");
    }
    for (c, name) in cols[first_count..first_count + n_counts].iter().enumerate() {
        if *name != format!("count_{}", c + 1) {
            return parse_err(hline, format!("expected column count_{}, found '{name}'", c + 1));
        }
    }

    let (mut ids, mut rows, mut pos, mut truth) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (ln, line) in lines {
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields.len() != cols.len() {
            return parse_err(ln, format!("expected {} fields, found {}", cols.len(), fields.len()));
        }
        ids.push(fields[0].to_string());
        if has_pos {
            match fields[1].parse::<f64>() {
                Ok(v) if v.is_finite() => pos.push(v),
                _ => return parse_err(ln, format!("invalid position '{}'", fields[1])),
            }
        }
        let mut row = Vec::with_capacity(n_counts);
        for (c, f) in fields[first_count..first_count + n_counts].iter().enumerate() {
            match f.parse::<u64>() {
                Ok(v) => row.push(v),
                Err(_) => return parse_err(ln, format!("count_{} must be a nonnegative integer, found '{f}'", c + 1)),
            }
        }
        rows.push(row);
        if has_truth {
            let f = fields[cols.len() - 1];
            match f.parse::<usize>() {
                Ok(v) => truth.push(v),
                Err(_) => return parse_err(ln, format!("invalid truth label '{f}'")),
            }
        }
    }
    if rows.is_empty() {
        return parse_err(hline, "count file has no data rows");
    }
    if has_pos && pos.windows(2).any(|w| w[1] < w[0]) {
        return parse_err(hline, "positions must be sorted in nondecreasing order");
    }
    Dataset::with_ids(ids, rows, has_pos.then_some(pos), has_truth.then_some(truth))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    parse_dataset(&fs::read_to_string(path)?)
}

pub fn format_dataset(ds: &Dataset) -> String {
    let mut out = String::from("region_id");
    if ds.positions().is_some() {
        out.push_str("\tposition");
    }
    for d in 1..=ds.n_conditions() {
        let _ = write!(out, "\tcount_{d}");
    }
    if ds.truth().is_some() {
        out.push_str("\ttruth");
    }
    out.push('\n');
    for j in 0..ds.n_units() {
        out.push_str(ds.region_id(j));
        if let Some(p) = ds.positions() {
            let _ = write!(out, "\t{}", p[j]);
        }
        for y in ds.unit(j) {
            let _ = write!(out, "\t{y}");
        }
        if let Some(t) = ds.truth() {
            let _ = write!(out, "\t{}", t[j]);
        }
        out.push('\n');
    }
    out
}

pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    atomic_write(path, format_dataset(ds).as_bytes())
}

/// Flat `key = value` configuration. Sections are dotted key prefixes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvConfig {
    entries: BTreeMap<String, (String, usize)>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (ln, line) in data_lines(text) {
            let Some((k, v)) = line.split_once('=') else {
                return parse_err(ln, format!("expected 'key = value', found '{}'", line.trim()));
            };
            let key = k.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return parse_err(ln, format!("invalid key '{key}'"));
            }
            let value = v.split_once(" #").map_or(v, |(a, _)| a).trim();
            if entries.insert(key.to_string(), (value.to_string(), ln)).is_some() {
                return parse_err(ln, format!("duplicate key '{key}'"));
            }
        }
        Ok(Self { entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), (value.to_string(), 0));
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(v, _)| v.as_str())
    }

    pub fn require_str(&self, key: &str) -> Result<&str> {
        self.get_str(key).ok_or_else(|| Error::Config(format!("missing required key '{key}'")))
    }

    /// Parsed value, or `None` when the key is absent.
    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((v, ln)) => match v.parse::<T>() {
                Ok(x) => Ok(Some(x)),
                Err(_) => config(format!("key '{key}' (line {ln}): cannot parse '{v}'")),
            },
        }
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?.ok_or_else(|| Error::Config(format!("missing required key '{key}'")))
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Comma-separated list.
    pub fn get_vec(&self, key: &str) -> Result<Option<Vec<f64>>> {
        Ok(self.get_matrix(key)?.map(|m| m.into_iter().flatten().collect()))
    }

    /// Matrix written row by row: `a, b; c, d`.
    pub fn get_matrix(&self, key: &str) -> Result<Option<Vec<Vec<f64>>>> {
        let Some((v, ln)) = self.entries.get(key) else {
            return Ok(None);
        };
        let rows: std::result::Result<Vec<Vec<f64>>, _> =
            v.split(';').map(|r| r.split(',').map(|x| x.trim().parse::<f64>()).collect()).collect();
        match rows {
            Ok(r) if !r.is_empty() && r.iter().all(|row| row.len() == r[0].len() && !row.is_empty()) => Ok(Some(r)),
            _ => config(format!("key '{key}' (line {ln}): expected numbers like 'a, b; c, d', found '{v}'")),
        }
    }

    /// All entries as `key = value` lines, sorted by key.
    pub fn echo(&self) -> BTreeMap<String, String> {
        self.entries.iter().map(|(k, (v, _))| (k.clone(), v.clone())).collect()
    }
}

fn csv_num(out: &mut String, v: f64) {
    let _ = write!(out, "{v}");
}

/// `region_id  map  p_1 .. p_H`, one row per unit.
pub fn format_allocations(out: &ChainOutput, ds: &Dataset) -> String {
    let mut s = String::from("region_id\tmap");
    for h in 0..out.n_components {
        let _ = write!(s, "\tp_{h}");
    }
    s.push('\n');
    for j in 0..out.alloc_probs.nrows() {
        let _ = write!(s, "{}\t{}", ds.region_id(j), out.map_alloc[j]);
        for h in 0..out.n_components {
            s.push('\t');
            csv_num(&mut s, out.alloc_probs[(j, h)]);
        }
        s.push('\n');
    }
    s
}

/// Allocation file contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocations {
    pub region_ids: Vec<String>,
    pub map: Vec<usize>,
    /// `p x H`.
    pub probs: DMatrix<f64>,
}

pub fn parse_allocations(text: &str) -> Result<Allocations> {
    let mut lines = data_lines(text);
    let Some((hline, header)) = lines.next() else {
        return parse_err(1, "empty allocation file");
    };
    let cols: Vec<&str> = header.split('\t').collect();
    if cols.len() < 3 || cols[0] != "region_id" || cols[1] != "map" {
        return parse_err(hline, "allocation header must be region_id, map, p_0 ...");
    }
    let n_comp = cols.len() - 2;
    let (mut ids, mut map, mut probs) = (Vec::new(), Vec::new(), Vec::new());
    for (ln, line) in lines {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != cols.len() {
            return parse_err(ln, format!("expected {} fields, found {}", cols.len(), f.len()));
        }
        ids.push(f[0].to_string());
        map.push(f[1].parse::<usize>().or_else(|_| parse_err(ln, format!("invalid component '{}'", f[1])))?);
        for v in &f[2..] {
            probs.push(v.parse::<f64>().or_else(|_| parse_err(ln, format!("invalid probability '{v}'")))?);
        }
    }
    let p = ids.len();
    Ok(Allocations { region_ids: ids, map, probs: DMatrix::from_row_slice(p, n_comp, &probs) })
}

/// One CSV row per stored draw: iteration, log-likelihood, then every parameter.
pub fn format_draws(out: &ChainOutput) -> String {
    let mut s = String::from("iter,log_lik");
    let Some(first) = out.draws.first() else {
        s.push('\n');
        return s;
    };
    let prefix = if out.k == 0 { "m" } else { "mu" };
    for i in 0..first.mu.nrows() {
        for d in 0..first.mu.ncols() {
            let _ = write!(s, ",{prefix}_{}_{}", i + 1, d + 1);
        }
    }
    for h in 0..first.phi.nrows() {
        for d in 0..first.phi.ncols() {
            let _ = write!(s, ",phi_{}_{}", h + 1, d + 1);
        }
    }
    if let Some(pi) = &first.pi {
        for i in 0..pi.len() {
            let _ = write!(s, ",pi_{}", i + 1);
        }
    }
    if first.eta.is_some() {
        s.push_str(",eta");
    }
    s.push('\n');
    for dr in &out.draws {
        let _ = write!(s, "{},", dr.iter);
        csv_num(&mut s, dr.log_lik);
        // row-major to match the header
        for i in 0..dr.mu.nrows() {
            for d in 0..dr.mu.ncols() {
                s.push(',');
                csv_num(&mut s, dr.mu[(i, d)]);
            }
        }
        for h in 0..dr.phi.nrows() {
            for d in 0..dr.phi.ncols() {
                s.push(',');
                csv_num(&mut s, dr.phi[(h, d)]);
            }
        }
        for v in dr.pi.iter().flatten() {
            s.push(',');
            csv_num(&mut s, *v);
        }
        if let Some(e) = dr.eta {
            s.push(',');
            csv_num(&mut s, e);
        }
        s.push('\n');
    }
    s
}

/// `region_id  w_1 .. w_k` from a `k x p` matrix of per-unit weights.
pub fn format_weights(weights: &DMatrix<f64>, ds: &Dataset) -> String {
    let mut s = String::from("region_id");
    for i in 1..=weights.nrows() {
        let _ = write!(s, "\tw_{i}");
    }
    s.push('\n');
    for j in 0..weights.ncols() {
        s.push_str(ds.region_id(j));
        for i in 0..weights.nrows() {
            s.push('\t');
            csv_num(&mut s, weights[(i, j)]);
        }
        s.push('\n');
    }
    s
}

/// Parses a weight file into a `k x p` matrix.
pub fn parse_weights(text: &str) -> Result<DMatrix<f64>> {
    let mut lines = data_lines(text);
    let Some((hline, header)) = lines.next() else {
        return parse_err(1, "empty weight file");
    };
    let k = header.split('\t').count() - 1;
    if k == 0 {
        return parse_err(hline, "weight file has no weight columns");
    }
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for (ln, line) in lines {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != k + 1 {
            return parse_err(ln, format!("expected {} fields, found {}", k + 1, f.len()));
        }
        let col: std::result::Result<Vec<f64>, _> = f[1..].iter().map(|v| v.parse::<f64>()).collect();
        cols.push(col.or_else(|_| parse_err(ln, "invalid weight"))?);
    }
    Ok(DMatrix::from_fn(k, cols.len(), |i, j| cols[j][i]))
}

/// Plot-ready rows: position, mean count, MAP component, then one track per
/// primary cluster (`weight_i` or `prob_i`, in `[0, 1]`).
pub fn format_report(ds: &Dataset, map: &[usize], tracks: &DMatrix<f64>, track_name: &str) -> String {
    let mut s = String::from("position,mean_count,map_component");
    for i in 1..=tracks.nrows() {
        let _ = write!(s, ",{track_name}_{i}");
    }
    s.push('\n');
    for j in 0..ds.n_units() {
        match ds.positions() {
            Some(p) => csv_num(&mut s, p[j]),
            None => {
                let _ = write!(s, "{j}");
            }
        }
        s.push(',');
        csv_num(&mut s, ds.mean_count(j));
        let _ = write!(s, ",{}", map[j]);
        for i in 0..tracks.nrows() {
            s.push(',');
            csv_num(&mut s, tracks[(i, j)]);
        }
        s.push('\n');
    }
    s
}
