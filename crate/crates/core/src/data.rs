use crate::error::{domain, Result};

/// A `p x D` table of counts with optional positions and true allocations.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    region_ids: Vec<String>,
    /// Row-major `p x D`.
    counts: Vec<u64>,
    n_units: usize,
    n_conditions: usize,
    positions: Option<Vec<f64>>,
    truth: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(rows: Vec<Vec<u64>>, positions: Option<Vec<f64>>, truth: Option<Vec<usize>>) -> Result<Self> {
        let ids = (1..=rows.len()).map(|j| format!("r{j}")).collect();
        Self::with_ids(ids, rows, positions, truth)
    }

    pub fn with_ids(
        region_ids: Vec<String>,
        rows: Vec<Vec<u64>>,
        positions: Option<Vec<f64>>,
        truth: Option<Vec<usize>>,
    ) -> Result<Self> {
        let n_units = rows.len();
        if n_units == 0 {
            return domain("dataset needs at least one unit");
        }
        let n_conditions = rows[0].len();
        if n_conditions == 0 {
            return domain("dataset needs at least one condition");
        }
        if let Some(j) = rows.iter().position(|r| r.len() != n_conditions) {
            return domain(format!("unit {} has {} counts, expected {n_conditions}", j + 1, rows[j].len()));
        }
        if region_ids.len() != n_units {
            return domain("one region id per unit required");
        }
        if let Some(pos) = &positions {
            if pos.len() != n_units {
                return domain(format!("{} positions for {n_units} units", pos.len()));
            }
            if pos.iter().any(|v| !v.is_finite()) {
                return domain("positions must be finite");
            }
            if pos.windows(2).any(|w| w[1] < w[0]) {
                return domain("positions must be nondecreasing");
            }
        }
        if let Some(t) = &truth {
            if t.len() != n_units {
                return domain(format!("{} truth labels for {n_units} units", t.len()));
            }
        }
        Ok(Self {
            region_ids,
            counts: rows.into_iter().flatten().collect(),
            n_units,
            n_conditions,
            positions,
            truth,
        })
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn n_conditions(&self) -> usize {
        self.n_conditions
    }

    /// Counts `y_j` of unit `j` across conditions.
    #[inline]
    pub fn unit(&self, j: usize) -> &[u64] {
        &self.counts[j * self.n_conditions..(j + 1) * self.n_conditions]
    }

    #[inline]
    pub fn count(&self, j: usize, d: usize) -> u64 {
        self.counts[j * self.n_conditions + d]
    }

    pub fn units(&self) -> impl Iterator<Item = &[u64]> {
        self.counts.chunks(self.n_conditions)
    }

    pub fn positions(&self) -> Option<&[f64]> {
        self.positions.as_deref()
    }

    pub fn truth(&self) -> Option<&[usize]> {
        self.truth.as_deref()
    }

    pub fn region_id(&self, j: usize) -> &str {
        &self.region_ids[j]
    }

    pub fn region_ids(&self) -> &[String] {
        &self.region_ids
    }

    /// Mean count of unit `j` across conditions.
    pub fn mean_count(&self, j: usize) -> f64 {
        self.unit(j).iter().sum::<u64>() as f64 / self.n_conditions as f64
    }

    /// Same data with the truth column replaced.
    pub fn with_truth(mut self, truth: Option<Vec<usize>>) -> Result<Self> {
        if let Some(t) = &truth {
            if t.len() != self.n_units {
                return domain(format!("{} truth labels for {} units", t.len(), self.n_units));
            }
        }
        self.truth = truth;
        Ok(self)
    }

    /// Units reordered by `order` (a permutation of `0..p`); positions are dropped
    /// since the new order need not be monotone.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let rows = order.iter().map(|&j| self.unit(j).to_vec()).collect();
        let ids = order.iter().map(|&j| self.region_ids[j].clone()).collect();
        let truth = self.truth.as_ref().map(|t| order.iter().map(|&j| t[j]).collect());
        Self::with_ids(ids, rows, None, truth)
    }
}
