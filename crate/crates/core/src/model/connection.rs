//! The connection matrix `U` linking primary clusters to augmented components.
//!
//! Row `h` of `U` is the binary expansion of `h`: bit `i` set means the
//! component includes primary cluster `i`. Row 0 is the outward component
//! (member of no primary cluster).

use crate::error::{config, domain, Result};

/// Largest supported number of primary clusters.
pub const MAX_PRIMARY: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConnectionMatrix {
    k: usize,
}

impl ConnectionMatrix {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 || k > MAX_PRIMARY {
            return config(format!("number of primary clusters must be in 1..={MAX_PRIMARY}, got {k}"));
        }
        Ok(Self { k })
    }

    /// Number of primary clusters `k`.
    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of augmented components `2^k`.
    pub fn n_components(&self) -> usize {
        1 << self.k
    }

    pub fn outward(&self) -> usize {
        0
    }

    /// `u_{hi}`.
    #[inline]
    pub fn member(&self, h: usize, i: usize) -> bool {
        (h >> i) & 1 == 1
    }

    /// Row `u_h` as a boolean vector of length `k`.
    pub fn row(&self, h: usize) -> Vec<bool> {
        (0..self.k).map(|i| self.member(h, i)).collect()
    }

    pub fn rows(&self) -> impl Iterator<Item = Vec<bool>> + '_ {
        (0..self.n_components()).map(|h| self.row(h))
    }

    /// Multiplicity `n_h = sum_i u_{hi}`.
    #[inline]
    pub fn multiplicity(&self, h: usize) -> usize {
        h.count_ones() as usize
    }

    /// Index of the component whose row equals `members`.
    pub fn component_of(&self, members: &[bool]) -> Result<usize> {
        if members.len() != self.k {
            return domain(format!("membership vector has length {}, expected {}", members.len(), self.k));
        }
        Ok(members
            .iter()
            .enumerate()
            .fold(0, |h, (i, &m)| if m { h | (1 << i) } else { h }))
    }

    /// Image of component `h` when primary label `i` is renamed `perm[i]`.
    pub fn permute(&self, h: usize, perm: &[usize]) -> usize {
        (0..self.k)
            .filter(|&i| self.member(h, i))
            .fold(0, |acc, i| acc | (1 << perm[i]))
    }

    pub fn check_component(&self, h: usize) -> Result<()> {
        if h >= self.n_components() {
            return domain(format!("component index {h} out of range for k = {}", self.k));
        }
        Ok(())
    }
}

/// Builds `U` for `k` primary clusters.
pub fn connection_matrix(k: usize) -> Result<ConnectionMatrix> {
    ConnectionMatrix::new(k)
}
