//! Non-overlapping decomposition of the flat parameter index set.
//!
//! Each cell `C_d` is stored as a sorted index list. Restriction `R_d` gathers
//! those coordinates, prolongation `R_dᵀ` scatters them back with zeros
//! elsewhere. No operator is ever materialized as a matrix.

use std::ops::Range;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PartitionError {
    #[error("partition needs at least one subdomain")]
    NoSubdomains,
    #[error("subdomain {0} is empty")]
    EmptySubdomain(usize),
    #[error("index {index} appears in more than one subdomain")]
    Overlap { index: usize },
    #[error("index {index} is out of range for {n} parameters")]
    OutOfRange { index: usize, n: usize },
    #[error("index {0} is not covered by any subdomain")]
    Uncovered(usize),
    #[error("subdomain {0} does not exist")]
    BadSubdomain(usize),
    #[error("length mismatch for subdomain {subdomain}: expected {expected}, got {got}")]
    Length {
        subdomain: usize,
        expected: usize,
        got: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamPartition {
    cells: Vec<Vec<usize>>,
    n: usize,
}

impl ParamPartition {
    /// Validates that `cells` are non-empty, pairwise disjoint and cover `0..n`.
    /// Indices inside each cell are sorted.
    pub fn new(mut cells: Vec<Vec<usize>>, n: usize) -> Result<Self, PartitionError> {
        if cells.is_empty() {
            return Err(PartitionError::NoSubdomains);
        }
        let mut owner = vec![false; n];
        for (d, cell) in cells.iter_mut().enumerate() {
            if cell.is_empty() {
                return Err(PartitionError::EmptySubdomain(d));
            }
            cell.sort_unstable();
            for &index in cell.iter() {
                if index >= n {
                    return Err(PartitionError::OutOfRange { index, n });
                }
                if owner[index] {
                    return Err(PartitionError::Overlap { index });
                }
                owner[index] = true;
            }
        }
        if let Some(index) = owner.iter().position(|covered| !covered) {
            return Err(PartitionError::Uncovered(index));
        }
        Ok(Self { cells, n })
    }

    /// Contiguous cells from consecutive ranges, e.g. per-block parameter slices.
    pub fn from_ranges(ranges: &[Range<usize>]) -> Result<Self, PartitionError> {
        let n = ranges.iter().map(|r| r.end).max().unwrap_or(0);
        Self::new(ranges.iter().map(|r| r.clone().collect()).collect(), n)
    }

    pub fn num_subdomains(&self) -> usize {
        self.cells.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn cell(&self, d: usize) -> Result<&[usize], PartitionError> {
        self.cells
            .get(d)
            .map(Vec::as_slice)
            .ok_or(PartitionError::BadSubdomain(d))
    }

    pub fn local_len(&self, d: usize) -> Result<usize, PartitionError> {
        self.cell(d).map(<[usize]>::len)
    }

    /// `R_d θ`.
    pub fn restrict(&self, theta: &[f64], d: usize) -> Result<Vec<f64>, PartitionError> {
        if theta.len() != self.n {
            return Err(PartitionError::Length {
                subdomain: d,
                expected: self.n,
                got: theta.len(),
            });
        }
        Ok(self.cell(d)?.iter().map(|&i| theta[i]).collect())
    }

    /// `R_dᵀ v`.
    pub fn prolong(&self, v: &[f64], d: usize) -> Result<Vec<f64>, PartitionError> {
        let mut out = vec![0.0; self.n];
        self.prolong_add(v, d, &mut out)?;
        Ok(out)
    }

    /// `out += R_dᵀ v`.
    pub fn prolong_add(&self, v: &[f64], d: usize, out: &mut [f64]) -> Result<(), PartitionError> {
        let cell = self.cell(d)?;
        if v.len() != cell.len() {
            return Err(PartitionError::Length {
                subdomain: d,
                expected: cell.len(),
                got: v.len(),
            });
        }
        for (&i, &x) in cell.iter().zip(v) {
            out[i] += x;
        }
        Ok(())
    }

    /// Additive lift `Σ_d R_dᵀ s_d` of one local step per subdomain.
    pub fn lift_sum(&self, steps: &[Vec<f64>]) -> Result<Vec<f64>, PartitionError> {
        if steps.len() != self.cells.len() {
            return Err(PartitionError::Length {
                subdomain: steps.len(),
                expected: self.cells.len(),
                got: steps.len(),
            });
        }
        let mut out = vec![0.0; self.n];
        for (d, s) in steps.iter().enumerate() {
            self.prolong_add(s, d, &mut out)?;
        }
        Ok(out)
    }
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}
