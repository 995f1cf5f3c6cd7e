//! Sparse feature vectors and labeled samples.

use std::collections::BTreeMap;

use crate::error::{MachError, Result};

/// Index/value pairs over a fixed dimension. Indices are strictly increasing,
/// values finite and nonzero.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVector {
    dim: usize,
    entries: Vec<(u32, f64)>,
}

impl SparseVector {
    /// Build from already-canonical entries, validating the invariants.
    pub fn new(dim: usize, entries: Vec<(u32, f64)>) -> Result<Self> {
        if dim < 1 {
            return Err(MachError::Validation("vector dimension must be positive".into()));
        }
        let mut prev: Option<u32> = None;
        for &(idx, val) in &entries {
            if idx as usize >= dim {
                return Err(MachError::Validation(format!(
                    "index {idx} out of range for dimension {dim}"
                )));
            }
            if let Some(p) = prev {
                if idx <= p {
                    return Err(MachError::Validation(format!(
                        "indices must be strictly increasing, saw {p} then {idx}"
                    )));
                }
            }
            if !val.is_finite() {
                return Err(MachError::Validation(format!(
                    "non-finite value at index {idx}"
                )));
            }
            if val == 0.0 {
                return Err(MachError::Validation(format!(
                    "explicit zero value at index {idx}"
                )));
            }
            prev = Some(idx);
        }
        Ok(SparseVector { dim, entries })
    }

    /// Build from arbitrary pairs: duplicates are summed, exact zeros dropped,
    /// entries sorted.
    pub fn accumulate<I: IntoIterator<Item = (u32, f64)>>(dim: usize, pairs: I) -> Result<Self> {
        let mut acc: BTreeMap<u32, f64> = BTreeMap::new();
        for (idx, val) in pairs {
            if !val.is_finite() {
                return Err(MachError::Validation(format!(
                    "non-finite value at index {idx}"
                )));
            }
            *acc.entry(idx).or_insert(0.0) += val;
        }
        SparseVector::new(dim, acc.into_iter().filter(|&(_, v)| v != 0.0).collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }
}

/// One training/evaluation sample: features plus its label set.
/// Multiclass samples carry exactly one label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub features: SparseVector,
    /// Sorted, deduplicated, non-empty class ids.
    pub labels: Vec<u32>,
}

impl LabeledSample {
    pub fn new(features: SparseVector, mut labels: Vec<u32>) -> Result<Self> {
        if labels.is_empty() {
            return Err(MachError::Validation("sample has no labels".into()));
        }
        labels.sort_unstable();
        labels.dedup();
        Ok(LabeledSample { features, labels })
    }
}
