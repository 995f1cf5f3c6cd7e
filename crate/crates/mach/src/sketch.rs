//! Reference count-min sketch over discrete item streams.
//!
//! An R x B counting matrix with one 2-universal hash per row. Updates
//! increment one cell per row; queries return the minimum cell, which never
//! undercounts the true frequency.

use crate::error::{MachError, Result};
use crate::hashing::{mix_seed, UniversalHash};

#[derive(Debug, Clone)]
pub struct CountMinSketch {
    counts: Vec<u64>, // rows * buckets, row-major
    buckets: usize,
    hashes: Vec<UniversalHash>,
    total: u64,
    domain_size: u64,
}

impl CountMinSketch {
    pub fn new(buckets: u64, rows: u64, seed: u64, domain_size: u64) -> Result<Self> {
        if buckets < 2 {
            return Err(MachError::InvalidConfig(format!(
                "sketch needs at least 2 buckets, got {buckets}"
            )));
        }
        if rows < 1 {
            return Err(MachError::InvalidConfig(format!(
                "sketch needs at least 1 row, got {rows}"
            )));
        }
        let hashes = (0..rows)
            .map(|j| UniversalHash::sample(mix_seed(seed, j), buckets, domain_size))
            .collect::<Result<Vec<_>>>()?;
        Ok(CountMinSketch {
            counts: vec![0; (rows * buckets) as usize],
            buckets: buckets as usize,
            hashes,
            total: 0,
            domain_size,
        })
    }

    fn check_domain(&self, item: u64) -> Result<()> {
        if item >= self.domain_size {
            return Err(MachError::Validation(format!(
                "item {item} outside domain of size {}",
                self.domain_size
            )));
        }
        Ok(())
    }

    pub fn update(&mut self, item: u64) -> Result<()> {
        self.check_domain(item)?;
        for (j, h) in self.hashes.iter().enumerate() {
            let cell = j * self.buckets + h.eval(item) as usize;
            self.counts[cell] += 1;
        }
        self.total += 1;
        Ok(())
    }

    pub fn estimate(&self, item: u64) -> Result<u64> {
        self.check_domain(item)?;
        Ok(self
            .hashes
            .iter()
            .enumerate()
            .map(|(j, h)| self.counts[j * self.buckets + h.eval(item) as usize])
            .min()
            .expect("at least one row"))
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn rows(&self) -> usize {
        self.hashes.len()
    }

    pub fn buckets(&self) -> usize {
        self.buckets
    }

    pub fn row_counts(&self, j: usize) -> &[u64] {
        &self.counts[j * self.buckets..(j + 1) * self.buckets]
    }

    pub fn hashes(&self) -> &[UniversalHash] {
        &self.hashes
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn new_sketch_is_zeroed() {
        let s = CountMinSketch::new(4, 3, 1, 26).unwrap();
        assert_eq!(s.total(), 0);
        for j in 0..3 {
            assert!(s.row_counts(j).iter().all(|&c| c == 0));
        }
    }

    #[test]
    fn same_seed_same_hashes() {
        let a = CountMinSketch::new(4, 3, 9, 26).unwrap();
        let b = CountMinSketch::new(4, 3, 9, 26).unwrap();
        assert_eq!(a.hashes(), b.hashes());
    }

    #[test]
    fn degenerate_config_rejected() {
        assert!(CountMinSketch::new(1, 3, 0, 26).is_err());
        assert!(CountMinSketch::new(4, 0, 0, 26).is_err());
    }

    #[test]
    fn single_update_sets_one_cell_per_row() {
        let mut s = CountMinSketch::new(8, 3, 2, 26).unwrap();
        s.update(0).unwrap();
        for j in 0..3 {
            let row = s.row_counts(j);
            assert_eq!(row.iter().sum::<u64>(), 1);
            assert_eq!(row.iter().filter(|&&c| c == 1).count(), 1);
        }
    }

    #[test]
    fn letter_stream_abcaacd() {
        // letters mapped A=0 B=1 C=2 D=3
        let stream = [0u64, 1, 2, 0, 0, 2, 3];
        let mut s = CountMinSketch::new(8, 4, 11, 26).unwrap();
        for &x in &stream {
            s.update(x).unwrap();
        }
        assert_eq!(s.total(), 7);
        for j in 0..4 {
            assert_eq!(s.row_counts(j).iter().sum::<u64>(), 7);
        }
        // overestimation property; equality holds when A avoids collisions in some row
        assert!(s.estimate(0).unwrap() >= 3);
        let others = [1u64, 2, 3];
        let a_clear = (0..4).any(|j| {
            let h = &s.hashes()[j];
            others.iter().all(|&o| h.eval(o) != h.eval(0))
        });
        if a_clear {
            assert_eq!(s.estimate(0).unwrap(), 3);
        }
    }

    #[test]
    fn out_of_domain_rejected() {
        let mut s = CountMinSketch::new(4, 2, 0, 10).unwrap();
        assert!(s.update(10).is_err());
        assert!(s.estimate(10).is_err());
    }

    #[test]
    fn never_seen_item_bounded() {
        let mut s = CountMinSketch::new(16, 4, 3, 100).unwrap();
        for i in 0..50u64 {
            s.update(i % 5).unwrap();
        }
        let e = s.estimate(77).unwrap();
        let max_cell = (0..4).flat_map(|j| s.row_counts(j)).copied().max().unwrap();
        assert!(e <= max_cell);
    }

    #[test]
    fn estimates_never_undercount() {
        let mut s = CountMinSketch::new(32, 4, 7, 500).unwrap();
        let mut exact: HashMap<u64, u64> = HashMap::new();
        let mut x = 123456789u64;
        for _ in 0..5000 {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let item = (x >> 33) % 500;
            s.update(item).unwrap();
            *exact.entry(item).or_insert(0) += 1;
        }
        for (&item, &count) in &exact {
            assert!(s.estimate(item).unwrap() >= count);
        }
    }
}
