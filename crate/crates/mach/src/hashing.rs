//! Carter-Wegman 2-universal hashing over class ids, plus feature hashing
//! for input dimensionality reduction.
//!
//! A hash is `h(x) = ((a*x + b) mod p) mod B` with `p` prime, `a` drawn from
//! `[1, p)` and `b` from `[0, p)`. We require `p >= domain_size` so the first
//! mod is injective on the id domain; collisions then come only from the
//! final reduction to `B` buckets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

use crate::data::SparseVector;
use crate::error::{MachError, Result};

/// One member of the 2-universal family, mapping `[0, domain)` to `[0, range_b)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UniversalHash {
    a: u64,
    b: u64,
    p: u64,
    range_b: u64,
}

impl UniversalHash {
    /// Draw a hash with fresh `(a, b)` from a seeded rng. The modulus is the
    /// smallest prime covering both the bucket range and the id domain, so
    /// identical seeds give identical hashes.
    pub fn sample(seed: u64, range_b: u64, domain_size: u64) -> Result<Self> {
        if range_b < 2 {
            return Err(MachError::InvalidConfig(format!(
                "hash range must be at least 2, got {range_b}"
            )));
        }
        if domain_size < 1 {
            return Err(MachError::InvalidConfig(
                "hash domain must be non-empty".into(),
            ));
        }
        let p = next_prime_at_least(range_b.max(domain_size));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rng.random_range(1..p);
        let b = rng.random_range(0..p);
        Ok(UniversalHash { a, b, p, range_b })
    }

    /// Reconstruct a hash from stored parameters, re-checking the invariants.
    pub fn from_parts(a: u64, b: u64, p: u64, range_b: u64) -> Result<Self> {
        if range_b < 2 {
            return Err(MachError::Format(format!("hash range {range_b} < 2")));
        }
        if !is_prime(p) || p < range_b {
            return Err(MachError::Format(format!(
                "modulus {p} is not a prime >= range {range_b}"
            )));
        }
        if a == 0 || a >= p || b >= p {
            return Err(MachError::Format(format!(
                "hash parameters a={a}, b={b} out of range for p={p}"
            )));
        }
        Ok(UniversalHash { a, b, p, range_b })
    }

    /// `((a*i + b) mod p) mod B`.
    #[inline]
    pub fn eval(&self, i: u64) -> u64 {
        let v = (self.a as u128 * i as u128 + self.b as u128) % self.p as u128;
        (v as u64) % self.range_b
    }

    pub fn multiplier(&self) -> u64 {
        self.a
    }

    pub fn offset(&self) -> u64 {
        self.b
    }

    pub fn modulus(&self) -> u64 {
        self.p
    }

    pub fn range(&self) -> u64 {
        self.range_b
    }

    /// True when no two ids in `[0, domain)` share a bucket.
    pub fn is_injective_on(&self, domain: u64) -> bool {
        if domain > self.range_b {
            return false;
        }
        let mut seen = vec![false; self.range_b as usize];
        for i in 0..domain {
            let bucket = self.eval(i) as usize;
            if seen[bucket] {
                return false;
            }
            seen[bucket] = true;
        }
        true
    }
}

/// Derive an independent sub-seed from a master seed and a stream index
/// (splitmix64 finalizer). Used for per-repetition hashes and rngs so that
/// parallel and serial schedules see identical randomness.
pub fn mix_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash each feature index into `[0, target_dim)`, summing values that
/// collide. Entries whose sum is exactly zero are dropped so the output
/// stays canonical.
pub fn feature_hash(x: &SparseVector, target_dim: usize, seed: u64) -> Result<SparseVector> {
    if target_dim < 1 {
        return Err(MachError::InvalidConfig(
            "feature hash target dimension must be positive".into(),
        ));
    }
    let mut acc: BTreeMap<u32, f64> = BTreeMap::new();
    for &(idx, val) in x.entries() {
        let out = (mix_seed(seed, idx as u64) % target_dim as u64) as u32;
        *acc.entry(out).or_insert(0.0) += val;
    }
    SparseVector::new(
        target_dim,
        acc.into_iter().filter(|&(_, v)| v != 0.0).collect(),
    )
}

fn mulmod(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

fn powmod(mut base: u64, mut exp: u64, m: u64) -> u64 {
    let mut acc = 1u64;
    base %= m;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mulmod(acc, base, m);
        }
        base = mulmod(base, base, m);
        exp >>= 1;
    }
    acc
}

/// Deterministic Miller-Rabin for u64.
pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    for &q in &[2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        if n == q {
            return true;
        }
        if n % q == 0 {
            return false;
        }
    }
    let mut d = n - 1;
    let mut s = 0u32;
    while d & 1 == 0 {
        d >>= 1;
        s += 1;
    }
    // witness set sufficient for all n < 2^64
    'witness: for &w in &[2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        let mut x = powmod(w, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mulmod(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

pub fn next_prime_at_least(n: u64) -> u64 {
    let mut c = n.max(2);
    loop {
        if is_prime(c) {
            return c;
        }
        c += 1;
    }
}
