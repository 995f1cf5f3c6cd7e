//! Capacity planning: collision probabilities, repetitions needed for a
//! distinguishability target, and the memory/compute cost model.

use crate::error::{MachError, Result};

/// Probability that two fixed classes share a bucket under all R hashes:
/// (1/B)^R.
pub fn pair_indistinguishable_prob(buckets: u64, reps: u32) -> Result<f64> {
    if buckets < 2 {
        return Err(MachError::InvalidConfig(format!(
            "buckets must be at least 2, got {buckets}"
        )));
    }
    if reps < 1 {
        return Err(MachError::InvalidConfig("reps must be at least 1".into()));
    }
    Ok((1.0 / buckets as f64).powi(reps as i32))
}

/// Union bound on any indistinguishable pair existing among K classes:
/// min(1, K^2 (1/B)^R).
pub fn any_pair_bound(classes: u64, buckets: u64, reps: u32) -> Result<f64> {
    if classes < 2 {
        return Err(MachError::InvalidConfig(format!(
            "need at least 2 classes, got {classes}"
        )));
    }
    let per_pair = pair_indistinguishable_prob(buckets, reps)?;
    Ok((classes as f64 * classes as f64 * per_pair).min(1.0))
}

/// Smallest R with K^2 (1/B)^R <= delta: ceil(2 ln(K/sqrt(delta)) / ln B).
/// The ceiling keeps the guarantee direction; a relative tolerance absorbs
/// float noise when the formula lands exactly on an integer.
pub fn required_r(classes: u64, buckets: u64, delta: f64) -> Result<u32> {
    if classes < 2 || buckets < 2 {
        return Err(MachError::InvalidConfig(format!(
            "need classes >= 2 and buckets >= 2, got {classes} and {buckets}"
        )));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(MachError::InvalidArgument(format!(
            "delta must be in (0, 1), got {delta}"
        )));
    }
    let raw = 2.0 * (classes as f64 / delta.sqrt()).ln() / (buckets as f64).ln();
    let mut r = (raw - 1e-9).ceil().max(1.0) as u32;
    while any_pair_bound(classes, buckets, r)? > delta * (1.0 + 1e-12) {
        r += 1;
    }
    Ok(r)
}

/// Memory and inference-cost accounting for one MACH configuration,
/// 4 bytes per parameter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostReport {
    pub parameters: u64,
    pub inference_multiplications: u64,
    pub model_bytes: u64,
}

pub fn cost_model(
    classes: u64,
    buckets: u64,
    reps: u64,
    input_dim: u64,
    hidden_units: u64,
) -> CostReport {
    let (per_rep_params, per_rep_mults) = if hidden_units == 0 {
        (input_dim * buckets + buckets, input_dim * buckets)
    } else {
        (
            input_dim * hidden_units
                + hidden_units
                + hidden_units * buckets
                + buckets,
            input_dim * hidden_units + hidden_units * buckets,
        )
    };
    let parameters = reps * per_rep_params;
    CostReport {
        parameters,
        inference_multiplications: reps * per_rep_mults + classes * reps,
        model_bytes: parameters * 4,
    }
}

/// Last-layer parameter ratio K/(B*R), the convention the paper's reduction
/// figures use.
pub fn reduction_ratio(classes: u64, buckets: u64, reps: u64) -> f64 {
    classes as f64 / (buckets as f64 * reps as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hashing::{mix_seed, UniversalHash};

    #[test]
    fn pair_prob_values() {
        assert_eq!(pair_indistinguishable_prob(2, 1).unwrap(), 0.5);
        assert!((pair_indistinguishable_prob(10, 3).unwrap() - 1e-3).abs() < 1e-15);
        assert!(pair_indistinguishable_prob(1, 1).is_err());
    }

    #[test]
    fn any_pair_values() {
        assert!((any_pair_bound(2, 2, 10).unwrap() - 4.0 / 1024.0).abs() < 1e-15);
        assert_eq!(any_pair_bound(10, 10, 1).unwrap(), 1.0);
    }

    #[test]
    fn required_r_values() {
        assert_eq!(required_r(100, 10, 0.01).unwrap(), 6);
        // 2 ln(4/sqrt(0.99)) / ln 4 = 2.007..., so 3 repetitions are needed
        // for the bound 16 (1/4)^R <= 0.99 to actually hold
        assert_eq!(required_r(4, 4, 0.99).unwrap(), 3);
        assert!(any_pair_bound(4, 4, 3).unwrap() <= 0.99);
        assert!(required_r(100, 10, 1.5).is_err());
        assert!(required_r(100, 10, 0.0).is_err());
    }

    #[test]
    fn required_r_postcondition_random_grid() {
        let mut seed = 42u64;
        for t in 0..100u64 {
            seed = mix_seed(seed, t);
            let k = 2 + seed % 100_000;
            let b = 2 + mix_seed(seed, 1) % 1000;
            let delta = (1 + mix_seed(seed, 2) % 998) as f64 / 1000.0;
            let r = required_r(k, b, delta).unwrap();
            assert!(
                any_pair_bound(k, b, r).unwrap() <= delta,
                "k={k} b={b} delta={delta} r={r}"
            );
        }
    }

    #[test]
    fn required_r_monotone() {
        for &k in &[100u64, 5000] {
            let mut prev = u32::MAX;
            for &b in &[2u64, 4, 8, 16, 64, 256] {
                let r = required_r(k, b, 0.05).unwrap();
                assert!(r <= prev, "r not non-increasing in b");
                prev = r;
            }
            let mut prev = u32::MAX;
            for &d in &[0.001, 0.01, 0.1, 0.5, 0.9] {
                let r = required_r(k, 16, d).unwrap();
                assert!(r <= prev, "r not non-increasing in delta");
                prev = r;
            }
        }
    }

    #[test]
    fn empirical_pair_rate_matches_bound() {
        // K=100 classes, b=4, r=5: fraction of hash draws where classes 0
        // and 1 collide in all rows approaches (1/4)^5
        let trials = 10_000u64;
        let mut collisions = 0u64;
        for t in 0..trials {
            let all = (0..5u64).all(|j| {
                let h = UniversalHash::sample(mix_seed(t, j), 4, 100).unwrap();
                h.eval(0) == h.eval(1)
            });
            if all {
                collisions += 1;
            }
        }
        let p = pair_indistinguishable_prob(4, 5).unwrap();
        let sigma = (p * (1.0 - p) / trials as f64).sqrt();
        let rate = collisions as f64 / trials as f64;
        assert!((rate - p).abs() <= 3.0 * sigma, "rate {rate} vs p {p}");
    }

    #[test]
    fn cost_model_shapes() {
        // r=1, b=k reduces to the vanilla cost plus lookups
        let c = cost_model(100, 100, 1, 50, 0);
        assert_eq!(c.inference_multiplications, 100 * 50 + 100);
        assert_eq!(c.parameters, 50 * 100 + 100);
        assert_eq!(c.model_bytes, c.parameters * 4);
        // ODP-shaped linear config: last-layer reduction on the order of 131x
        let ratio = reduction_ratio(105_033, 32, 25);
        assert!(ratio > 125.0 && ratio < 135.0);
        let c = cost_model(105_033, 32, 25, 422_713, 0);
        let vanilla = 422_713u64 * 105_033 + 105_033;
        let full_ratio = vanilla as f64 / c.parameters as f64;
        assert!((full_ratio - 131.29).abs() < 1.0);
    }
}
