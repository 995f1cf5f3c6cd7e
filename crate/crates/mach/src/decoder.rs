//! Aggregation of the R meta-probability vectors into per-class scores.
//!
//! For class i, repetition j contributes the probability of bucket h_j(i).
//! The unbiased estimator rescales the mean contribution by B/(B-1) and
//! subtracts the 1/B collision floor; min and median are the usual sketch
//! estimators.

use crate::data::SparseVector;
use crate::error::{MachError, Result};
use crate::model::MachModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    Unbiased,
    Min,
    Median,
}

impl std::str::FromStr for Estimator {
    type Err = MachError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unbiased" => Ok(Estimator::Unbiased),
            "min" => Ok(Estimator::Min),
            "median" => Ok(Estimator::Median),
            other => Err(MachError::InvalidArgument(format!(
                "unknown estimator '{other}', expected unbiased, min, or median"
            ))),
        }
    }
}

/// All R meta-probability vectors for one input: RBd multiplications total.
pub fn meta_probabilities(model: &MachModel, x: &SparseVector) -> Result<Vec<Vec<f64>>> {
    (0..model.config().reps as usize)
        .map(|j| model.meta_predict(j, x))
        .collect()
}

/// Per-class gathered values: row i holds the R bucket probabilities that
/// class i hashes to. KR lookups on top of the meta pass.
pub fn gather(model: &MachModel, x: &SparseVector) -> Result<Vec<Vec<f64>>> {
    let meta = meta_probabilities(model, x)?;
    let k = model.config().num_classes;
    Ok((0..k)
        .map(|i| {
            model
                .hashes()
                .iter()
                .zip(&meta)
                .map(|(h, probs)| probs[h.eval(i) as usize])
                .collect()
        })
        .collect())
}

/// Collapse one class's R gathered values into a score.
pub fn decode(gathered: &[f64], buckets: u64, estimator: Estimator) -> Result<f64> {
    if gathered.is_empty() {
        return Err(MachError::InvalidArgument("no gathered values to decode".into()));
    }
    match estimator {
        Estimator::Unbiased => {
            if buckets < 2 {
                return Err(MachError::InvalidConfig(
                    "unbiased decode requires at least 2 buckets".into(),
                ));
            }
            let b = buckets as f64;
            let mean = gathered.iter().sum::<f64>() / gathered.len() as f64;
            Ok(b / (b - 1.0) * (mean - 1.0 / b))
        }
        Estimator::Min => Ok(gathered.iter().cloned().fold(f64::INFINITY, f64::min)),
        Estimator::Median => {
            let mut v = gathered.to_vec();
            v.sort_by(f64::total_cmp);
            let n = v.len();
            if n % 2 == 1 {
                Ok(v[n / 2])
            } else {
                Ok((v[n / 2 - 1] + v[n / 2]) / 2.0)
            }
        }
    }
}

/// Decoded score for every class.
pub fn score_all(model: &MachModel, x: &SparseVector, estimator: Estimator) -> Result<Vec<f64>> {
    let meta = meta_probabilities(model, x)?;
    let buckets = model.config().buckets;
    let mut gathered = vec![0.0; model.config().reps as usize];
    (0..model.config().num_classes)
        .map(|i| {
            for ((g, h), probs) in gathered.iter_mut().zip(model.hashes()).zip(&meta) {
                *g = probs[h.eval(i) as usize];
            }
            decode(&gathered, buckets, estimator)
        })
        .collect()
}

/// k highest-scoring classes, descending; ties broken by ascending class id.
pub fn top_k(scores: &[f64], k: usize) -> Result<Vec<(u32, f64)>> {
    if k < 1 || k > scores.len() {
        return Err(MachError::InvalidArgument(format!(
            "k must be in [1, {}], got {k}",
            scores.len()
        )));
    }
    let mut idx: Vec<u32> = (0..scores.len() as u32).collect();
    idx.sort_by(|&a, &b| {
        scores[b as usize]
            .total_cmp(&scores[a as usize])
            .then(a.cmp(&b))
    });
    Ok(idx[..k]
        .iter()
        .map(|&i| (i, scores[i as usize]))
        .collect())
}

pub fn predict_class(
    model: &MachModel,
    x: &SparseVector,
    estimator: Estimator,
) -> Result<u32> {
    let scores = score_all(model, x, estimator)?;
    Ok(top_k(&scores, 1)?[0].0)
}
