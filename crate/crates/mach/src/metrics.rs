//! Matching and ranking metrics with weighted and unweighted aggregation.
//!
//! Relevance is binary throughout. Items missing from a ranking's tail are
//! treated as non-relevant.

use std::collections::BTreeSet;

use crate::error::{MachError, Result};

/// One evaluation query: the relevant (purchased) items, an optional
/// candidate restriction, and a session weight.
#[derive(Debug, Clone)]
pub struct EvalQuery {
    pub query_id: usize,
    /// Deduplicated, in input order; the first entry is the designated
    /// most-relevant item.
    pub relevant: Vec<u32>,
    pub candidates: Option<BTreeSet<u32>>,
    pub weight: f64,
}

impl EvalQuery {
    pub fn new(
        query_id: usize,
        relevant: Vec<u32>,
        candidates: Option<BTreeSet<u32>>,
        weight: f64,
    ) -> Result<Self> {
        if relevant.is_empty() {
            return Err(MachError::Validation(format!(
                "query {query_id}: relevant set is empty"
            )));
        }
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(MachError::Validation(format!(
                "query {query_id}: weight must be a finite non-negative number"
            )));
        }
        let mut seen = BTreeSet::new();
        let relevant: Vec<u32> = relevant.into_iter().filter(|&r| seen.insert(r)).collect();
        if let Some(c) = &candidates {
            if let Some(&missing) = relevant.iter().find(|r| !c.contains(r)) {
                return Err(MachError::Validation(format!(
                    "query {query_id}: relevant item {missing} not among candidates"
                )));
            }
        }
        Ok(EvalQuery {
            query_id,
            relevant,
            candidates,
            weight,
        })
    }

    pub fn most_relevant(&self) -> Option<u32> {
        self.relevant.first().copied()
    }

    fn relevant_set(&self) -> BTreeSet<u32> {
        self.relevant.iter().copied().collect()
    }
}

/// Predicted items in descending score order, no duplicates.
#[derive(Debug, Clone)]
pub struct RankedList(Vec<u32>);

impl RankedList {
    pub fn new(items: Vec<u32>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        if let Some(&d) = items.iter().find(|&&i| !seen.insert(i)) {
            return Err(MachError::Validation(format!(
                "ranked list contains duplicate item {d}"
            )));
        }
        Ok(RankedList(items))
    }

    pub fn items(&self) -> &[u32] {
        &self.0
    }
}

/// Normalizer for average precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MapNorm {
    /// min(k, |relevant|) — the standard IR convention (default).
    #[default]
    Standard,
    /// Divide every hit's P@i by k itself.
    LiteralK,
}

/// Log base used inside DCG. With binary relevance the nDCG ratio is the
/// same either way; the raw DCG differs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DcgLog {
    #[default]
    Base2,
    Natural,
}

pub fn recall_at_k(ranked: &RankedList, q: &EvalQuery, k: usize) -> f64 {
    let rel = q.relevant_set();
    let hits = ranked
        .items()
        .iter()
        .take(k)
        .filter(|i| rel.contains(i))
        .count();
    hits as f64 / rel.len() as f64
}

pub fn precision_at_k(ranked: &RankedList, q: &EvalQuery, k: usize) -> f64 {
    let rel = q.relevant_set();
    let hits = ranked
        .items()
        .iter()
        .take(k)
        .filter(|i| rel.contains(i))
        .count();
    hits as f64 / k as f64
}

/// Average precision at k for one query; the mean over queries is MAP.
pub fn average_precision_at_k(
    ranked: &RankedList,
    q: &EvalQuery,
    k: usize,
    norm: MapNorm,
) -> f64 {
    let rel = q.relevant_set();
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (pos, item) in ranked.items().iter().take(k).enumerate() {
        if rel.contains(item) {
            hits += 1;
            sum += hits as f64 / (pos + 1) as f64;
        }
    }
    let denom = match norm {
        MapNorm::Standard => k.min(rel.len()),
        MapNorm::LiteralK => k,
    };
    if denom == 0 {
        0.0
    } else {
        sum / denom as f64
    }
}

/// Reciprocal rank of the first relevant item within the top k, 0 if none.
/// With `most_relevant_only`, only the designated item counts as relevant.
pub fn mrr_at_k(
    ranked: &RankedList,
    q: &EvalQuery,
    k: usize,
    most_relevant_only: bool,
) -> Result<f64> {
    let rel: BTreeSet<u32> = if most_relevant_only {
        let top = q.most_relevant().ok_or_else(|| {
            MachError::InvalidArgument(format!(
                "query {}: most_relevant_only requires a designated item",
                q.query_id
            ))
        })?;
        BTreeSet::from([top])
    } else {
        q.relevant_set()
    };
    for (pos, item) in ranked.items().iter().take(k).enumerate() {
        if rel.contains(item) {
            return Ok(1.0 / (pos + 1) as f64);
        }
    }
    Ok(0.0)
}

pub fn ndcg_at_k(ranked: &RankedList, q: &EvalQuery, k: usize, log: DcgLog) -> f64 {
    let rel = q.relevant_set();
    let discount = |pos: usize| -> f64 {
        let x = (pos + 2) as f64; // rank is pos+1, discount log(rank+1)
        match log {
            DcgLog::Base2 => x.log2(),
            DcgLog::Natural => x.ln(),
        }
    };
    let dcg: f64 = ranked
        .items()
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, item)| rel.contains(item))
        .map(|(pos, _)| 1.0 / discount(pos))
        .sum();
    let ideal_hits = k.min(rel.len());
    let idcg: f64 = (0..ideal_hits).map(|pos| 1.0 / discount(pos)).sum();
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

/// Weighted mean (sum m_i w_i / sum w_i) or simple mean of per-query values.
pub fn aggregate(per_query: &[(f64, f64)], weighted: bool) -> Result<f64> {
    if per_query.is_empty() {
        return Err(MachError::InvalidArgument("nothing to aggregate".into()));
    }
    if weighted {
        let wsum: f64 = per_query.iter().map(|&(_, w)| w).sum();
        if wsum <= 0.0 {
            return Err(MachError::InvalidArgument(
                "weighted aggregation needs a positive total weight".into(),
            ));
        }
        Ok(per_query.iter().map(|&(m, w)| m * w).sum::<f64>() / wsum)
    } else {
        Ok(per_query.iter().map(|&(m, _)| m).sum::<f64>() / per_query.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(relevant: Vec<u32>) -> EvalQuery {
        EvalQuery::new(0, relevant, None, 1.0).unwrap()
    }

    fn rl(items: Vec<u32>) -> RankedList {
        RankedList::new(items).unwrap()
    }

    #[test]
    fn recall_examples() {
        let query = q(vec![10, 11]);
        assert_eq!(recall_at_k(&rl(vec![10, 3, 4]), &query, 3), 0.5);
        assert_eq!(recall_at_k(&rl(vec![11, 10, 4]), &query, 3), 1.0);
        assert_eq!(recall_at_k(&rl(vec![1, 2, 3]), &query, 3), 0.0);
    }

    #[test]
    fn precision_and_ap_examples() {
        let single = q(vec![5]);
        assert_eq!(precision_at_k(&rl(vec![5, 1]), &single, 1), 1.0);
        assert_eq!(
            average_precision_at_k(&rl(vec![5, 1]), &single, 1, MapNorm::Standard),
            1.0
        );
        // relevant at ranks 1 and 3, k=3
        let query = q(vec![7, 9]);
        let ap = average_precision_at_k(&rl(vec![7, 2, 9]), &query, 3, MapNorm::Standard);
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert!((ap - 0.8333333333).abs() < 1e-6);
        // literal-k variant divides by k instead
        let ap_k = average_precision_at_k(&rl(vec![7, 2, 9]), &query, 3, MapNorm::LiteralK);
        assert!((ap_k - (1.0 + 2.0 / 3.0) / 3.0).abs() < 1e-12);
        // no relevant in top k
        assert_eq!(
            average_precision_at_k(&rl(vec![1, 2, 3]), &query, 3, MapNorm::Standard),
            0.0
        );
    }

    #[test]
    fn mrr_examples() {
        let query = q(vec![9, 4]);
        assert_eq!(mrr_at_k(&rl(vec![1, 2, 9]), &query, 5, false).unwrap(), 1.0 / 3.0);
        assert_eq!(mrr_at_k(&rl(vec![1, 2, 3]), &query, 3, false).unwrap(), 0.0);
        // designated most-relevant item is the first listed (9)
        assert_eq!(mrr_at_k(&rl(vec![4, 9]), &query, 5, true).unwrap(), 0.5);
    }

    #[test]
    fn ndcg_examples() {
        let query = q(vec![1, 2, 3]);
        assert!((ndcg_at_k(&rl(vec![3, 1, 2]), &query, 3, DcgLog::Base2) - 1.0).abs() < 1e-12);
        let single = q(vec![8]);
        let v = ndcg_at_k(&rl(vec![0, 8]), &single, 5, DcgLog::Base2);
        assert!((v - 1.0 / 3f64.log2()).abs() < 1e-12);
        assert!((v - 0.6309297535).abs() < 1e-6);
        assert!((ndcg_at_k(&rl(vec![0, 8]), &single, 5, DcgLog::Natural) - v).abs() < 1e-12);
        assert_eq!(ndcg_at_k(&rl(vec![4, 5]), &single, 2, DcgLog::Base2), 0.0);
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate(&[(1.0, 3.0), (0.0, 1.0)], true).unwrap(), 0.75);
        assert_eq!(aggregate(&[(1.0, 3.0), (0.0, 1.0)], false).unwrap(), 0.5);
        let equal = [(0.2, 2.0), (0.8, 2.0)];
        assert!(
            (aggregate(&equal, true).unwrap() - aggregate(&equal, false).unwrap()).abs() < 1e-12
        );
        assert!(aggregate(&[], false).is_err());
        assert!(aggregate(&[(1.0, 0.0)], true).is_err());
    }

    #[test]
    fn zero_weight_queries_ignored_in_weighted_mean() {
        let v = aggregate(&[(1.0, 2.0), (0.0, 0.0)], true).unwrap();
        assert_eq!(v, 1.0);
        let u = aggregate(&[(1.0, 2.0), (0.0, 0.0)], false).unwrap();
        assert_eq!(u, 0.5);
    }

    #[test]
    fn query_validation() {
        assert!(EvalQuery::new(0, vec![], None, 1.0).is_err());
        assert!(EvalQuery::new(0, vec![1], None, -1.0).is_err());
        let cands: BTreeSet<u32> = [1, 2].into_iter().collect();
        assert!(EvalQuery::new(0, vec![3], Some(cands.clone()), 1.0).is_err());
        assert!(EvalQuery::new(0, vec![1], Some(cands), 1.0).is_ok());
        assert!(RankedList::new(vec![1, 2, 1]).is_err());
    }

    #[test]
    fn tail_permutation_invariance() {
        // permuting non-relevant items below the last relevant hit changes nothing
        let query = q(vec![2]);
        let a = rl(vec![5, 2, 7, 8, 9]);
        let b = rl(vec![5, 2, 9, 8, 7]);
        for k in 1..=5 {
            assert_eq!(recall_at_k(&a, &query, k), recall_at_k(&b, &query, k));
            assert_eq!(precision_at_k(&a, &query, k), precision_at_k(&b, &query, k));
            assert_eq!(
                average_precision_at_k(&a, &query, k, MapNorm::Standard),
                average_precision_at_k(&b, &query, k, MapNorm::Standard)
            );
            assert_eq!(
                mrr_at_k(&a, &query, k, false).unwrap(),
                mrr_at_k(&b, &query, k, false).unwrap()
            );
            assert_eq!(
                ndcg_at_k(&a, &query, k, DcgLog::Base2),
                ndcg_at_k(&b, &query, k, DcgLog::Base2)
            );
        }
    }

    #[test]
    fn moving_a_relevant_item_up_never_hurts() {
        let query = q(vec![6, 7]);
        // item 7 moves from rank 4 to rank 2
        let low = rl(vec![1, 2, 6, 7, 5]);
        let high = rl(vec![1, 7, 6, 2, 5]);
        for k in 1..=5 {
            assert!(recall_at_k(&high, &query, k) >= recall_at_k(&low, &query, k));
            assert!(precision_at_k(&high, &query, k) >= precision_at_k(&low, &query, k));
            assert!(
                average_precision_at_k(&high, &query, k, MapNorm::Standard)
                    >= average_precision_at_k(&low, &query, k, MapNorm::Standard)
            );
            assert!(
                mrr_at_k(&high, &query, k, false).unwrap()
                    >= mrr_at_k(&low, &query, k, false).unwrap()
            );
            assert!(
                ndcg_at_k(&high, &query, k, DcgLog::Base2)
                    >= ndcg_at_k(&low, &query, k, DcgLog::Base2)
            );
        }
    }
}
