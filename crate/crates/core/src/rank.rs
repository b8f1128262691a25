//! Cosine-similarity ranking of candidates in a shared embedding space.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, RankError> {
        if values.is_empty() {
            return Err(RankError::EmptyVector);
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn norm(&self) -> f64 {
        libm::sqrt(self.values.iter().map(|v| v * v).sum())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RankError {
    #[error("embedding vectors must have at least one dimension")]
    EmptyVector,
    #[error("candidate `{id}` has dimension {found}, expected {expected}")]
    DimensionMismatch { id: String, expected: usize, found: usize },
    #[error("vector `{0}` has zero norm")]
    ZeroNormVector(String),
}

/// Identifier reported for the query vector in errors.
pub const QUERY_ID: &str = "<query>";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranked {
    pub id: String,
    pub score: f64,
}

/// Ranks `candidates` by cosine similarity to `query`, highest first, ties
/// broken by ascending id, keeping at most `k`.
pub fn rank_candidates(
    query: &EmbeddingVector,
    candidates: &[(String, EmbeddingVector)],
    k: usize,
) -> Result<Vec<Ranked>, RankError> {
    let qn = query.norm();
    if qn == 0.0 {
        return Err(RankError::ZeroNormVector(QUERY_ID.into()));
    }
    let mut scored = Vec::with_capacity(candidates.len());
    for (id, v) in candidates {
        if v.dim() != query.dim() {
            return Err(RankError::DimensionMismatch { id: id.clone(), expected: query.dim(), found: v.dim() });
        }
        let n = v.norm();
        if n == 0.0 {
            return Err(RankError::ZeroNormVector(id.clone()));
        }
        let dot: f64 = query.values.iter().zip(&v.values).map(|(a, b)| a * b).sum();
        // Adding +0.0 turns -0.0 into +0.0, so orthogonal candidates tie
        // under total_cmp and fall back to id order.
        let score = (dot / (qn * n)).clamp(-1.0, 1.0) + 0.0;
        scored.push(Ranked { id: id.clone(), score });
    }
    scored.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
    scored.truncate(k);
    Ok(scored)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn v(x: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn signed_zero_scores_tie() {
        // [0,-1] scores -0.0 and [0,1] scores +0.0 before normalization
        let q = v(&[-1.0, 0.0]);
        let cands = vec![("b".to_string(), v(&[0.0, 1.0])), ("a".to_string(), v(&[0.0, -1.0]))];
        let ids: Vec<_> = rank_candidates(&q, &cands, 2).unwrap().into_iter().map(|r| r.id).collect();
        assert_eq!(ids, ["a", "b"]);
    }

    #[test]
    fn identical_and_orthogonal() {
        let q = v(&[1.0, 2.0, 3.0]);
        let cands = vec![("same".to_string(), v(&[1.0, 2.0, 3.0])), ("orth".to_string(), v(&[3.0, 0.0, -1.0]))];
        let r = rank_candidates(&q, &cands, 10).unwrap();
        assert_eq!(r[0].id, "same");
        assert!((r[0].score - 1.0).abs() < 1e-12);
        assert_eq!(r[1].score, 0.0);
    }

    #[test]
    fn ties_by_id_and_truncation() {
        let q = v(&[1.0, 0.0]);
        let cands = vec![
            ("b".to_string(), v(&[2.0, 0.0])),
            ("a".to_string(), v(&[1.0, 0.0])),
            ("c".to_string(), v(&[0.0, 1.0])),
        ];
        let r = rank_candidates(&q, &cands, 2).unwrap();
        let ids: Vec<_> = r.iter().map(|x| x.id.as_str()).collect();
        assert_eq!(ids, ["a", "b"]);
    }

    #[test]
    fn errors() {
        let q = v(&[1.0, 0.0]);
        let bad = vec![("x".to_string(), v(&[1.0, 0.0, 0.0]))];
        assert!(matches!(rank_candidates(&q, &bad, 1), Err(RankError::DimensionMismatch { .. })));
        let zero = vec![("z".to_string(), v(&[0.0, 0.0]))];
        assert_eq!(rank_candidates(&q, &zero, 1), Err(RankError::ZeroNormVector("z".into())));
        assert_eq!(rank_candidates(&v(&[0.0, 0.0]), &[], 1), Err(RankError::ZeroNormVector(QUERY_ID.into())));
        assert_eq!(EmbeddingVector::new(vec![]), Err(RankError::EmptyVector));
    }
}
