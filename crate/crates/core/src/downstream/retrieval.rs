use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, CoreError, Result};
use crate::spectral::{signature_distance, Signature};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub shape_id: usize,
    pub identity: usize,
    pub signature: Signature,
}

/// Brute-force nearest-neighbour index over spectral signatures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalIndex {
    pub entries: Vec<IndexEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ranked {
    pub shape_id: usize,
    pub distance: f64,
}

pub fn index_build(entries: Vec<IndexEntry>) -> Result<RetrievalIndex> {
    let Some(first) = entries.first() else { return Err(CoreError::EmptyIndex) };
    let len = first.signature.values.len();
    let mut ids = BTreeSet::new();
    for e in &entries {
        if e.signature.values.len() != len {
            return Err(CoreError::LengthMismatch { expected: len, got: e.signature.values.len() });
        }
        if !ids.insert(e.shape_id) {
            return Err(invalid(format!("duplicate shape id {}", e.shape_id)));
        }
    }
    Ok(RetrievalIndex { entries })
}

/// The `top` nearest shapes by Euclidean distance, ties to the lower id.
pub fn query_topk(index: &RetrievalIndex, sig: &Signature, top: usize) -> Result<Vec<Ranked>> {
    if index.entries.is_empty() {
        return Err(CoreError::EmptyIndex);
    }
    let mut ranked = index
        .entries
        .iter()
        .map(|e| Ok(Ranked { shape_id: e.shape_id, distance: signature_distance(&e.signature, sig)? }))
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.shape_id.cmp(&b.shape_id)));
    ranked.truncate(top);
    Ok(ranked)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HitRate {
    pub k: usize,
    pub rate: f64,
}

/// Fraction of queries whose top-`k` contains a shape of the query's
/// identity, for each `k` in `ks`.
pub fn eval_retrieval(index: &RetrievalIndex, queries: &[(usize, Signature)], ks: &[usize]) -> Result<Vec<HitRate>> {
    if queries.is_empty() {
        return Err(invalid("no queries"));
    }
    let identity = |id: usize| index.entries.iter().find(|e| e.shape_id == id).map(|e| e.identity);
    let max_k = ks.iter().copied().max().unwrap_or(0);
    let mut hits = vec![0usize; ks.len()];
    for (who, sig) in queries {
        let ranked = query_topk(index, sig, max_k)?;
        let first_hit = ranked.iter().position(|r| identity(r.shape_id) == Some(*who));
        for (h, &k) in hits.iter_mut().zip(ks) {
            *h += first_hit.is_some_and(|p| p < k) as usize;
        }
    }
    Ok(ks.iter().zip(hits).map(|(&k, h)| HitRate { k, rate: h as f64 / queries.len() as f64 }).collect())
}
