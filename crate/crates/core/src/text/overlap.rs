use std::collections::HashSet;

use super::TokenSequence;

/// Raw and IDF-weighted count of distinct terms shared by two sequences.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OverlapFeatures {
    pub count: u32,
    pub idf_weighted: f64,
}

/// Smoothed inverse document frequency: `ln((N + 1) / (df + 1)) + 1`.
///
/// Strictly positive for every `df <= N`, including unseen terms.
pub fn smoothed_idf(n_docs: u64, df: u64) -> f64 {
    ((n_docs as f64 + 1.0) / (df as f64 + 1.0)).ln() + 1.0
}

/// Overlap over distinct terms, so duplicates never change the result.
pub fn overlap_features<F>(q: &TokenSequence, p: &TokenSequence, idf: F) -> OverlapFeatures
where
    F: Fn(&str) -> f64,
{
    let (small, large) = if q.len() <= p.len() { (q, p) } else { (p, q) };
    let large: HashSet<&str> = large.iter().collect();
    let shared: HashSet<&str> = small.iter().filter(|t| large.contains(t)).collect();
    // Sum in sorted order so the result does not depend on hash iteration.
    let mut shared: Vec<&str> = shared.into_iter().collect();
    shared.sort_unstable();
    OverlapFeatures {
        count: shared.len() as u32,
        idf_weighted: shared.iter().map(|t| idf(t)).sum(),
    }
}
