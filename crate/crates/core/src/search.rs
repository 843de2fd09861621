//! Two-stage retrieval over an [`Index`].
//!
//! Stage 1 binarizes the query and scans every document's pooled vectors
//! with the popcount kernel, keeping `n1 * oversample` candidates. Stage 2
//! rescores those candidates against their full binarized rows with the
//! full-precision query and returns the best `n2`. Score ties are broken
//! by ascending doc id at both stages.

use std::cmp::Ordering;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::compress::binarize_matrix;
use crate::error::{Error, Result};
use crate::model::{DocId, SegmentedSequence};
use crate::querying::{compose_text_query, filter_query_embeddings, QueryEmbedding};
use crate::scoring::{binary_sym_unchecked, AsymQuery};
use crate::store::Index;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchParams {
    /// Prefetch size before oversampling.
    pub n1: usize,
    /// Number of results returned.
    pub n2: usize,
    /// Stage 1 keeps `n1 * oversample` candidates.
    pub oversample: usize,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self {
            n1: 100,
            n2: 5,
            oversample: 2,
        }
    }
}

impl SearchParams {
    pub fn validate(&self) -> Result<()> {
        if self.n2 == 0 {
            return Err(Error::InvalidParameter("n2 must be >= 1".into()));
        }
        if self.n2 > self.n1 {
            return Err(Error::InvalidParameter(format!(
                "n2 ({}) must not exceed n1 ({})",
                self.n2, self.n1
            )));
        }
        if self.oversample == 0 {
            return Err(Error::InvalidParameter("oversample must be >= 1".into()));
        }
        Ok(())
    }

    pub fn prefetch(&self) -> usize {
        self.n1.saturating_mul(self.oversample)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub doc_id: DocId,
    pub fragment_id: String,
    pub score: f64,
}

/// Wall-clock timings in microseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timings {
    pub stage1_us: u64,
    pub stage2_us: u64,
    pub total_us: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub hits: Vec<Hit>,
    pub timings: Timings,
    /// Stage-1 candidates, best first. Empty for one-stage search.
    #[serde(skip)]
    pub candidates: Vec<DocId>,
}

impl SearchResult {
    pub fn fragment_ids(&self) -> impl Iterator<Item = &str> {
        self.hits.iter().map(|h| h.fragment_id.as_str())
    }
}

fn check_query(index: &Index, query: &QueryEmbedding) -> Result<()> {
    if query.dim() != index.dim() {
        return Err(Error::DimMismatch {
            expected: index.dim(),
            actual: query.dim(),
        });
    }
    if index.doc_count() == 0 {
        return Err(Error::EmptyIndex);
    }
    Ok(())
}

/// Keeps the `k` best `(score, doc)` pairs: score descending, id ascending.
fn top_k<S, F>(mut scored: Vec<(S, DocId)>, k: usize, cmp: F) -> Vec<(S, DocId)>
where
    F: Fn(&S, &S) -> Ordering,
{
    let order = |a: &(S, DocId), b: &(S, DocId)| cmp(&b.0, &a.0).then(a.1.cmp(&b.1));
    if k == 0 {
        return Vec::new();
    }
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, order);
        scored.truncate(k);
    }
    scored.sort_unstable_by(order);
    scored
}

fn micros(start: Instant) -> u64 {
    start.elapsed().as_micros() as u64
}

fn rerank(index: &Index, query: &QueryEmbedding, docs: &[DocId], n2: usize) -> Vec<Hit> {
    let compiled = AsymQuery::new(query.matrix());
    let scored: Vec<(f64, DocId)> = docs
        .iter()
        .map(|&d| (compiled.score_unchecked(index.full(d)), d))
        .collect();
    top_k(scored, n2, f64::total_cmp)
        .into_iter()
        .map(|(score, doc_id)| Hit {
            doc_id,
            fragment_id: index.fragment_id(doc_id).to_string(),
            score,
        })
        .collect()
}

/// Pooled binarized prefetch followed by full-representation rerank.
pub fn search_two_stage(
    index: &Index,
    query: &QueryEmbedding,
    params: &SearchParams,
) -> Result<SearchResult> {
    params.validate()?;
    check_query(index, query)?;
    let start = Instant::now();

    let qbits = binarize_matrix(query.matrix());
    let scored: Vec<(i64, DocId)> = index
        .doc_ids()
        .map(|d| (binary_sym_unchecked(qbits.view(), index.pooled(d)), d))
        .collect();
    let candidates: Vec<DocId> = top_k(scored, params.prefetch(), i64::cmp)
        .into_iter()
        .map(|(_, d)| d)
        .collect();
    let stage1_us = micros(start);

    let t2 = Instant::now();
    let hits = rerank(index, query, &candidates, params.n2);
    let stage2_us = micros(t2);

    Ok(SearchResult {
        hits,
        timings: Timings {
            stage1_us,
            stage2_us,
            total_us: micros(start),
        },
        candidates,
    })
}

/// Exhaustive rescoring of every document's full rows.
pub fn search_one_stage(index: &Index, query: &QueryEmbedding, n2: usize) -> Result<SearchResult> {
    if n2 == 0 {
        return Err(Error::InvalidParameter("n2 must be >= 1".into()));
    }
    check_query(index, query)?;
    let start = Instant::now();
    let all: Vec<DocId> = index.doc_ids().collect();
    let hits = rerank(index, query, &all, n2);
    let elapsed = micros(start);
    Ok(SearchResult {
        hits,
        timings: Timings {
            stage1_us: 0,
            stage2_us: elapsed,
            total_us: elapsed,
        },
        candidates: Vec::new(),
    })
}

pub const SEARCH_TOOL_NAME: &str = "search_knowledge_base";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolArguments {
    pub query: String,
    pub use_image: bool,
}

/// Retriever function call as emitted by the generation model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: String,
    pub arguments: ToolArguments,
}

impl ToolCall {
    pub fn parse(json: &str) -> Result<Self> {
        let call: ToolCall =
            serde_json::from_str(json).map_err(|e| Error::MalformedToolCall(e.to_string()))?;
        if call.name != SEARCH_TOOL_NAME {
            return Err(Error::UnknownTool(call.name));
        }
        Ok(call)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("tool call serializes")
    }
}

/// A tool call plus the embeddings the caller computed for it.
#[derive(Debug, Clone)]
pub struct ToolRequest {
    pub call: ToolCall,
    /// Embedded text-only query.
    pub text_embedding: Option<SegmentedSequence>,
    /// Jointly embedded image+text query.
    pub multimodal_embedding: Option<SegmentedSequence>,
}

/// Dispatches a retriever call to the filtered multimodal or text-only path.
pub fn tool_search(
    request: &ToolRequest,
    index: &Index,
    params: &SearchParams,
) -> Result<SearchResult> {
    if request.call.name != SEARCH_TOOL_NAME {
        return Err(Error::UnknownTool(request.call.name.clone()));
    }
    let query = if request.call.arguments.use_image {
        let seq = request
            .multimodal_embedding
            .as_ref()
            .ok_or_else(|| Error::MissingEmbedding("multimodal query".into()))?;
        filter_query_embeddings(seq)?
    } else {
        let seq = request
            .text_embedding
            .as_ref()
            .ok_or_else(|| Error::MissingEmbedding("text query".into()))?;
        compose_text_query(seq)?
    };
    search_two_stage(index, &query, params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_params() {
        let p = SearchParams::default();
        assert_eq!((p.n1, p.n2, p.oversample), (100, 5, 2));
        assert_eq!(p.prefetch(), 200);
        assert!(p.validate().is_ok());
    }

    #[test]
    fn invalid_params() {
        let bad = [
            SearchParams { n1: 3, n2: 5, oversample: 1 },
            SearchParams { n1: 10, n2: 5, oversample: 0 },
            SearchParams { n1: 10, n2: 0, oversample: 1 },
        ];
        for p in bad {
            assert!(p.validate().is_err(), "{p:?}");
        }
    }

    #[test]
    fn top_k_breaks_ties_by_doc_id() {
        let scored = vec![(1, DocId(3)), (5, DocId(2)), (1, DocId(0)), (5, DocId(9)), (0, DocId(1))];
        let top = top_k(scored, 3, i64::cmp);
        assert_eq!(top, vec![(5, DocId(2)), (5, DocId(9)), (1, DocId(0))]);
    }

    #[test]
    fn tool_call_wire_format() {
        let json = r#"{"name":"search_knowledge_base","arguments":{"query":"who is the man","use_image":true}}"#;
        let call = ToolCall::parse(json).unwrap();
        assert!(call.arguments.use_image);
        assert_eq!(call.to_json(), json);
        assert!(matches!(
            ToolCall::parse(r#"{"name":"other","arguments":{"query":"x","use_image":false}}"#),
            Err(Error::UnknownTool(_))
        ));
        assert!(matches!(
            ToolCall::parse(r#"{"name":"search_knowledge_base","arguments":{"query":"x"}}"#),
            Err(Error::MalformedToolCall(_))
        ));
    }
}
