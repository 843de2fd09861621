//! Query-side sequence bookkeeping around an external embedder.
//!
//! An image+text query is laid out as the image preamble and patches, then
//! the full text query (prefix, content, suffix), then the image suffix. The
//! prompt that image inputs normally carry is dropped. After embedding, only
//! the rows that came from the text query are kept for retrieval.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{SegmentLabel, SegmentedSequence, TokenMatrix};

/// Ordered `(label, token count)` plan of an embedder input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryLayout {
    pub segments: Vec<(SegmentLabel, usize)>,
}

impl QueryLayout {
    pub fn text(prefix: usize, content: usize, suffix: usize) -> Self {
        Self {
            segments: vec![
                (SegmentLabel::QueryPrefix, prefix),
                (SegmentLabel::QueryContent, content),
                (SegmentLabel::QuerySuffix, suffix),
            ],
        }
    }

    pub fn multimodal(
        image_prefix: usize,
        image_content: usize,
        query: &QueryLayout,
        image_suffix: usize,
    ) -> Self {
        let mut segments = vec![
            (SegmentLabel::ImagePrefix, image_prefix),
            (SegmentLabel::ImageContent, image_content),
        ];
        segments.extend(query.segments.iter().copied());
        segments.push((SegmentLabel::ImageSuffix, image_suffix));
        Self { segments }
    }

    pub fn total(&self) -> usize {
        self.segments.iter().map(|(_, n)| n).sum()
    }

    /// One label per token position.
    pub fn labels(&self) -> Vec<SegmentLabel> {
        self.segments
            .iter()
            .flat_map(|&(l, n)| std::iter::repeat_n(l, n))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryOrigin {
    TextOnly,
    MultimodalFiltered,
    /// Every row of a jointly embedded image+text query, unfiltered.
    MultimodalFull,
}

/// Full-precision query rows ready for search.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryEmbedding {
    matrix: TokenMatrix,
    origin: QueryOrigin,
}

impl QueryEmbedding {
    pub fn new(matrix: TokenMatrix, origin: QueryOrigin) -> Result<Self> {
        if matrix.is_empty() {
            return Err(Error::EmptyQuery);
        }
        Ok(Self { matrix, origin })
    }

    pub fn matrix(&self) -> &TokenMatrix {
        &self.matrix
    }

    pub fn origin(&self) -> QueryOrigin {
        self.origin
    }

    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }
}

fn require_run(seq: &SegmentedSequence, label: SegmentLabel) -> Result<()> {
    if seq.count(label) == 0 {
        return Err(Error::MissingSegment(format!("{label:?}")));
    }
    Ok(())
}

/// Replaces the image input's prompt run with the text query.
///
/// Works on any row payload: token placeholders before embedding or
/// embeddings after.
pub fn compose_multimodal_query(
    image_seq: &SegmentedSequence,
    query_seq: &SegmentedSequence,
) -> Result<SegmentedSequence> {
    use SegmentLabel::*;
    // The prefix, prompt and suffix runs may be empty; patches may not.
    require_run(image_seq, ImageContent)?;
    if query_seq.rows() == 0 {
        return Err(Error::MissingSegment("query".into()));
    }
    if let Some(l) = query_seq.labels().iter().find(|l| !l.is_query()) {
        return Err(Error::InvalidParameter(format!("query sequence carries {l:?}")));
    }
    if let Some(l) = image_seq
        .labels()
        .iter()
        .find(|l| !matches!(l, ImagePrefix | ImageContent | InstructionText | ImageSuffix))
    {
        return Err(Error::InvalidParameter(format!("image sequence carries {l:?}")));
    }
    let head = image_seq.filter(|l| matches!(l, ImagePrefix | ImageContent));
    let tail = image_seq.filter(|l| l == ImageSuffix);
    SegmentedSequence::concat(&[&head, query_seq, &tail])
}

/// Keeps only the rows that came from the text query, in order.
pub fn filter_query_embeddings(embedded: &SegmentedSequence) -> Result<QueryEmbedding> {
    let kept = embedded.filter(SegmentLabel::is_query);
    if kept.rows() == 0 {
        return Err(Error::NoQueryTokens);
    }
    QueryEmbedding::new(kept.into_parts().0, QueryOrigin::MultimodalFiltered)
}

/// Uses every row of an embedded text-only query.
pub fn compose_text_query(query_seq: &SegmentedSequence) -> Result<QueryEmbedding> {
    QueryEmbedding::new(query_seq.matrix().clone(), QueryOrigin::TextOnly)
}

/// Uses every row of an embedded image+text query, image rows included.
pub fn full_multimodal_query(embedded: &SegmentedSequence) -> Result<QueryEmbedding> {
    QueryEmbedding::new(embedded.matrix().clone(), QueryOrigin::MultimodalFull)
}
