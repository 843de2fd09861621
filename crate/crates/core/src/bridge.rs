//! Wire format shared with an external embedding service.
//!
//! Requests are `{"kind": .., "text": .., "image_b64": ..}`; responses are
//! `{"dim": d, "rows": n, "labels": [codes], "data_b64": ..}` where the
//! payload is `n * d` little-endian f32 values, row-major.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{SegmentLabel, SegmentedSequence, TokenMatrix};
use crate::querying::{compose_text_query, filter_query_embeddings, QueryEmbedding};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedKind {
    DocumentImage,
    TextQuery,
    MultimodalQuery,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub kind: EmbedKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_b64: Option<String>,
}

impl EmbedRequest {
    pub fn document_image(image: &[u8]) -> Self {
        Self {
            kind: EmbedKind::DocumentImage,
            text: None,
            image_b64: Some(STANDARD.encode(image)),
        }
    }

    pub fn text_query(text: impl Into<String>) -> Self {
        Self {
            kind: EmbedKind::TextQuery,
            text: Some(text.into()),
            image_b64: None,
        }
    }

    pub fn multimodal_query(text: impl Into<String>, image: &[u8]) -> Self {
        Self {
            kind: EmbedKind::MultimodalQuery,
            text: Some(text.into()),
            image_b64: Some(STANDARD.encode(image)),
        }
    }

    /// Checks that the payloads required by `kind` are present.
    pub fn validate(&self) -> Result<()> {
        let has_text = self.text.as_deref().is_some_and(|t| !t.is_empty());
        let has_image = self.image_b64.is_some();
        let ok = match self.kind {
            EmbedKind::DocumentImage => has_image,
            EmbedKind::TextQuery => has_text,
            EmbedKind::MultimodalQuery => has_text && has_image,
        };
        if !ok {
            return Err(Error::InvalidParameter(format!("{:?} request missing payload", self.kind)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub dim: usize,
    pub rows: usize,
    pub labels: Vec<u8>,
    pub data_b64: String,
}

impl EmbedResponse {
    pub fn from_sequence(seq: &SegmentedSequence) -> Self {
        let mut data = Vec::with_capacity(seq.rows() * seq.dim() * 4);
        for v in seq.matrix().as_slice() {
            data.extend_from_slice(&v.to_le_bytes());
        }
        Self {
            dim: seq.dim(),
            rows: seq.rows(),
            labels: seq.labels().iter().map(|l| l.code()).collect(),
            data_b64: STANDARD.encode(data),
        }
    }

    pub fn from_json(json: &str) -> Result<Self> {
        serde_json::from_str(json).map_err(|e| Error::CorruptEmbeddings(e.to_string()))
    }

    /// Decodes the payload. Rows must already be unit length.
    pub fn into_sequence(&self, expected_dim: usize) -> Result<SegmentedSequence> {
        if self.dim != expected_dim {
            return Err(Error::DimMismatch {
                expected: expected_dim,
                actual: self.dim,
            });
        }
        if self.labels.len() != self.rows {
            return Err(Error::LengthMismatch {
                expected: self.rows,
                actual: self.labels.len(),
            });
        }
        let data = STANDARD
            .decode(&self.data_b64)
            .map_err(|e| Error::CorruptEmbeddings(e.to_string()))?;
        if data.len() != self.rows * self.dim * 4 {
            return Err(Error::CorruptEmbeddings(format!(
                "payload has {} bytes, expected {}",
                data.len(),
                self.rows * self.dim * 4
            )));
        }
        let values = data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let labels = self
            .labels
            .iter()
            .map(|&c| {
                SegmentLabel::from_code(c).ok_or_else(|| Error::CorruptEmbeddings(format!("label code {c}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let matrix = TokenMatrix::new(self.dim, values)?.assume_normalized()?;
        SegmentedSequence::new(matrix, labels)
    }
}

/// Anything that turns requests into labeled embeddings.
pub trait Embedder {
    fn embed(&self, request: &EmbedRequest) -> Result<SegmentedSequence>;
}

/// Retrieval query from an embedded query response: text queries use every
/// row, multimodal queries keep only the text rows.
pub fn query_from_response(kind: EmbedKind, seq: &SegmentedSequence) -> Result<QueryEmbedding> {
    match kind {
        EmbedKind::TextQuery => compose_text_query(seq),
        EmbedKind::MultimodalQuery => filter_query_embeddings(seq),
        EmbedKind::DocumentImage => Err(Error::InvalidParameter("document embedding is not a query".into())),
    }
}
