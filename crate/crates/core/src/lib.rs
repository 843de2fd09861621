//! Late-interaction retrieval over multimodal knowledge fragments.
//!
//! Documents and queries are matrices of unit-length token embeddings,
//! scored with MaxSim. The index keeps two binarized tiers per document: a
//! small pooled set used to prefetch candidates and the full set used to
//! rerank them.

pub mod bridge;
pub mod compress;
pub mod corpus;
pub mod embfile;
pub mod error;
pub mod eval;
pub mod fixtures;
pub mod licn;
pub mod model;
pub mod querying;
pub mod scoring;
pub mod search;
pub mod store;

pub use error::{Error, Result};
pub use model::{DocId, Fragment, SegmentLabel, SegmentedSequence, TokenMatrix};
pub use querying::QueryEmbedding;
pub use search::{search_one_stage, search_two_stage, SearchParams, SearchResult};
pub use store::{BuildConfig, Index};
