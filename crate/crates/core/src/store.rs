//! Two-tier binarized index: build, persist, open.
//!
//! Tier 1 holds every document's pooled vectors, contiguous and resident in
//! memory, for the exhaustive prefetch scan. Tier 2 holds every row of every
//! document, addressed through an offset table and memory-mapped when the
//! index is opened from disk.
//!
//! On-disk layout (all integers little-endian):
//!
//! | file            | contents                                                   |
//! |-----------------|------------------------------------------------------------|
//! | `manifest.json` | [`IndexManifest`]                                          |
//! | `tier1.bin`     | pooled rows of doc 0, doc 1, … (`ceil(dim/8)` bytes each)   |
//! | `tier2.bin`     | per doc: `u32` row count, then the packed rows             |
//! | `offsets.bin`   | per doc: `u64` byte offset of its record in `tier2.bin`    |
//! | `docmap.tsv`    | `fragment_id<TAB>doc_id` per line, in doc id order         |

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::path::Path;

use memmap2::Mmap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compress::{binarize_matrix, pool_vectors, FullDoc, PooledDoc, DEFAULT_K};
use crate::error::{Error, Result};
use crate::model::{DocId, SegmentLabel, SegmentedSequence, DEFAULT_DIM};
use crate::scoring::{bytes_per_row, BitMatrix, BitRows};

pub const FORMAT_VERSION: u32 = 1;

/// Per-document cap on stored rows.
pub const DEFAULT_MAX_VECTORS: usize = 768;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TIER1_FILE: &str = "tier1.bin";
pub const TIER2_FILE: &str = "tier2.bin";
pub const OFFSETS_FILE: &str = "offsets.bin";
pub const DOCMAP_FILE: &str = "docmap.tsv";

const DATA_FILES: [&str; 4] = [TIER1_FILE, TIER2_FILE, OFFSETS_FILE, DOCMAP_FILE];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileChecksum {
    pub len: u64,
    pub crc32: u32,
}

impl FileChecksum {
    fn of(bytes: &[u8]) -> Self {
        Self {
            len: bytes.len() as u64,
            crc32: crc32fast::hash(bytes),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexManifest {
    pub format_version: u32,
    pub dim: usize,
    pub k: usize,
    pub max_vectors: usize,
    pub doc_count: usize,
    pub normalization_flag: bool,
    pub per_doc_pooled_counts: Vec<u32>,
    pub checksums: BTreeMap<String, FileChecksum>,
}

impl IndexManifest {
    /// Size of `tier1.bin` implied by the pooled counts.
    pub fn predicted_tier1_bytes(&self) -> u64 {
        let rows: u64 = self.per_doc_pooled_counts.iter().map(|&c| c as u64).sum();
        rows * bytes_per_row(self.dim) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuildConfig {
    pub dim: usize,
    pub k: usize,
    pub max_vectors: usize,
    /// L2-normalize document rows before compression.
    pub normalize: bool,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            dim: DEFAULT_DIM,
            k: DEFAULT_K,
            max_vectors: DEFAULT_MAX_VECTORS,
            normalize: true,
        }
    }
}

impl BuildConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidParameter("dim must be >= 1".into()));
        }
        if self.k == 0 {
            return Err(Error::InvalidParameter("k must be >= 1".into()));
        }
        if self.max_vectors < 2 {
            return Err(Error::InvalidParameter("max_vectors must be >= 2".into()));
        }
        Ok(())
    }
}

enum Tier2Bytes {
    Owned(Vec<u8>),
    Mapped(Mmap),
}

impl Tier2Bytes {
    fn as_slice(&self) -> &[u8] {
        match self {
            Tier2Bytes::Owned(v) => v,
            Tier2Bytes::Mapped(m) => m,
        }
    }
}

/// An immutable two-tier index. Safe to share across threads.
pub struct Index {
    manifest: IndexManifest,
    tier1: Vec<u8>,
    tier1_row_offsets: Vec<usize>,
    tier2: Tier2Bytes,
    tier2_offsets: Vec<u64>,
    doc_map: Vec<String>,
    by_fragment: HashMap<String, DocId>,
}

impl std::fmt::Debug for Index {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Index")
            .field("dim", &self.manifest.dim)
            .field("k", &self.manifest.k)
            .field("doc_count", &self.manifest.doc_count)
            .field("tier1_bytes", &self.tier1.len())
            .field("tier2_bytes", &self.tier2.as_slice().len())
            .finish()
    }
}

/// Drops rows from the end of the content run until `rows <= max_vectors`.
pub fn cap_vectors(doc: &SegmentedSequence, max_vectors: usize) -> Result<SegmentedSequence> {
    let excess = doc.rows().saturating_sub(max_vectors);
    if excess == 0 {
        return Ok(doc.clone());
    }
    let content = doc.count(SegmentLabel::DocContent);
    if content <= excess {
        return Err(Error::InvalidParameter(format!(
            "max_vectors {max_vectors} leaves no content rows in a {}-row document",
            doc.rows()
        )));
    }
    let keep_content = content - excess;
    let labels = doc.labels();
    let mut seen = 0;
    let keep: Vec<usize> = (0..labels.len())
        .filter(|&i| {
            if labels[i] != SegmentLabel::DocContent {
                return true;
            }
            seen += 1;
            seen <= keep_content
        })
        .collect();
    SegmentedSequence::new(
        doc.matrix().select_rows(keep.iter().copied()),
        keep.iter().map(|&i| labels[i]).collect(),
    )
}

struct Compressed {
    pooled: BitMatrix,
    full: BitMatrix,
}

fn compress_one(seq: &SegmentedSequence, cfg: &BuildConfig) -> Result<Compressed> {
    if seq.dim() != cfg.dim {
        return Err(Error::DimMismatch {
            expected: cfg.dim,
            actual: seq.dim(),
        });
    }
    crate::model::validate_sequence(seq)?;
    let seq = if cfg.normalize {
        seq.clone().normalize()?
    } else {
        seq.clone()
    };
    let seq = cap_vectors(&seq, cfg.max_vectors)?;
    let pooled = pool_vectors(&seq, cfg.k)?.binarize();
    Ok(Compressed {
        pooled,
        full: binarize_matrix(seq.matrix()),
    })
}

const BUILD_BATCH: usize = 1024;

impl Index {
    /// Builds an index in memory. Doc ids are assigned in input order.
    pub fn build<I>(docs: I, cfg: BuildConfig) -> Result<Index>
    where
        I: IntoIterator<Item = Result<(String, SegmentedSequence)>>,
    {
        cfg.validate()?;
        let bpr = bytes_per_row(cfg.dim);
        let mut tier1 = Vec::new();
        let mut tier1_row_offsets = vec![0usize];
        let mut tier2 = Vec::new();
        let mut tier2_offsets = Vec::new();
        let mut counts = Vec::new();
        let mut doc_map: Vec<String> = Vec::new();
        let mut by_fragment = HashMap::new();

        let mut iter = docs.into_iter();
        loop {
            let batch: Vec<(String, SegmentedSequence)> =
                iter.by_ref().take(BUILD_BATCH).collect::<Result<_>>()?;
            if batch.is_empty() {
                break;
            }
            let compressed: Vec<Result<Compressed>> =
                batch.par_iter().map(|(_, seq)| compress_one(seq, &cfg)).collect();
            for ((fragment_id, _), c) in batch.into_iter().zip(compressed) {
                let c = c.map_err(|e| match e {
                    Error::DimMismatch { .. } | Error::Io { .. } => e,
                    other => Error::InvalidParameter(format!("{fragment_id}: {other}")),
                })?;
                if fragment_id.is_empty() || fragment_id.contains(['\t', '\n', '\r']) {
                    return Err(Error::InvalidParameter(format!(
                        "fragment id {fragment_id:?} is empty or contains tab/newline"
                    )));
                }
                let id = DocId(doc_map.len() as u64);
                if by_fragment.insert(fragment_id.clone(), id).is_some() {
                    return Err(Error::InvalidParameter(format!(
                        "duplicate fragment id {fragment_id:?}"
                    )));
                }
                doc_map.push(fragment_id);

                counts.push(c.pooled.rows() as u32);
                tier1.extend_from_slice(c.pooled.as_bytes());
                tier1_row_offsets.push(tier1.len() / bpr);

                tier2_offsets.push(tier2.len() as u64);
                tier2.extend_from_slice(&(c.full.rows() as u32).to_le_bytes());
                tier2.extend_from_slice(c.full.as_bytes());
            }
        }
        if doc_map.is_empty() {
            return Err(Error::EmptyCorpus);
        }

        let offsets_bytes = encode_offsets(&tier2_offsets);
        let docmap_bytes = encode_docmap(&doc_map);
        let mut checksums = BTreeMap::new();
        checksums.insert(TIER1_FILE.to_string(), FileChecksum::of(&tier1));
        checksums.insert(TIER2_FILE.to_string(), FileChecksum::of(&tier2));
        checksums.insert(OFFSETS_FILE.to_string(), FileChecksum::of(&offsets_bytes));
        checksums.insert(DOCMAP_FILE.to_string(), FileChecksum::of(&docmap_bytes));

        let manifest = IndexManifest {
            format_version: FORMAT_VERSION,
            dim: cfg.dim,
            k: cfg.k,
            max_vectors: cfg.max_vectors,
            doc_count: doc_map.len(),
            normalization_flag: cfg.normalize,
            per_doc_pooled_counts: counts,
            checksums,
        };
        Ok(Index {
            manifest,
            tier1,
            tier1_row_offsets,
            tier2: Tier2Bytes::Owned(tier2),
            tier2_offsets,
            doc_map,
            by_fragment,
        })
    }

    /// Writes every index file into `dir`, manifest last.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let put = |name: &str, bytes: &[u8]| {
            let path = dir.join(name);
            fs::write(&path, bytes).map_err(|e| Error::io(path, e))
        };
        put(TIER1_FILE, &self.tier1)?;
        put(TIER2_FILE, self.tier2.as_slice())?;
        put(OFFSETS_FILE, &encode_offsets(&self.tier2_offsets))?;
        put(DOCMAP_FILE, &encode_docmap(&self.doc_map))?;
        let mut json = serde_json::to_vec_pretty(&self.manifest)
            .map_err(|e| Error::CorruptManifest(e.to_string()))?;
        json.push(b'\n');
        put(MANIFEST_FILE, &json)
    }

    /// Opens a persisted index, verifying checksums and structure.
    pub fn open(dir: &Path) -> Result<Index> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let raw = fs::read(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest = parse_manifest(&raw)?;

        let checksum_of = |name: &str| {
            manifest
                .checksums
                .get(name)
                .copied()
                .ok_or_else(|| Error::CorruptManifest(format!("no checksum for {name}")))
        };
        let verify = |name: &str, bytes: &[u8]| -> Result<()> {
            if FileChecksum::of(bytes) != checksum_of(name)? {
                return Err(Error::ChecksumMismatch {
                    file: name.to_string(),
                });
            }
            Ok(())
        };
        let read = |name: &str| -> Result<Vec<u8>> {
            let path = dir.join(name);
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            verify(name, &bytes)?;
            Ok(bytes)
        };

        let tier1 = read(TIER1_FILE)?;
        let offsets_raw = read(OFFSETS_FILE)?;
        let docmap_raw = read(DOCMAP_FILE)?;
        let tier2_path = dir.join(TIER2_FILE);
        let file = File::open(&tier2_path).map_err(|e| Error::io(&tier2_path, e))?;
        // SAFETY: index files are immutable once written; a concurrent writer
        // would be detected by the checksum below only at open time.
        let map = unsafe { Mmap::map(&file) }.map_err(|e| Error::io(&tier2_path, e))?;
        verify(TIER2_FILE, &map)?;

        let doc_map = decode_docmap(&docmap_raw)?;
        let tier2_offsets = decode_offsets(&offsets_raw)?;
        let by_fragment = doc_map
            .iter()
            .enumerate()
            .map(|(i, f)| (f.clone(), DocId(i as u64)))
            .collect();

        let bpr = bytes_per_row(manifest.dim);
        let mut tier1_row_offsets = Vec::with_capacity(manifest.doc_count + 1);
        tier1_row_offsets.push(0);
        for &c in &manifest.per_doc_pooled_counts {
            tier1_row_offsets.push(tier1_row_offsets.last().unwrap() + c as usize);
        }

        let index = Index {
            manifest,
            tier1,
            tier1_row_offsets,
            tier2: Tier2Bytes::Mapped(map),
            tier2_offsets,
            doc_map,
            by_fragment,
        };
        index.check_structure(bpr)?;
        Ok(index)
    }

    fn check_structure(&self, bpr: usize) -> Result<()> {
        let m = &self.manifest;
        let n = m.doc_count;
        let bad = |msg: String| Err(Error::CorruptManifest(msg));
        if n == 0 {
            return bad("doc_count is 0".into());
        }
        if m.per_doc_pooled_counts.len() != n
            || self.tier2_offsets.len() != n
            || self.doc_map.len() != n
            || self.by_fragment.len() != n
        {
            return bad(format!(
                "record counts disagree: doc_count {n}, pooled {}, offsets {}, docmap {}",
                m.per_doc_pooled_counts.len(),
                self.tier2_offsets.len(),
                self.doc_map.len()
            ));
        }
        if self.tier1.len() as u64 != m.predicted_tier1_bytes() {
            return bad(format!(
                "tier1 holds {} bytes, manifest predicts {}",
                self.tier1.len(),
                m.predicted_tier1_bytes()
            ));
        }
        let tier2 = self.tier2.as_slice();
        for (i, &off) in self.tier2_offsets.iter().enumerate() {
            let end = self
                .tier2_offsets
                .get(i + 1)
                .copied()
                .unwrap_or(tier2.len() as u64);
            if end < off + 4 || end > tier2.len() as u64 {
                return bad(format!("tier2 offset of doc {i} out of order"));
            }
            let off = off as usize;
            let rows = u32::from_le_bytes(tier2[off..off + 4].try_into().unwrap()) as usize;
            if rows == 0 || off + 4 + rows * bpr != end as usize {
                return bad(format!("tier2 record of doc {i} has inconsistent length"));
            }
        }
        Ok(())
    }

    /// Builds in memory, then persists to `dir`.
    pub fn build_to_dir<I>(docs: I, cfg: BuildConfig, dir: &Path) -> Result<Index>
    where
        I: IntoIterator<Item = Result<(String, SegmentedSequence)>>,
    {
        let index = Self::build(docs, cfg)?;
        index.write(dir)?;
        Ok(index)
    }

    pub fn manifest(&self) -> &IndexManifest {
        &self.manifest
    }

    pub fn dim(&self) -> usize {
        self.manifest.dim
    }

    pub fn k(&self) -> usize {
        self.manifest.k
    }

    pub fn doc_count(&self) -> usize {
        self.manifest.doc_count
    }

    pub fn tier1_bytes(&self) -> &[u8] {
        &self.tier1
    }

    pub fn tier2_bytes(&self) -> &[u8] {
        self.tier2.as_slice()
    }

    pub fn fragment_id(&self, doc: DocId) -> &str {
        &self.doc_map[doc.index()]
    }

    pub fn doc_id(&self, fragment_id: &str) -> Option<DocId> {
        self.by_fragment.get(fragment_id).copied()
    }

    /// Pooled (tier-1) rows of `doc`.
    pub fn pooled(&self, doc: DocId) -> BitRows<'_> {
        let bpr = bytes_per_row(self.dim());
        let i = doc.index();
        let (a, b) = (self.tier1_row_offsets[i], self.tier1_row_offsets[i + 1]);
        BitRows::new(self.dim(), &self.tier1[a * bpr..b * bpr])
    }

    /// Full (tier-2) rows of `doc`.
    pub fn full(&self, doc: DocId) -> BitRows<'_> {
        let bytes = self.tier2.as_slice();
        let off = self.tier2_offsets[doc.index()] as usize;
        let rows = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
        let start = off + 4;
        BitRows::new(
            self.dim(),
            &bytes[start..start + rows * bytes_per_row(self.dim())],
        )
    }

    pub fn pooled_doc(&self, doc: DocId) -> PooledDoc {
        PooledDoc {
            doc_id: doc,
            vectors: self.pooled(doc).to_owned(),
            k: self.k(),
        }
    }

    pub fn full_doc(&self, doc: DocId) -> FullDoc {
        FullDoc {
            doc_id: doc,
            vectors: self.full(doc).to_owned(),
        }
    }

    pub fn doc_ids(&self) -> impl ExactSizeIterator<Item = DocId> {
        (0..self.doc_count()).map(|i| DocId(i as u64))
    }
}

fn parse_manifest(raw: &[u8]) -> Result<IndexManifest> {
    let value: serde_json::Value =
        serde_json::from_slice(raw).map_err(|e| Error::CorruptManifest(e.to_string()))?;
    // Check the version before the schema so newer layouts report as such.
    match value.get("format_version").and_then(|v| v.as_u64()) {
        Some(v) if v > FORMAT_VERSION as u64 => {
            return Err(Error::VersionUnsupported {
                found: v.min(u32::MAX as u64) as u32,
                supported: FORMAT_VERSION,
            })
        }
        Some(v) if v == FORMAT_VERSION as u64 => {}
        other => {
            return Err(Error::CorruptManifest(format!(
                "bad format_version {other:?}"
            )))
        }
    }
    let manifest: IndexManifest =
        serde_json::from_value(value).map_err(|e| Error::CorruptManifest(e.to_string()))?;
    for name in DATA_FILES {
        if !manifest.checksums.contains_key(name) {
            return Err(Error::CorruptManifest(format!("no checksum for {name}")));
        }
    }
    if manifest.dim == 0 || manifest.k == 0 {
        return Err(Error::CorruptManifest("dim and k must be >= 1".into()));
    }
    Ok(manifest)
}

fn encode_offsets(offsets: &[u64]) -> Vec<u8> {
    offsets.iter().flat_map(|o| o.to_le_bytes()).collect()
}

fn decode_offsets(raw: &[u8]) -> Result<Vec<u64>> {
    if !raw.len().is_multiple_of(8) {
        return Err(Error::CorruptManifest("offsets.bin length not a multiple of 8".into()));
    }
    Ok(raw
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn encode_docmap(doc_map: &[String]) -> Vec<u8> {
    let mut out = String::new();
    for (i, f) in doc_map.iter().enumerate() {
        out.push_str(f);
        out.push('\t');
        out.push_str(&i.to_string());
        out.push('\n');
    }
    out.into_bytes()
}

fn decode_docmap(raw: &[u8]) -> Result<Vec<String>> {
    let text = std::str::from_utf8(raw)
        .map_err(|_| Error::CorruptManifest("docmap.tsv is not UTF-8".into()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let (frag, id) = line
            .split_once('\t')
            .ok_or_else(|| Error::CorruptManifest(format!("docmap line {} has no tab", i + 1)))?;
        if id.parse::<usize>().ok() != Some(i) {
            return Err(Error::CorruptManifest(format!(
                "docmap line {} maps to {id:?}, expected {i}",
                i + 1
            )));
        }
        out.push(frag.to_string());
    }
    Ok(out)
}
