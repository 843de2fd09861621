//! Domain types shared by every stage of the engine.
//!
//! A [`TokenMatrix`] is the multi-vector form of a query or document: `rows`
//! embeddings of `dim` coordinates each, stored row-major as `f32`. A
//! [`SegmentedSequence`] attaches one [`SegmentLabel`] per row so that the
//! functional runs of an embedder input (image preamble, patches, prompt,
//! query text, special tokens) can be composed and filtered by position.

use std::collections::HashSet;
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Embedding dimensionality used when none is configured.
pub const DEFAULT_DIM: usize = 128;

/// Rows flagged as normalized must have an L2 norm within this distance of 1.
pub const NORM_TOLERANCE: f64 = 1e-4;

/// Dense identifier of a document inside one index, `0..doc_count`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DocId(pub u64);

impl DocId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for DocId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// `rows × dim` real matrix, one token embedding per row.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatrix {
    rows: usize,
    dim: usize,
    values: Vec<f32>,
    normalized: bool,
}

impl TokenMatrix {
    /// Builds a matrix from row-major values. Every entry must be finite.
    pub fn new(dim: usize, values: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dim must be >= 1".into()));
        }
        if !values.len().is_multiple_of(dim) {
            return Err(Error::LengthMismatch {
                expected: values.len().div_ceil(dim) * dim,
                actual: values.len(),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput {
                row: pos / dim,
                col: pos % dim,
            });
        }
        Ok(Self {
            rows: values.len() / dim,
            dim,
            values,
            normalized: false,
        })
    }

    pub fn from_rows<R: AsRef<[f32]>>(dim: usize, rows: &[R]) -> Result<Self> {
        let mut values = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    actual: row.len(),
                });
            }
            values.extend_from_slice(row);
        }
        Self::new(dim, values)
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            rows: 0,
            dim: dim.max(1),
            values: Vec::new(),
            normalized: true,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.values.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    /// L2-normalizes every row. Zero rows are rejected.
    pub fn normalize(mut self) -> Result<Self> {
        let dim = self.dim;
        for (r, row) in self.values.chunks_exact_mut(dim).enumerate() {
            let norm = l2_norm(row);
            if norm == 0.0 {
                return Err(Error::ZeroRow { row: r });
            }
            for v in row.iter_mut() {
                *v = (*v as f64 / norm) as f32;
            }
        }
        self.normalized = true;
        Ok(self)
    }

    /// Flags the matrix as normalized after checking every row norm.
    pub fn assume_normalized(mut self) -> Result<Self> {
        for (r, row) in self.iter_rows().enumerate() {
            let norm = l2_norm(row);
            if (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(Error::NotNormalized { row: r, norm });
            }
        }
        self.normalized = true;
        Ok(self)
    }

    /// Copies the given rows, in the given order, into a new matrix.
    pub fn select_rows<I: IntoIterator<Item = usize>>(&self, indices: I) -> Self {
        let mut values = Vec::new();
        for i in indices {
            values.extend_from_slice(self.row(i));
        }
        Self {
            rows: values.len() / self.dim,
            dim: self.dim,
            values,
            normalized: self.normalized,
        }
    }

    pub fn slice_rows(&self, range: Range<usize>) -> Self {
        self.select_rows(range)
    }

    /// Row-wise concatenation. All parts must share `dim`.
    pub fn concat(dim: usize, parts: &[&TokenMatrix]) -> Result<Self> {
        let mut values = Vec::new();
        let mut normalized = true;
        for p in parts {
            if p.dim != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    actual: p.dim,
                });
            }
            normalized &= p.normalized;
            values.extend_from_slice(&p.values);
        }
        Ok(Self {
            rows: values.len() / dim,
            dim,
            values,
            normalized,
        })
    }
}

pub(crate) fn l2_norm(row: &[f32]) -> f64 {
    row.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt()
}

/// Functional role of one token embedding.
///
/// The numeric codes are the on-disk label bytes of embedding files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum SegmentLabel {
    ImagePrefix = 0,
    ImageContent = 1,
    InstructionText = 2,
    ImageSuffix = 3,
    QueryPrefix = 4,
    QueryContent = 5,
    QuerySuffix = 6,
    DocPrefix = 7,
    DocContent = 8,
    DocSuffix = 9,
}

impl SegmentLabel {
    pub const ALL: [SegmentLabel; 10] = [
        SegmentLabel::ImagePrefix,
        SegmentLabel::ImageContent,
        SegmentLabel::InstructionText,
        SegmentLabel::ImageSuffix,
        SegmentLabel::QueryPrefix,
        SegmentLabel::QueryContent,
        SegmentLabel::QuerySuffix,
        SegmentLabel::DocPrefix,
        SegmentLabel::DocContent,
        SegmentLabel::DocSuffix,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn is_query(self) -> bool {
        matches!(
            self,
            SegmentLabel::QueryPrefix | SegmentLabel::QueryContent | SegmentLabel::QuerySuffix
        )
    }

    pub fn is_doc_special(self) -> bool {
        matches!(self, SegmentLabel::DocPrefix | SegmentLabel::DocSuffix)
    }
}

/// Label orders a sequence may follow. Runs may be empty, but each label
/// forms at most one contiguous run and runs follow one of these orders.
///
/// The first is the declaration order, which covers image inputs, text
/// queries and documents. The second is the composed image+query layout,
/// where the query runs sit between the image patches and the image suffix.
const LAYOUTS: [&[SegmentLabel]; 2] = [
    &SegmentLabel::ALL,
    &[
        SegmentLabel::ImagePrefix,
        SegmentLabel::ImageContent,
        SegmentLabel::QueryPrefix,
        SegmentLabel::QueryContent,
        SegmentLabel::QuerySuffix,
        SegmentLabel::ImageSuffix,
    ],
];

/// A [`TokenMatrix`] with one [`SegmentLabel`] per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentedSequence {
    matrix: TokenMatrix,
    labels: Vec<SegmentLabel>,
}

impl SegmentedSequence {
    /// Builds and validates a sequence.
    pub fn new(matrix: TokenMatrix, labels: Vec<SegmentLabel>) -> Result<Self> {
        let seq = Self::from_parts(matrix, labels);
        validate_sequence(&seq)?;
        Ok(seq)
    }

    /// Pairs a matrix with labels without any checks.
    pub fn from_parts(matrix: TokenMatrix, labels: Vec<SegmentLabel>) -> Self {
        Self { matrix, labels }
    }

    pub fn matrix(&self) -> &TokenMatrix {
        &self.matrix
    }

    pub fn labels(&self) -> &[SegmentLabel] {
        &self.labels
    }

    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn into_parts(self) -> (TokenMatrix, Vec<SegmentLabel>) {
        (self.matrix, self.labels)
    }

    pub fn count(&self, label: SegmentLabel) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// Contiguous `(label, row range)` runs in sequence order.
    pub fn runs(&self) -> Vec<(SegmentLabel, Range<usize>)> {
        let mut runs: Vec<(SegmentLabel, Range<usize>)> = Vec::new();
        for (i, &label) in self.labels.iter().enumerate() {
            match runs.last_mut() {
                Some((l, r)) if *l == label => r.end = i + 1,
                _ => runs.push((label, i..i + 1)),
            }
        }
        runs
    }

    /// Rows whose label satisfies `keep`, in order, with their labels.
    pub fn filter<F: Fn(SegmentLabel) -> bool>(&self, keep: F) -> SegmentedSequence {
        let idx: Vec<usize> = (0..self.labels.len())
            .filter(|&i| keep(self.labels[i]))
            .collect();
        SegmentedSequence {
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            matrix: self.matrix.select_rows(idx),
        }
    }

    /// The rows carrying exactly `label`.
    pub fn segment(&self, label: SegmentLabel) -> TokenMatrix {
        self.filter(|l| l == label).matrix
    }

    /// Keeps the first `n` rows.
    pub fn truncate(&self, n: usize) -> SegmentedSequence {
        let n = n.min(self.rows());
        SegmentedSequence {
            matrix: self.matrix.slice_rows(0..n),
            labels: self.labels[..n].to_vec(),
        }
    }

    pub fn normalize(self) -> Result<Self> {
        Ok(Self {
            matrix: self.matrix.normalize()?,
            labels: self.labels,
        })
    }

    /// Concatenates sequences and validates the result.
    pub fn concat(parts: &[&SegmentedSequence]) -> Result<Self> {
        let dim = parts.first().map_or(DEFAULT_DIM, |p| p.dim());
        let matrices: Vec<&TokenMatrix> = parts.iter().map(|p| &p.matrix).collect();
        let matrix = TokenMatrix::concat(dim, &matrices)?;
        let labels = parts.iter().flat_map(|p| p.labels.iter().copied()).collect();
        Self::new(matrix, labels)
    }
}

/// Checks that labels match rows one-to-one and follow a canonical order.
pub fn validate_sequence(seq: &SegmentedSequence) -> Result<()> {
    if seq.labels.len() != seq.matrix.rows() {
        return Err(Error::LengthMismatch {
            expected: seq.matrix.rows(),
            actual: seq.labels.len(),
        });
    }
    let runs = seq.runs();
    // Report the violation found by the layout that matched the longest prefix.
    let mut furthest = 0;
    for layout in LAYOUTS {
        let matched = matched_runs(&runs, layout);
        if matched == runs.len() {
            return Ok(());
        }
        furthest = furthest.max(matched);
    }
    let (label, range) = &runs[furthest];
    Err(Error::LabelOrderViolation {
        row: range.start,
        label: *label,
    })
}

fn matched_runs(runs: &[(SegmentLabel, Range<usize>)], layout: &[SegmentLabel]) -> usize {
    let mut pos = 0;
    for (n, (label, _)) in runs.iter().enumerate() {
        match layout[pos..].iter().position(|l| l == label) {
            Some(offset) => pos += offset + 1,
            None => return n,
        }
    }
    runs.len()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hyperlink {
    pub surface_text: String,
    pub target_title: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FragmentImage {
    pub image_ref: String,
    pub caption: String,
}

/// A paragraph plus the images that precede it on its source page.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fragment {
    pub fragment_id: String,
    pub page_title: String,
    pub paragraph_index: usize,
    pub paragraph_text: String,
    #[serde(default)]
    pub hyperlinks: Vec<Hyperlink>,
    #[serde(default)]
    pub images: Vec<FragmentImage>,
}

impl Fragment {
    pub fn validate(&self) -> Result<()> {
        if self.fragment_id.is_empty() {
            return Err(Error::InvalidFragment("empty fragment_id".into()));
        }
        if self.paragraph_text.is_empty() {
            return Err(Error::InvalidFragment(format!(
                "{}: empty paragraph_text",
                self.fragment_id
            )));
        }
        let mut seen = HashSet::new();
        for img in &self.images {
            if !seen.insert(img.image_ref.as_str()) {
                return Err(Error::InvalidFragment(format!(
                    "{}: duplicate image_ref {:?}",
                    self.fragment_id, img.image_ref
                )));
            }
        }
        Ok(())
    }

    pub fn has_images(&self) -> bool {
        !self.images.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use SegmentLabel::*;

    fn seq(labels: Vec<SegmentLabel>, rows: usize) -> SegmentedSequence {
        let m = TokenMatrix::new(2, vec![1.0; rows * 2]).unwrap();
        SegmentedSequence::from_parts(m, labels)
    }

    #[test]
    fn canonical_query_order_is_valid() {
        assert!(validate_sequence(&seq(vec![QueryPrefix, QueryContent, QuerySuffix], 3)).is_ok());
    }

    #[test]
    fn label_count_must_match_rows() {
        let err = validate_sequence(&seq(vec![QueryPrefix, QueryContent], 3)).unwrap_err();
        assert!(matches!(err, Error::LengthMismatch { expected: 3, actual: 2 }));
    }

    #[test]
    fn out_of_order_labels_are_rejected() {
        let err =
            validate_sequence(&seq(vec![QueryContent, QueryPrefix, QuerySuffix], 3)).unwrap_err();
        assert!(matches!(err, Error::LabelOrderViolation { row: 1, label: QueryPrefix }));
    }

    #[test]
    fn split_runs_are_rejected() {
        let err = validate_sequence(&seq(vec![DocContent, DocSuffix, DocContent], 3)).unwrap_err();
        assert!(matches!(err, Error::LabelOrderViolation { row: 2, .. }));
    }

    #[test]
    fn composed_multimodal_layout_is_valid() {
        let labels = vec![
            ImagePrefix,
            ImageContent,
            ImageContent,
            QueryPrefix,
            QueryContent,
            QuerySuffix,
            ImageSuffix,
        ];
        assert!(validate_sequence(&seq(labels, 7)).is_ok());
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let err = TokenMatrix::new(2, vec![0.0, f32::NAN]).unwrap_err();
        assert!(matches!(err, Error::NonFiniteInput { row: 0, col: 1 }));
    }

    #[test]
    fn normalize_rejects_zero_rows() {
        let m = TokenMatrix::new(2, vec![3.0, 4.0, 0.0, 0.0]).unwrap();
        assert!(matches!(m.normalize(), Err(Error::ZeroRow { row: 1 })));
    }

    #[test]
    fn normalize_produces_unit_rows() {
        let m = TokenMatrix::new(2, vec![3.0, 4.0]).unwrap().normalize().unwrap();
        assert!(m.is_normalized());
        assert_eq!(m.row(0), &[0.6, 0.8]);
    }

    #[test]
    fn runs_partition_the_sequence() {
        let m = TokenMatrix::new(1, (0..6).map(|v| v as f32).collect()).unwrap();
        let s = SegmentedSequence::new(
            m.clone(),
            vec![DocPrefix, DocContent, DocContent, DocContent, DocSuffix, DocSuffix],
        )
        .unwrap();
        let parts: Vec<TokenMatrix> = s.runs().into_iter().map(|(_, r)| m.slice_rows(r)).collect();
        let refs: Vec<&TokenMatrix> = parts.iter().collect();
        assert_eq!(TokenMatrix::concat(1, &refs).unwrap().as_slice(), m.as_slice());
    }

    #[test]
    fn fragment_rejects_duplicate_images() {
        let img = FragmentImage {
            image_ref: "a.jpg".into(),
            caption: String::new(),
        };
        let f = Fragment {
            fragment_id: "x".into(),
            page_title: "P".into(),
            paragraph_index: 0,
            paragraph_text: "text".into(),
            hyperlinks: vec![],
            images: vec![img.clone(), img],
        };
        assert!(f.validate().is_err());
    }
}
