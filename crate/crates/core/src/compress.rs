//! Document compression: sign binarization and fixed-budget token pooling.
//!
//! A document's content rows are grouped by agglomerative clustering
//! (average linkage, cosine distance) into at most `k` clusters. The pooled
//! representation is the mean of the special-token rows followed by one
//! centroid per cluster, ordered by each cluster's smallest member row.
//! Centroids are computed in full precision and binarized afterwards.

use crate::error::{Error, Result};
use crate::model::{DocId, SegmentLabel, SegmentedSequence, TokenMatrix};
use crate::scoring::{bytes_per_row, BitMatrix, BitVector};

/// Token-pooling cluster budget used when none is configured.
pub const DEFAULT_K: usize = 8;

/// Sign-quantizes `v`: bit `j` is set iff `v[j] >= 0`.
pub fn binarize(v: &[f32]) -> Result<BitVector> {
    if let Some(col) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFiniteInput { row: 0, col });
    }
    let mut bytes = vec![0u8; bytes_per_row(v.len())];
    pack_signs(v, &mut bytes);
    BitVector::from_bytes(v.len(), bytes)
}

/// Sign-quantizes every row. [`TokenMatrix`] rows are finite by construction.
pub fn binarize_matrix(m: &TokenMatrix) -> BitMatrix {
    let bpr = bytes_per_row(m.dim());
    let mut bytes = vec![0u8; bpr * m.rows()];
    for (row, out) in m.iter_rows().zip(bytes.chunks_exact_mut(bpr)) {
        pack_signs(row, out);
    }
    BitMatrix::from_bytes(m.dim(), bytes).expect("packed rows are well formed")
}

fn pack_signs(v: &[f32], out: &mut [u8]) {
    for (j, &x) in v.iter().enumerate() {
        if x >= 0.0 {
            out[j / 8] |= 1 << (j % 8);
        }
    }
}

fn cosine_distance(a: &[f32], b: &[f32]) -> f64 {
    let mut ab = 0.0f64;
    let mut aa = 0.0f64;
    let mut bb = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return 1.0;
    }
    1.0 - ab / (aa.sqrt() * bb.sqrt())
}

#[derive(Debug, Clone, Copy)]
struct Nearest {
    dist: f64,
    other: usize,
}

/// Average-linkage agglomerative clustering under cosine distance.
///
/// Returns one cluster label per row. Labels are `0..min(k, rows)`, numbered
/// by each cluster's smallest member row. Among equally distant cluster
/// pairs the one with the smallest `(row, row)` representative pair merges
/// first, where a cluster is represented by its smallest member row.
pub fn cluster_content(vectors: &TokenMatrix, k: usize) -> Result<Vec<usize>> {
    let n = vectors.rows();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if k == 0 {
        return Err(Error::InvalidParameter("k must be >= 1".into()));
    }
    if k >= n {
        return Ok((0..n).collect());
    }

    // Upper triangle only: dist[i * n + j] with i < j.
    let mut dist = vec![0.0f64; n * n];
    for i in 0..n {
        for j in i + 1..n {
            dist[i * n + j] = cosine_distance(vectors.row(i), vectors.row(j));
        }
    }
    let d = |dist: &[f64], a: usize, b: usize| {
        if a < b {
            dist[a * n + b]
        } else {
            dist[b * n + a]
        }
    };

    let mut active = vec![true; n];
    let mut size = vec![1usize; n];
    let mut parent: Vec<usize> = (0..n).collect();

    // Nearest active partner with a larger index, ties to the smaller index.
    let nearest_of = |dist: &[f64], active: &[bool], i: usize| -> Option<Nearest> {
        let mut best: Option<Nearest> = None;
        for j in i + 1..n {
            if !active[j] {
                continue;
            }
            let dj = dist[i * n + j];
            if best.is_none_or(|b| dj < b.dist) {
                best = Some(Nearest { dist: dj, other: j });
            }
        }
        best
    };
    let mut nearest: Vec<Option<Nearest>> = (0..n).map(|i| nearest_of(&dist, &active, i)).collect();

    let mut clusters = n;
    while clusters > k {
        let mut pick: Option<(usize, Nearest)> = None;
        for (i, nn) in nearest.iter().enumerate() {
            if !active[i] {
                continue;
            }
            if let Some(nn) = nn {
                if pick.is_none_or(|(_, p)| nn.dist < p.dist) {
                    pick = Some((i, *nn));
                }
            }
        }
        let (a, Nearest { other: b, .. }) = pick.expect("more than k active clusters");

        // Merge b into a (a < b, so a stays the representative).
        active[b] = false;
        parent[b] = a;
        let (sa, sb) = (size[a] as f64, size[b] as f64);
        for m in 0..n {
            if !active[m] || m == a {
                continue;
            }
            let merged = (sa * d(&dist, a, m) + sb * d(&dist, b, m)) / (sa + sb);
            if a < m {
                dist[a * n + m] = merged;
            } else {
                dist[m * n + a] = merged;
            }
        }
        size[a] += size[b];
        clusters -= 1;

        nearest[b] = None;
        nearest[a] = nearest_of(&dist, &active, a);
        for m in 0..a {
            if !active[m] {
                continue;
            }
            match nearest[m] {
                Some(nn) if nn.other == a || nn.other == b => {
                    nearest[m] = nearest_of(&dist, &active, m);
                }
                Some(nn) => {
                    let dm = dist[m * n + a];
                    if dm < nn.dist || (dm == nn.dist && a < nn.other) {
                        nearest[m] = Some(Nearest { dist: dm, other: a });
                    }
                }
                None => nearest[m] = nearest_of(&dist, &active, m),
            }
        }
        for m in a + 1..b {
            if active[m] && nearest[m].is_some_and(|nn| nn.other == b) {
                nearest[m] = nearest_of(&dist, &active, m);
            }
        }
    }

    // Resolve roots; representatives are visited in ascending order so the
    // label order follows the smallest member row.
    let mut label_of_root = vec![usize::MAX; n];
    let mut next = 0;
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let mut r = i;
        while parent[r] != r {
            r = parent[r];
        }
        if label_of_root[r] == usize::MAX {
            label_of_root[r] = next;
            next += 1;
        }
        labels.push(label_of_root[r]);
    }
    Ok(labels)
}

fn mean_rows<'a>(dim: usize, rows: impl Iterator<Item = &'a [f32]>) -> Vec<f32> {
    let mut acc = vec![0.0f64; dim];
    let mut count = 0usize;
    for r in rows {
        for (a, &v) in acc.iter_mut().zip(r) {
            *a += v as f64;
        }
        count += 1;
    }
    acc.into_iter().map(|a| (a / count as f64) as f32).collect()
}

/// Full-precision pooled vectors of one document.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledVectors {
    /// Row 0 is the special-token centroid, the rest are content centroids.
    pub centroids: TokenMatrix,
    /// Cluster label per content row.
    pub assignment: Vec<usize>,
}

impl PooledVectors {
    pub fn binarize(&self) -> BitMatrix {
        binarize_matrix(&self.centroids)
    }
}

/// Pools a document into `min(k, content_rows) + 1` full-precision vectors.
pub fn pool_vectors(doc: &SegmentedSequence, k: usize) -> Result<PooledVectors> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be >= 1".into()));
    }
    let m = doc.matrix();
    let labels = doc.labels();
    if let Some(row) = labels
        .iter()
        .position(|l| !matches!(l, SegmentLabel::DocPrefix | SegmentLabel::DocContent | SegmentLabel::DocSuffix))
    {
        return Err(Error::InvalidParameter(format!(
            "row {row} carries non-document label {:?}",
            labels[row]
        )));
    }
    let special: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].is_doc_special()).collect();
    if special.is_empty() {
        return Err(Error::MissingSegment("DocPrefix/DocSuffix".into()));
    }
    let content = doc.segment(SegmentLabel::DocContent);
    if content.is_empty() {
        return Err(Error::MissingSegment("DocContent".into()));
    }

    let dim = m.dim();
    let assignment = cluster_content(&content, k)?;
    let clusters = assignment.iter().max().map_or(0, |&c| c + 1);

    let mut values = mean_rows(dim, special.iter().map(|&i| m.row(i)));
    for c in 0..clusters {
        let members = (0..content.rows()).filter(|&r| assignment[r] == c);
        values.extend(mean_rows(dim, members.map(|r| content.row(r))));
    }
    Ok(PooledVectors {
        centroids: TokenMatrix::new(dim, values)?,
        assignment,
    })
}

/// Tier-1 record: binarized pooled vectors of one document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PooledDoc {
    pub doc_id: DocId,
    pub vectors: BitMatrix,
    pub k: usize,
}

/// Tier-2 record: every row of one document, binarized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FullDoc {
    pub doc_id: DocId,
    pub vectors: BitMatrix,
}

pub fn pool_document(doc_id: DocId, doc: &SegmentedSequence, k: usize) -> Result<PooledDoc> {
    let pooled = pool_vectors(doc, k)?;
    Ok(PooledDoc {
        doc_id,
        vectors: pooled.binarize(),
        k,
    })
}

pub fn full_document(doc_id: DocId, doc: &SegmentedSequence) -> Result<FullDoc> {
    if doc.rows() == 0 {
        return Err(Error::EmptyDocument);
    }
    Ok(FullDoc {
        doc_id,
        vectors: binarize_matrix(doc.matrix()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use SegmentLabel::*;

    fn doc(dim: usize, pref: &[Vec<f32>], content: &[Vec<f32>], suff: &[Vec<f32>]) -> SegmentedSequence {
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for (rows, label) in [(pref, DocPrefix), (content, DocContent), (suff, DocSuffix)] {
            for r in rows {
                values.extend_from_slice(r);
                labels.push(label);
            }
        }
        SegmentedSequence::new(TokenMatrix::new(dim, values).unwrap(), labels).unwrap()
    }

    fn basis(dim: usize, i: usize) -> Vec<f32> {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        v
    }

    #[test]
    fn binarize_sign_rule() {
        let b = binarize(&[0.3, -0.2, 0.0, -1.0]).unwrap();
        assert_eq!(b.as_bytes(), &[0b0101]);
        assert_eq!(b.to_signs(), vec![1.0, -1.0, 1.0, -1.0]);
        assert_eq!(binarize(&[1.0; 9]).unwrap().count_ones(), 9);
        assert!(matches!(binarize(&[0.0, f32::INFINITY]), Err(Error::NonFiniteInput { col: 1, .. })));
    }

    #[test]
    fn binarize_is_idempotent_through_decode() {
        let b = binarize(&[0.3, -0.2, 0.0, -1.0, 5.0]).unwrap();
        assert_eq!(binarize(&b.decode()).unwrap(), b);
    }

    #[test]
    fn two_tight_pairs_split_apart() {
        let m = TokenMatrix::from_rows(2, &[[1.0, 0.05], [0.0, 1.0], [1.0, 0.0], [0.05, 1.0]]).unwrap();
        let labels = cluster_content(&m, 2).unwrap();
        assert_eq!(labels, vec![0, 1, 0, 1]);
    }

    #[test]
    fn k_at_least_rows_keeps_singletons() {
        let m = TokenMatrix::from_rows(2, &[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap();
        assert_eq!(cluster_content(&m, 3).unwrap(), vec![0, 1, 2]);
        assert_eq!(cluster_content(&m, 10).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn identical_rows_single_cluster() {
        let m = TokenMatrix::from_rows(2, &[[0.6, 0.8]; 5]).unwrap();
        assert_eq!(cluster_content(&m, 1).unwrap(), vec![0; 5]);
    }

    #[test]
    fn equal_distances_merge_lowest_pair_first() {
        // All pairwise distances are 1: (0, 1) merges, then {0,1} with 2.
        let m = TokenMatrix::from_rows(3, &[basis(3, 0), basis(3, 1), basis(3, 2)]).unwrap();
        assert_eq!(cluster_content(&m, 2).unwrap(), vec![0, 0, 1]);
    }

    #[test]
    fn cluster_errors() {
        assert!(matches!(cluster_content(&TokenMatrix::empty(2), 1), Err(Error::EmptyInput)));
        let m = TokenMatrix::from_rows(2, &[[1.0, 0.0]]).unwrap();
        assert!(cluster_content(&m, 0).is_err());
    }

    #[test]
    fn identical_content_rows_pool_to_themselves() {
        let v = vec![0.6, -0.8];
        let d = doc(2, &[vec![1.0, 0.0]], &vec![v.clone(); 6], &[vec![0.0, 1.0]]);
        let p = pool_vectors(&d, 3).unwrap();
        assert_eq!(p.centroids.rows(), 4);
        for r in 1..4 {
            assert_eq!(p.centroids.row(r), v.as_slice());
        }
        assert_eq!(p.centroids.row(0), &[0.5, 0.5]);
    }

    #[test]
    fn single_content_row_gives_two_vectors() {
        let d = doc(4, &[basis(4, 0)], &[basis(4, 1)], &[basis(4, 2)]);
        let p = pool_document(DocId(0), &d, 8).unwrap();
        assert_eq!(p.vectors.rows(), 2);
    }

    #[test]
    fn orthonormal_content_stays_in_order() {
        let content: Vec<Vec<f32>> = (0..8).map(|i| basis(9, i)).collect();
        let d = doc(9, &[basis(9, 8)], &content, &[basis(9, 8)]);
        let p = pool_vectors(&d, 8).unwrap();
        assert_eq!(p.centroids.rows(), 9);
        for (i, c) in content.iter().enumerate() {
            assert_eq!(p.centroids.row(i + 1), c.as_slice());
        }
    }

    #[test]
    fn pooling_requires_segments() {
        let only_content = SegmentedSequence::new(
            TokenMatrix::from_rows(2, &[[1.0, 0.0]]).unwrap(),
            vec![DocContent],
        )
        .unwrap();
        assert!(matches!(pool_vectors(&only_content, 2), Err(Error::MissingSegment(_))));
        let no_content = SegmentedSequence::new(
            TokenMatrix::from_rows(2, &[[1.0, 0.0], [0.0, 1.0]]).unwrap(),
            vec![DocPrefix, DocSuffix],
        )
        .unwrap();
        assert!(matches!(pool_vectors(&no_content, 2), Err(Error::MissingSegment(_))));
    }
}
