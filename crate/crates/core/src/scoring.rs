//! Late-interaction (MaxSim) relevance kernels.
//!
//! ```text
//! S(q, d) = Σ_i max_j  q_i · d_j
//! ```
//!
//! Three variants are provided:
//!
//! - [`maxsim_exact`]: full-precision query against full-precision document.
//! - [`maxsim_binary_sym`]: both sides sign-quantized. Bits decode to ±1, so
//!   the per-pair similarity is `dim - 2 * hamming(a, b)` and the whole score
//!   is computed in integer arithmetic with popcounts.
//! - [`maxsim_asym`]: full-precision query against sign-quantized document
//!   rows decoded to `±1/√dim`. The query is compiled into per-byte lookup
//!   tables ([`AsymQuery`]) so each document row costs one table lookup per
//!   byte instead of one multiply per coordinate.
//!
//! Bit `j` of a vector is stored in byte `j / 8` at position `j % 8`
//! (least significant bit first). Pad bits past `dim` are always zero.

use crate::error::{Error, Result};
use crate::model::TokenMatrix;

/// Number of bytes holding one packed vector of `dim` bits.
pub fn bytes_per_row(dim: usize) -> usize {
    dim.div_ceil(8)
}

fn pad_mask(dim: usize) -> u8 {
    match dim % 8 {
        0 => 0xff,
        r => (1u8 << r) - 1,
    }
}

/// A single sign-quantized vector.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitVector {
    dim: usize,
    bytes: Vec<u8>,
}

impl BitVector {
    pub fn from_bits(bits: &[bool]) -> Self {
        let mut bytes = vec![0u8; bytes_per_row(bits.len())];
        for (j, &b) in bits.iter().enumerate() {
            if b {
                bytes[j / 8] |= 1 << (j % 8);
            }
        }
        Self {
            dim: bits.len(),
            bytes,
        }
    }

    /// Wraps packed bytes, rejecting wrong lengths and set pad bits.
    pub fn from_bytes(dim: usize, bytes: Vec<u8>) -> Result<Self> {
        check_packed(dim, &bytes, 1)?;
        Ok(Self { dim, bytes })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, j: usize) -> bool {
        self.bytes[j / 8] >> (j % 8) & 1 == 1
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    /// Decodes to `±1` per coordinate.
    pub fn to_signs(&self) -> Vec<f32> {
        (0..self.dim)
            .map(|j| if self.get(j) { 1.0 } else { -1.0 })
            .collect()
    }

    /// Decodes to `±1/√dim`, a unit vector.
    pub fn decode(&self) -> Vec<f32> {
        let s = 1.0 / (self.dim as f64).sqrt();
        (0..self.dim)
            .map(|j| if self.get(j) { s as f32 } else { -s as f32 })
            .collect()
    }

    pub fn count_ones(&self) -> u32 {
        self.bytes.iter().map(|b| b.count_ones()).sum()
    }
}

fn check_packed(dim: usize, bytes: &[u8], rows: usize) -> Result<()> {
    let bpr = bytes_per_row(dim);
    if bytes.len() != bpr * rows {
        return Err(Error::LengthMismatch {
            expected: bpr * rows,
            actual: bytes.len(),
        });
    }
    if !dim.is_multiple_of(8) {
        let mask = !pad_mask(dim);
        for (r, row) in bytes.chunks_exact(bpr).enumerate() {
            if row[bpr - 1] & mask != 0 {
                return Err(Error::InvalidParameter(format!(
                    "row {r}: pad bits beyond dim {dim} are set"
                )));
            }
        }
    }
    Ok(())
}

/// Owned, contiguous list of packed vectors sharing one dimension.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitMatrix {
    dim: usize,
    bytes: Vec<u8>,
}

impl BitMatrix {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            bytes: Vec::new(),
        }
    }

    pub fn from_bytes(dim: usize, bytes: Vec<u8>) -> Result<Self> {
        let bpr = bytes_per_row(dim);
        if bpr == 0 || !bytes.len().is_multiple_of(bpr) {
            return Err(Error::LengthMismatch {
                expected: bytes.len().div_ceil(bpr.max(1)) * bpr,
                actual: bytes.len(),
            });
        }
        check_packed(dim, &bytes, bytes.len() / bpr)?;
        Ok(Self { dim, bytes })
    }

    pub fn from_vectors(dim: usize, vectors: &[BitVector]) -> Result<Self> {
        let mut m = Self::new(dim);
        for v in vectors {
            m.push(v)?;
        }
        Ok(m)
    }

    pub fn push(&mut self, v: &BitVector) -> Result<()> {
        if v.dim != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                actual: v.dim,
            });
        }
        self.bytes.extend_from_slice(&v.bytes);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.bytes.len() / bytes_per_row(self.dim)
    }

    pub fn row(&self, i: usize) -> BitVector {
        self.view().row(i)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn view(&self) -> BitRows<'_> {
        BitRows {
            dim: self.dim,
            bytes: &self.bytes,
        }
    }

    pub fn to_vectors(&self) -> Vec<BitVector> {
        (0..self.rows()).map(|i| self.row(i)).collect()
    }
}

/// Borrowed view of packed rows, e.g. a slice of a mapped index file.
#[derive(Debug, Clone, Copy)]
pub struct BitRows<'a> {
    dim: usize,
    bytes: &'a [u8],
}

impl<'a> BitRows<'a> {
    /// `bytes.len()` must be a multiple of `bytes_per_row(dim)`.
    pub fn new(dim: usize, bytes: &'a [u8]) -> Self {
        debug_assert_eq!(bytes.len() % bytes_per_row(dim), 0);
        Self { dim, bytes }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.bytes.len() / bytes_per_row(self.dim)
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub fn row_bytes(&self, i: usize) -> &'a [u8] {
        let bpr = bytes_per_row(self.dim);
        &self.bytes[i * bpr..(i + 1) * bpr]
    }

    pub fn row(&self, i: usize) -> BitVector {
        BitVector {
            dim: self.dim,
            bytes: self.row_bytes(i).to_vec(),
        }
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &'a [u8]> + 'a {
        self.bytes.chunks_exact(bytes_per_row(self.dim))
    }

    pub fn to_owned(&self) -> BitMatrix {
        BitMatrix {
            dim: self.dim,
            bytes: self.bytes.to_vec(),
        }
    }
}

/// Hamming distance between two packed rows of equal length.
#[inline]
pub fn hamming(a: &[u8], b: &[u8]) -> u32 {
    debug_assert_eq!(a.len(), b.len());
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    let mut dist = 0u32;
    for (x, y) in ca.by_ref().zip(cb.by_ref()) {
        let x = u64::from_le_bytes(x.try_into().unwrap());
        let y = u64::from_le_bytes(y.try_into().unwrap());
        dist += (x ^ y).count_ones();
    }
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        dist += (x ^ y).count_ones();
    }
    dist
}

/// Exact MaxSim over full-precision rows, accumulated in `f64`.
pub fn maxsim_exact(query: &TokenMatrix, doc: &TokenMatrix) -> Result<f64> {
    if query.dim() != doc.dim() {
        return Err(Error::DimMismatch {
            expected: doc.dim(),
            actual: query.dim(),
        });
    }
    if doc.is_empty() {
        return Err(Error::EmptyDocument);
    }
    let mut total = 0.0f64;
    for q in query.iter_rows() {
        let mut best = f64::NEG_INFINITY;
        for d in doc.iter_rows() {
            let s = dot(q, d);
            if s > best {
                best = s;
            }
        }
        total += best;
    }
    Ok(total)
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// MaxSim with both sides sign-quantized; exact integer result.
pub fn maxsim_binary_sym(query: BitRows<'_>, doc: BitRows<'_>) -> Result<i64> {
    if query.dim() != doc.dim() {
        return Err(Error::DimMismatch {
            expected: doc.dim(),
            actual: query.dim(),
        });
    }
    if doc.is_empty() {
        return Err(Error::EmptyDocument);
    }
    Ok(binary_sym_unchecked(query, doc))
}

/// Stage-1 scan kernel: callers guarantee equal dims and a non-empty doc.
#[inline]
pub(crate) fn binary_sym_unchecked(query: BitRows<'_>, doc: BitRows<'_>) -> i64 {
    let dim = query.dim() as i64;
    let mut total = 0i64;
    for q in query.iter() {
        let min_dist = doc.iter().map(|d| hamming(q, d)).min().unwrap_or(0);
        total += dim - 2 * min_dist as i64;
    }
    total
}

/// MaxSim of a full-precision query against `±1/√dim`-decoded doc rows.
pub fn maxsim_asym(query: &TokenMatrix, doc: BitRows<'_>) -> Result<f64> {
    AsymQuery::new(query).score(doc)
}

/// A full-precision query compiled for repeated asymmetric scoring.
///
/// For query row `q` and packed doc row `b`, with `P` the coordinates whose
/// bit is set:
///
/// ```text
/// q · decode(b) = (2 Σ_{j∈P} q_j - Σ_j q_j) / √dim
/// ```
///
/// `Σ_{j∈P} q_j` is assembled from one 256-entry table per byte position.
#[derive(Debug, Clone)]
pub struct AsymQuery {
    dim: usize,
    rows: usize,
    bpr: usize,
    // [row][byte position][byte value]
    tables: Vec<f64>,
    row_sums: Vec<f64>,
    scale: f64,
}

impl AsymQuery {
    pub fn new(query: &TokenMatrix) -> Self {
        let dim = query.dim();
        let bpr = bytes_per_row(dim);
        let mut tables = vec![0.0f64; query.rows() * bpr * 256];
        let mut row_sums = Vec::with_capacity(query.rows());
        for (r, q) in query.iter_rows().enumerate() {
            row_sums.push(q.iter().map(|&v| v as f64).sum());
            for b in 0..bpr {
                let table = &mut tables[(r * bpr + b) * 256..(r * bpr + b + 1) * 256];
                for v in 1usize..256 {
                    let low = v.trailing_zeros() as usize;
                    let j = b * 8 + low;
                    let coord = if j < dim { q[j] as f64 } else { 0.0 };
                    table[v] = table[v & (v - 1)] + coord;
                }
            }
        }
        Self {
            dim,
            rows: query.rows(),
            bpr,
            tables,
            row_sums,
            scale: 1.0 / (dim as f64).sqrt(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn score(&self, doc: BitRows<'_>) -> Result<f64> {
        if doc.dim() != self.dim {
            return Err(Error::DimMismatch {
                expected: doc.dim(),
                actual: self.dim,
            });
        }
        if doc.is_empty() {
            return Err(Error::EmptyDocument);
        }
        Ok(self.score_unchecked(doc))
    }

    #[inline]
    pub(crate) fn score_unchecked(&self, doc: BitRows<'_>) -> f64 {
        let mut best = vec![f64::NEG_INFINITY; self.rows];
        for d in doc.iter() {
            for (r, slot) in best.iter_mut().enumerate() {
                let base = r * self.bpr * 256;
                let mut set_sum = 0.0f64;
                for (b, &byte) in d.iter().enumerate() {
                    set_sum += self.tables[base + b * 256 + byte as usize];
                }
                let s = (2.0 * set_sum - self.row_sums[r]) * self.scale;
                if s > *slot {
                    *slot = s;
                }
            }
        }
        best.iter().sum()
    }
}
