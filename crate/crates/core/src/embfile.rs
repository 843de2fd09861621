//! Binary embedding files: the boundary between an embedder and the index.
//!
//! Layout, all little-endian:
//!
//! ```text
//! header:  magic "FSEM" | version u32 | dim u32 | count u64
//! record:  id_len u32 | id (UTF-8) | n u32 | n label codes (u8) | n*dim f32
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::{SegmentLabel, SegmentedSequence, TokenMatrix};

pub const MAGIC: [u8; 4] = *b"FSEM";
pub const EMBEDDING_FILE_VERSION: u32 = 1;
const HEADER_LEN: u64 = 20;
const MAX_ID_LEN: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub id: String,
    pub sequence: SegmentedSequence,
}

impl EmbeddingRecord {
    pub fn new(id: impl Into<String>, sequence: SegmentedSequence) -> Self {
        Self {
            id: id.into(),
            sequence,
        }
    }
}

/// Streaming writer; the record count is patched into the header on
/// [`EmbeddingWriter::finish`].
pub struct EmbeddingWriter {
    out: BufWriter<File>,
    path: PathBuf,
    dim: usize,
    count: u64,
}

impl EmbeddingWriter {
    pub fn create(path: &Path, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dim must be >= 1".into()));
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = Self {
            out: BufWriter::new(file),
            path: path.to_path_buf(),
            dim,
            count: 0,
        };
        w.write_header()?;
        Ok(w)
    }

    fn write_header(&mut self) -> Result<()> {
        let mut h = Vec::with_capacity(HEADER_LEN as usize);
        h.extend_from_slice(&MAGIC);
        h.extend_from_slice(&EMBEDDING_FILE_VERSION.to_le_bytes());
        h.extend_from_slice(&(self.dim as u32).to_le_bytes());
        h.extend_from_slice(&self.count.to_le_bytes());
        self.out.write_all(&h).map_err(|e| Error::io(&self.path, e))
    }

    pub fn write(&mut self, id: &str, seq: &SegmentedSequence) -> Result<()> {
        if seq.dim() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                actual: seq.dim(),
            });
        }
        if id.len() > MAX_ID_LEN {
            return Err(Error::InvalidParameter(format!("id longer than {MAX_ID_LEN} bytes")));
        }
        let mut buf = Vec::with_capacity(8 + id.len() + seq.rows() * (1 + 4 * self.dim));
        buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
        buf.extend_from_slice(id.as_bytes());
        buf.extend_from_slice(&(seq.rows() as u32).to_le_bytes());
        buf.extend(seq.labels().iter().map(|l| l.code()));
        for v in seq.matrix().as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        self.out.write_all(&buf).map_err(|e| Error::io(&self.path, e))?;
        self.count += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<u64> {
        let path = self.path.clone();
        self.out.flush().map_err(|e| Error::io(&path, e))?;
        let file = self.out.get_mut();
        file.seek(SeekFrom::Start(12)).map_err(|e| Error::io(&path, e))?;
        file.write_all(&self.count.to_le_bytes()).map_err(|e| Error::io(&path, e))?;
        file.sync_all().map_err(|e| Error::io(&path, e))?;
        Ok(self.count)
    }
}

pub fn write_embeddings<'a, I>(path: &Path, dim: usize, records: I) -> Result<u64>
where
    I: IntoIterator<Item = &'a EmbeddingRecord>,
{
    let mut w = EmbeddingWriter::create(path, dim)?;
    for r in records {
        w.write(&r.id, &r.sequence)?;
    }
    w.finish()
}

/// Streaming reader. Rows are returned exactly as stored; callers decide
/// whether to normalize.
pub struct EmbeddingReader<R> {
    input: R,
    dim: usize,
    count: u64,
    read: u64,
    failed: bool,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptEmbeddings(msg.into())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => corrupt(format!("truncated {what}")),
        _ => corrupt(format!("reading {what}: {e}")),
    })
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

impl<R: Read> EmbeddingReader<R> {
    pub fn new(mut input: R) -> Result<Self> {
        let mut h = [0u8; HEADER_LEN as usize];
        read_exact(&mut input, &mut h, "header")?;
        if h[0..4] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u32::from_le_bytes(h[4..8].try_into().unwrap());
        if version != EMBEDDING_FILE_VERSION {
            return Err(Error::VersionUnsupported {
                found: version,
                supported: EMBEDDING_FILE_VERSION,
            });
        }
        let dim = u32::from_le_bytes(h[8..12].try_into().unwrap()) as usize;
        if dim == 0 {
            return Err(corrupt("dim is zero"));
        }
        let count = u64::from_le_bytes(h[12..20].try_into().unwrap());
        Ok(Self {
            input,
            dim,
            count,
            read: 0,
            failed: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn declared_count(&self) -> u64 {
        self.count
    }

    fn read_record(&mut self) -> Result<EmbeddingRecord> {
        let n = self.read + 1;
        let id_len = read_u32(&mut self.input, "id length")? as usize;
        if id_len > MAX_ID_LEN {
            return Err(corrupt(format!("record {n}: id length {id_len}")));
        }
        let mut id = vec![0u8; id_len];
        read_exact(&mut self.input, &mut id, "id")?;
        let id = String::from_utf8(id).map_err(|_| corrupt(format!("record {n}: id is not UTF-8")))?;
        let rows = read_u32(&mut self.input, "row count")? as usize;
        let mut codes = vec![0u8; rows];
        read_exact(&mut self.input, &mut codes, "labels")?;
        let labels = codes
            .iter()
            .map(|&c| SegmentLabel::from_code(c).ok_or_else(|| corrupt(format!("{id}: label code {c}"))))
            .collect::<Result<Vec<_>>>()?;
        let mut raw = vec![0u8; rows * self.dim * 4];
        read_exact(&mut self.input, &mut raw, "values")?;
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let matrix = TokenMatrix::new(self.dim, values).map_err(|e| corrupt(format!("{id}: {e}")))?;
        let sequence = SegmentedSequence::new(matrix, labels).map_err(|e| corrupt(format!("{id}: {e}")))?;
        Ok(EmbeddingRecord { id, sequence })
    }
}

impl<R: Read> Iterator for EmbeddingReader<R> {
    type Item = Result<EmbeddingRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        if self.read == self.count {
            let mut probe = [0u8; 1];
            return match self.input.read(&mut probe) {
                Ok(0) => None,
                Ok(_) => {
                    self.failed = true;
                    Some(Err(corrupt("trailing bytes after last record")))
                }
                Err(e) => {
                    self.failed = true;
                    Some(Err(corrupt(e.to_string())))
                }
            };
        }
        let r = self.read_record();
        self.read += 1;
        if r.is_err() {
            self.failed = true;
        }
        Some(r)
    }
}

pub fn open_embeddings(path: &Path) -> Result<EmbeddingReader<BufReader<File>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    EmbeddingReader::new(BufReader::new(file))
}

pub fn read_embeddings(path: &Path) -> Result<Vec<EmbeddingRecord>> {
    open_embeddings(path)?.collect()
}
