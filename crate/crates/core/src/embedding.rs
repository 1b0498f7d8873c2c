//! Id-aligned, L2-normalized sentence embedding matrices and their on-disk
//! format.
//!
//! Binary layout (all integers little-endian):
//!
//! ```text
//! "PARCIDX1" | dim: u32 | count: u32
//! count x (len: u32, utf-8 id bytes)
//! count * dim x f32 (row-major payload)
//! crc32(payload): u32
//! ```

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const INDEX_MAGIC: &[u8; 8] = b"PARCIDX1";

/// Scales `v` to unit Euclidean norm. The norm is accumulated in `f64`.
pub fn normalize(v: &[f32]) -> Result<Vec<f32>> {
    let norm = v
        .iter()
        .map(|&x| f64::from(x) * f64::from(x))
        .sum::<f64>()
        .sqrt();
    if !norm.is_finite() {
        return Err(Error::DegenerateVector("non-finite component".into()));
    }
    if norm == 0.0 {
        return Err(Error::DegenerateVector("zero vector".into()));
    }
    Ok(v.iter().map(|&x| (f64::from(x) / norm) as f32).collect())
}

/// Immutable matrix of unit-norm rows keyed by sample id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f32>,
}

impl EmbeddingIndex {
    /// Normalizes every row; id order is preserved.
    pub fn build<I, R>(ids: Vec<String>, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = R>,
        R: AsRef<[f32]>,
    {
        let mut seen = HashSet::with_capacity(ids.len());
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }

        let mut dim = None;
        let mut data = Vec::new();
        let mut count = 0usize;
        for (i, row) in rows.into_iter().enumerate() {
            let row = row.as_ref();
            let d = *dim.get_or_insert(row.len());
            if row.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: row.len(),
                });
            }
            let unit = normalize(row).map_err(|e| match (e, ids.get(i)) {
                (Error::DegenerateVector(m), Some(id)) => {
                    Error::DegenerateVector(format!("row `{id}`: {m}"))
                }
                (e, _) => e,
            })?;
            data.extend_from_slice(&unit);
            count += 1;
        }
        if count != ids.len() {
            return Err(Error::InvalidArgument(format!(
                "{} ids but {count} rows",
                ids.len()
            )));
        }
        let dim = dim.unwrap_or(0);
        if count > 0 && dim == 0 {
            return Err(Error::DegenerateVector("zero-dimensional rows".into()));
        }
        Ok(EmbeddingIndex { dim, ids, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        // chunks_exact panics on zero; an empty index has no rows anyway.
        self.data.chunks_exact(self.dim.max(1))
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    pub fn vector(&self, id: &str) -> Option<&[f32]> {
        self.position(id).map(|i| self.row(i))
    }

    fn payload_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() * 4);
        for x in &self.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::io("<index writer>", e);
        let dim = u32::try_from(self.dim).map_err(|_| Error::Format("dim exceeds u32".into()))?;
        let count =
            u32::try_from(self.ids.len()).map_err(|_| Error::Format("count exceeds u32".into()))?;
        w.write_all(INDEX_MAGIC).map_err(io)?;
        w.write_all(&dim.to_le_bytes()).map_err(io)?;
        w.write_all(&count.to_le_bytes()).map_err(io)?;
        for id in &self.ids {
            let len = u32::try_from(id.len()).map_err(|_| Error::Format("id too long".into()))?;
            w.write_all(&len.to_le_bytes()).map_err(io)?;
            w.write_all(id.as_bytes()).map_err(io)?;
        }
        let payload = self.payload_bytes();
        w.write_all(&payload).map_err(io)?;
        w.write_all(&crc32fast::hash(&payload).to_le_bytes())
            .map_err(io)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out)
            .expect("writing to a Vec cannot fail");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(8)? != INDEX_MAGIC {
            return Err(Error::Format("bad magic bytes".into()));
        }
        let dim = cur.u32()? as usize;
        let count = cur.u32()? as usize;
        let mut ids = Vec::with_capacity(count.min(1 << 20));
        let mut seen = HashSet::new();
        for _ in 0..count {
            let len = cur.u32()? as usize;
            let id = std::str::from_utf8(cur.take(len)?)
                .map_err(|_| Error::Format("id is not valid UTF-8".into()))?
                .to_string();
            if !seen.insert(id.clone()) {
                return Err(Error::DuplicateId(id));
            }
            ids.push(id);
        }
        let payload_len = count
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Format("header overflows".into()))?;
        let payload = cur.take(payload_len)?;
        let stored_crc = cur.u32()?;
        if cur.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after checksum",
                bytes.len() - cur.pos
            )));
        }
        if crc32fast::hash(payload) != stored_crc {
            return Err(Error::Format("checksum mismatch".into()));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(EmbeddingIndex { dim, ids, data })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Builds an index from `id<TAB>v1,v2,...` lines.
    pub fn from_tsv<R: Read>(reader: R) -> Result<Self> {
        let (ids, rows) = read_tsv(reader)?;
        Self::build(ids, rows)
    }

    pub fn load_tsv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(f)
    }

    /// Loads either format, sniffing the magic bytes.
    pub fn load_any(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.starts_with(INDEX_MAGIC) {
            Self::from_bytes(&bytes)
        } else {
            Self::from_tsv(bytes.as_slice())
        }
    }
}

/// Reads raw (unnormalized) `id<TAB>v1,v2,...` rows.
pub fn read_tsv<R: Read>(reader: R) -> Result<(Vec<String>, Vec<Vec<f32>>)> {
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::io("<tsv>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| Error::MalformedRecord {
            line: i + 1,
            message,
        };
        let (id, values) = line
            .split_once('\t')
            .ok_or_else(|| malformed("missing TAB separator".into()))?;
        let row = values
            .split(',')
            .map(|v| v.trim().parse::<f32>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| malformed(e.to_string()))?;
        ids.push(id.to_string());
        rows.push(row);
    }
    Ok((ids, rows))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("truncated file".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
