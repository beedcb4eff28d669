//! Dense f32 embedding matrices and the CASE container format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//!      0     4  magic "CASE"
//!      4     4  version u32 = 1
//!      8     8  row count u64
//!     16     4  dim u32
//!     20     1  dtype u8 = 1 (f32 LE)
//!     21     3  reserved, zero
//!     24  4*N*D payload, row-major f32 LE
//!      …        N x (u16 byte length + UTF-8 id)
//! ```

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io;

pub const MAGIC: &[u8; 4] = b"CASE";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 1;
pub const HEADER_LEN: usize = 24;

/// Norm tolerance for rows treated as unit vectors.
pub const UNIT_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    data: Vec<f32>,
    ids: Vec<String>,
}

impl EmbeddingMatrix {
    /// Builds a matrix from row-major `data`, checking every invariant.
    pub fn new(dim: usize, data: Vec<f32>, ids: Vec<String>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dim must be positive"));
        }
        if data.len() != dim * ids.len() {
            return Err(Error::invalid(format!(
                "{} values do not form {} rows of dim {dim}",
                data.len(),
                ids.len()
            )));
        }
        let m = EmbeddingMatrix { dim, data, ids };
        m.check_values()?;
        m.check_ids()?;
        Ok(m)
    }

    pub fn from_rows(ids: Vec<String>, rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if ids.len() != rows.len() {
            return Err(Error::invalid(format!(
                "{} ids for {} rows",
                ids.len(),
                rows.len()
            )));
        }
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != dim) {
            return Err(Error::invalid(format!(
                "row {i} has length {}, expected {dim}",
                r.len()
            )));
        }
        Self::new(dim, rows.concat(), ids)
    }

    pub fn empty(dim: usize) -> Result<Self> {
        Self::new(dim, Vec::new(), Vec::new())
    }

    fn check_values(&self) -> Result<()> {
        if let Some(pos) = self.data.iter().position(|v| !v.is_finite()) {
            let row = pos / self.dim;
            return Err(Error::invalid(format!(
                "non-finite value in row {:?} (column {})",
                self.ids[row],
                pos % self.dim
            )));
        }
        Ok(())
    }

    fn check_ids(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.ids.len());
        for id in &self.ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::invalid(format!("duplicate embedding id {id:?}")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, row: usize) -> &str {
        &self.ids[row]
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.data[row * self.dim..(row + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.ids
            .iter()
            .map(String::as_str)
            .zip(self.data.chunks_exact(self.dim))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Copies the listed rows into a new matrix, in the given order.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * self.dim);
        let mut ids = Vec::with_capacity(rows.len());
        for &r in rows {
            data.extend_from_slice(self.row(r));
            ids.push(self.ids[r].clone());
        }
        Self::new(self.dim, data, ids)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let id_bytes: usize = self.ids.iter().map(|id| 2 + id.len()).sum();
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len() + id_bytes);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.rows() as u64).to_le_bytes());
        let dim = u32::try_from(self.dim)
            .map_err(|_| Error::invalid(format!("dim {} exceeds u32", self.dim)))?;
        out.extend_from_slice(&dim.to_le_bytes());
        out.push(DTYPE_F32);
        out.extend_from_slice(&[0u8; 3]);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for id in &self.ids {
            let len = u16::try_from(id.len())
                .map_err(|_| Error::invalid(format!("id longer than 65535 bytes: {id:.32}…")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(id.as_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            if bytes.len() >= 4 && &bytes[..4] != MAGIC {
                return Err(Error::BadMagic {
                    found: bytes[..4].try_into().unwrap(),
                });
            }
            return Err(Error::Truncated(format!(
                "{} bytes, header needs {HEADER_LEN}",
                bytes.len()
            )));
        }
        let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
        if &magic != MAGIC {
            return Err(Error::BadMagic { found: magic });
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let dim = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
        let dtype = bytes[20];
        if dtype != DTYPE_F32 {
            return Err(Error::parse(
                "CASE header",
                format!("unknown dtype {dtype}"),
            ));
        }
        if bytes[21..24] != [0, 0, 0] {
            return Err(Error::parse("CASE header", "reserved bytes are not zero"));
        }
        if dim == 0 {
            return Err(Error::parse("CASE header", "dim is zero"));
        }

        let rows = usize::try_from(rows)
            .map_err(|_| Error::Truncated(format!("row count {rows} too large")))?;
        let payload_len = rows
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Truncated(format!("{rows} x {dim} payload overflows")))?;
        let payload_end = HEADER_LEN + payload_len;
        if bytes.len() < payload_end {
            return Err(Error::Truncated(format!(
                "payload needs {payload_len} bytes, {} available",
                bytes.len() - HEADER_LEN
            )));
        }
        let data: Vec<f32> = bytes[HEADER_LEN..payload_end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();

        let mut ids = Vec::with_capacity(rows);
        let mut pos = payload_end;
        while ids.len() < rows {
            let Some(len_bytes) = bytes.get(pos..pos + 2) else {
                return Err(Error::parse(
                    "CASE id section",
                    format!("id-count mismatch: {} ids for {rows} rows", ids.len()),
                ));
            };
            let len = u16::from_le_bytes(len_bytes.try_into().unwrap()) as usize;
            pos += 2;
            let raw = bytes
                .get(pos..pos + len)
                .ok_or_else(|| Error::Truncated(format!("id {} needs {len} bytes", ids.len())))?;
            let id = std::str::from_utf8(raw)
                .map_err(|e| Error::parse("CASE id section", e))?
                .to_string();
            ids.push(id);
            pos += len;
        }
        if pos != bytes.len() {
            return Err(Error::parse(
                "CASE id section",
                format!("id-count mismatch: {} trailing bytes", bytes.len() - pos),
            ));
        }
        Self::new(dim, data, ids)
    }

    /// Rescales every row to unit Euclidean norm. The norm is accumulated in
    /// f64; a row with zero norm is an error naming its id.
    pub fn l2_normalize(&self) -> Result<Self> {
        let mut data = self.data.clone();
        for (row, chunk) in data.chunks_exact_mut(self.dim).enumerate() {
            let norm = norm_f64(chunk);
            if norm == 0.0 {
                return Err(Error::ZeroNorm(self.ids[row].clone()));
            }
            for v in chunk.iter_mut() {
                *v = (*v as f64 / norm) as f32;
            }
        }
        Ok(EmbeddingMatrix {
            dim: self.dim,
            data,
            ids: self.ids.clone(),
        })
    }
}

pub fn norm_f64(v: &[f32]) -> f64 {
    v.iter()
        .map(|&x| (x as f64) * (x as f64))
        .sum::<f64>()
        .sqrt()
}

pub fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Normalizes a single vector into f64. Fails on zero norm.
pub fn unit_vector(v: &[f32], id: &str) -> Result<Vec<f64>> {
    let norm = norm_f64(v);
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::ZeroNorm(id.to_string()));
    }
    Ok(v.iter().map(|&x| x as f64 / norm).collect())
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingMatrix> {
    let bytes = io::read_bytes(path)?;
    EmbeddingMatrix::from_bytes(&bytes).map_err(|e| match e {
        Error::Parse { context, message } => {
            Error::parse(format!("{}: {context}", path.display()), message)
        }
        other => other,
    })
}

pub fn write_embeddings(matrix: &EmbeddingMatrix, path: &Path) -> Result<()> {
    let bytes = matrix.to_bytes()?;
    io::write_atomic(path, &bytes)
}
