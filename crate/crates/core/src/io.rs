//! Flat-file formats.
//!
//! * Embeddings: `"EMB1"`, `u32 count`, `u32 dim`, then `count·dim` `f32`,
//!   all little-endian, row-major.
//! * Labels: JSON lines `{"id": ..., "label": "seg/.../seg"}`, one per
//!   embedding row in the same order.
//! * Head checkpoint: `"HEAD"`, `u32 out_dim`, `u32 in_dim`, then the
//!   row-major `f32` weights.
//! * Training history: CSV `step,lr,loss`.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::{HierarchicalLabel, HierarchyError};
use crate::retrieval::Sample;
use crate::trainer::{HistoryRow, ProjectionHead};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"EMB1";
pub const HEAD_MAGIC: &[u8; 4] = b"HEAD";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("truncated file: expected {expected} values, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("{embeddings} embedding rows but {labels} label rows")]
    RowCountMismatch { embeddings: usize, labels: usize },
    #[error("rows have different dimensions")]
    RaggedRows,
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
}

fn open(path: &Path) -> Result<File, IoError> {
    File::open(path).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}

fn create(path: &Path) -> Result<File, IoError> {
    File::create(path).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f32>, IoError> {
    let mut buf = Vec::with_capacity(n * 4);
    r.take((n * 4) as u64).read_to_end(&mut buf)?;
    if buf.len() != n * 4 {
        return Err(IoError::Truncated {
            expected: n,
            found: buf.len() / 4,
        });
    }
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn write_embeddings<W: Write>(mut out: W, rows: &[Vec<f64>]) -> Result<(), IoError> {
    let dim = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != dim) {
        return Err(IoError::RaggedRows);
    }
    out.write_all(EMBEDDING_MAGIC)?;
    write_u32(&mut out, rows.len() as u32)?;
    write_u32(&mut out, dim as u32)?;
    for r in rows {
        for &v in r {
            out.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_embeddings<R: Read>(mut input: R) -> Result<Vec<Vec<f64>>, IoError> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != EMBEDDING_MAGIC {
        return Err(IoError::BadMagic { expected: "EMB1" });
    }
    let count = read_u32(&mut input)? as usize;
    let dim = read_u32(&mut input)? as usize;
    let flat = read_f32s(&mut input, count * dim)?;
    if dim == 0 {
        return Ok(vec![Vec::new(); count]);
    }
    Ok(flat
        .chunks_exact(dim)
        .map(|c| c.iter().map(|&v| f64::from(v)).collect())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub id: String,
    pub label: String,
}

pub fn write_labels<W: Write>(mut out: W, records: &[LabelRecord]) -> Result<(), IoError> {
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_labels<R: BufRead>(input: R) -> Result<Vec<LabelRecord>, IoError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LabelRecord = serde_json::from_str(&line).map_err(|e| IoError::Manifest {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Paths of an on-disk labeled embedding set: `<stem>.emb` and `<stem>.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetPaths {
    pub embeddings: PathBuf,
    pub labels: PathBuf,
}

impl DatasetPaths {
    pub fn from_stem(stem: impl AsRef<Path>) -> Self {
        let stem = stem.as_ref();
        let with = |ext: &str| {
            let mut s = stem.as_os_str().to_owned();
            s.push(ext);
            PathBuf::from(s)
        };
        Self {
            embeddings: with(".emb"),
            labels: with(".jsonl"),
        }
    }
}

/// Writes samples as an embedding file plus a label manifest.
pub fn save_samples(paths: &DatasetPaths, samples: &[Sample]) -> Result<(), IoError> {
    let rows: Vec<Vec<f64>> = samples.iter().map(|s| s.embedding.clone()).collect();
    let mut w = BufWriter::new(create(&paths.embeddings)?);
    write_embeddings(&mut w, &rows)?;
    w.flush()?;
    let labels: Vec<LabelRecord> = samples
        .iter()
        .map(|s| LabelRecord {
            id: s.id.clone(),
            label: s.label.leaf().to_string(),
        })
        .collect();
    let mut w = BufWriter::new(create(&paths.labels)?);
    write_labels(&mut w, &labels)?;
    w.flush()?;
    Ok(())
}

/// Loads samples, pairing embedding row `i` with manifest line `i`.
pub fn load_samples(paths: &DatasetPaths) -> Result<Vec<Sample>, IoError> {
    let rows = read_embeddings(BufReader::new(open(&paths.embeddings)?))?;
    let labels = read_labels(BufReader::new(open(&paths.labels)?))?;
    if rows.len() != labels.len() {
        return Err(IoError::RowCountMismatch {
            embeddings: rows.len(),
            labels: labels.len(),
        });
    }
    rows.into_iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (embedding, rec))| {
            let label = HierarchicalLabel::parse_any(&rec.label).map_err(|e| IoError::Manifest {
                line: i + 1,
                message: e.to_string(),
            })?;
            Ok(Sample::new(rec.id, embedding, label))
        })
        .collect()
}

/// Seen/unseen leaf partition stored next to a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFile {
    pub seen: Vec<String>,
    pub unseen: Vec<String>,
}

impl SplitFile {
    pub fn is_unseen(&self, leaf: &str) -> bool {
        self.unseen.iter().any(|u| u == leaf)
    }

    pub fn save(&self, path: &Path) -> Result<(), IoError> {
        let mut w = BufWriter::new(create(path)?);
        serde_json::to_writer_pretty(&mut w, self).map_err(io::Error::from)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        serde_json::from_reader(BufReader::new(open(path)?)).map_err(|e| IoError::Manifest {
            line: e.line(),
            message: e.to_string(),
        })
    }
}

pub fn write_head<W: Write>(mut out: W, head: &ProjectionHead) -> Result<(), IoError> {
    out.write_all(HEAD_MAGIC)?;
    write_u32(&mut out, head.out_dim() as u32)?;
    write_u32(&mut out, head.in_dim() as u32)?;
    for r in 0..head.out_dim() {
        for c in 0..head.in_dim() {
            out.write_all(&(head.weight[(r, c)] as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_head<R: Read>(mut input: R) -> Result<ProjectionHead, IoError> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != HEAD_MAGIC {
        return Err(IoError::BadMagic { expected: "HEAD" });
    }
    let out_dim = read_u32(&mut input)? as usize;
    let in_dim = read_u32(&mut input)? as usize;
    let flat = read_f32s(&mut input, out_dim * in_dim)?;
    let weight = DMatrix::from_row_iterator(out_dim, in_dim, flat.into_iter().map(f64::from));
    Ok(ProjectionHead { weight })
}

pub fn save_head(path: &Path, head: &ProjectionHead) -> Result<(), IoError> {
    let mut w = BufWriter::new(create(path)?);
    write_head(&mut w, head)?;
    w.flush()?;
    Ok(())
}

pub fn load_head(path: &Path) -> Result<ProjectionHead, IoError> {
    read_head(BufReader::new(open(path)?))
}

pub fn write_history<W: Write>(mut out: W, rows: &[HistoryRow]) -> Result<(), IoError> {
    writeln!(out, "step,lr,loss")?;
    for r in rows {
        writeln!(out, "{},{:e},{}", r.step, r.lr, r.loss)?;
    }
    Ok(())
}
