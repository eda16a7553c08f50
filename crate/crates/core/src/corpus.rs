//! On-disk corpus representation: a line-oriented JSON manifest plus one
//! binary feature file per utterance.
//!
//! Feature file layout (little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "LRSF"
//! 4       4     u32 frame count T
//! 8       4     u32 dimension D
//! 12      4     u32 reserved, must be 0
//! 16      4·T·D f32 values, frame-major
//! ```

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::compensated_sum;

pub const FEATURE_MAGIC: [u8; 4] = *b"LRSF";
pub const HEADER_LEN: usize = 16;
/// Frame shift used to map frame counts onto durations.
pub const FRAME_SHIFT_SEC: f64 = 0.01;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("file not found: {}", path.display())]
    MissingFile { path: PathBuf },
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("utterance {id:?}: dim {found} differs from manifest feature dim {expected}")]
    DimMismatch {
        id: String,
        expected: usize,
        found: usize,
    },
    #[error("utterance {id:?}: manifest {field} is {manifest} but the feature file header says {file}")]
    HeaderMismatch {
        id: String,
        field: &'static str,
        manifest: u64,
        file: u64,
    },
    #[error("duplicate utterance id {0:?}")]
    DuplicateId(String),
    #[error("invalid record {id:?}: {reason}")]
    InvalidRecord { id: String, reason: String },
    #[error("unknown utterance id {0:?}")]
    UnknownId(String),
    #[error("corrupt feature file {}: {kind}", path.display())]
    CorruptFile { path: PathBuf, kind: CorruptKind },
    #[error("invalid feature matrix: {0}")]
    InvalidMatrix(String),
    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl CorpusError {
    fn io(path: &Path, source: io::Error) -> Self {
        if source.kind() == io::ErrorKind::NotFound {
            CorpusError::MissingFile {
                path: path.to_path_buf(),
            }
        } else {
            CorpusError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }
}

/// Reason a feature file failed to decode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CorruptKind {
    BadMagic([u8; 4]),
    Truncated { expected: u64, actual: u64 },
    TrailingBytes { expected: u64, actual: u64 },
    EmptyShape { frames: u32, dim: u32 },
    ReservedNonZero(u32),
    NonFinite { row: usize, col: usize },
}

impl fmt::Display for CorruptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CorruptKind::BadMagic(m) => write!(f, "bad magic {m:?}"),
            CorruptKind::Truncated { expected, actual } => {
                write!(f, "short read: expected {expected} bytes, found {actual}")
            }
            CorruptKind::TrailingBytes { expected, actual } => {
                write!(f, "trailing data: expected {expected} bytes, found {actual}")
            }
            CorruptKind::EmptyShape { frames, dim } => {
                write!(f, "empty shape {frames}x{dim}")
            }
            CorruptKind::ReservedNonZero(v) => write!(f, "reserved header field is {v}"),
            CorruptKind::NonFinite { row, col } => {
                write!(f, "non-finite value at row {row}, column {col}")
            }
        }
    }
}

/// A T×D grid of finite feature values for one utterance, frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    frames: usize,
    dim: usize,
    data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(frames: usize, dim: usize, data: Vec<f32>) -> Result<Self, CorpusError> {
        if frames == 0 || dim == 0 {
            return Err(CorpusError::InvalidMatrix(format!(
                "shape {frames}x{dim} has an empty axis"
            )));
        }
        if frames > u32::MAX as usize || dim > u32::MAX as usize {
            return Err(CorpusError::InvalidMatrix(format!(
                "shape {frames}x{dim} exceeds the u32 header range"
            )));
        }
        if data.len() != frames * dim {
            return Err(CorpusError::InvalidMatrix(format!(
                "{} values for shape {frames}x{dim}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(CorpusError::InvalidMatrix(format!(
                "non-finite value at row {}, column {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(FeatureMatrix { frames, dim, data })
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self, CorpusError> {
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        if let Some(bad) = rows.iter().position(|r| r.as_ref().len() != dim) {
            return Err(CorpusError::InvalidMatrix(format!(
                "row {bad} has {} values, expected {dim}",
                rows[bad].as_ref().len()
            )));
        }
        let data = rows.iter().flat_map(|r| r.as_ref().iter().copied()).collect();
        FeatureMatrix::new(rows.len(), dim, data)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Encoded size in bytes: `16 + 4·T·D`.
    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + 4 * self.data.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&FEATURE_MAGIC);
        out.extend_from_slice(&(self.frames as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Decodes a complete feature file image. Never panics on malformed input.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CorruptKind> {
        let (frames, dim) = decode_header(bytes)?;
        // 4·T·D overflows u64 for the largest headers.
        let expected = (HEADER_LEN as u128 + 4 * frames as u128 * dim as u128)
            .try_into()
            .unwrap_or(u64::MAX);
        let actual = bytes.len() as u64;
        if actual < expected {
            return Err(CorruptKind::Truncated { expected, actual });
        }
        if actual > expected {
            return Err(CorruptKind::TrailingBytes { expected, actual });
        }
        let (frames, dim) = (frames as usize, dim as usize);
        let mut data = Vec::with_capacity(frames * dim);
        for (i, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            if !v.is_finite() {
                return Err(CorruptKind::NonFinite {
                    row: i / dim,
                    col: i % dim,
                });
            }
            data.push(v);
        }
        Ok(FeatureMatrix { frames, dim, data })
    }
}

fn decode_header(bytes: &[u8]) -> Result<(u32, u32), CorruptKind> {
    if bytes.len() < HEADER_LEN {
        // Report a bad magic before a short header when we can tell.
        let n = bytes.len().min(4);
        if bytes[..n] != FEATURE_MAGIC[..n] {
            let mut magic = [0u8; 4];
            magic[..n].copy_from_slice(&bytes[..n]);
            return Err(CorruptKind::BadMagic(magic));
        }
        return Err(CorruptKind::Truncated {
            expected: HEADER_LEN as u64,
            actual: bytes.len() as u64,
        });
    }
    let word = |at: usize| u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]);
    let magic = [bytes[0], bytes[1], bytes[2], bytes[3]];
    if magic != FEATURE_MAGIC {
        return Err(CorruptKind::BadMagic(magic));
    }
    let (frames, dim, reserved) = (word(4), word(8), word(12));
    if reserved != 0 {
        return Err(CorruptKind::ReservedNonZero(reserved));
    }
    if frames == 0 || dim == 0 {
        return Err(CorruptKind::EmptyShape { frames, dim });
    }
    Ok((frames, dim))
}

pub fn write_features(path: &Path, matrix: &FeatureMatrix) -> Result<(), CorpusError> {
    fs::write(path, matrix.to_bytes()).map_err(|e| CorpusError::io(path, e))
}

pub fn read_feature_file(path: &Path) -> Result<FeatureMatrix, CorpusError> {
    let bytes = fs::read(path).map_err(|e| CorpusError::io(path, e))?;
    FeatureMatrix::from_bytes(&bytes).map_err(|kind| CorpusError::CorruptFile {
        path: path.to_path_buf(),
        kind,
    })
}

/// Reads only the 16-byte header and returns `(T, D)`.
pub fn read_feature_header(path: &Path) -> Result<(u32, u32), CorpusError> {
    let file = fs::File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let mut header = Vec::with_capacity(HEADER_LEN);
    file.take(HEADER_LEN as u64)
        .read_to_end(&mut header)
        .map_err(|e| CorpusError::io(path, e))?;
    decode_header(&header).map_err(|kind| CorpusError::CorruptFile {
        path: path.to_path_buf(),
        kind,
    })
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtteranceRecord {
    pub id: String,
    /// Evaluation-only label; the selection path never reads it.
    #[serde(default)]
    pub domain: Option<String>,
    pub duration_sec: f64,
    pub frame_count: usize,
    pub dim: usize,
    /// Feature file location, relative to the manifest's directory.
    pub path: String,
}

impl UtteranceRecord {
    fn check(&self) -> Result<(), CorpusError> {
        let invalid = |reason: &str| CorpusError::InvalidRecord {
            id: self.id.clone(),
            reason: reason.to_string(),
        };
        if self.id.is_empty() {
            return Err(invalid("empty id"));
        }
        if !(self.duration_sec.is_finite() && self.duration_sec > 0.0) {
            return Err(invalid("duration_sec must be finite and positive"));
        }
        if self.frame_count == 0 {
            return Err(invalid("frame_count must be at least 1"));
        }
        if self.dim == 0 {
            return Err(invalid("dim must be at least 1"));
        }
        if self.path.is_empty() {
            return Err(invalid("empty path"));
        }
        Ok(())
    }
}

/// Validated, ordered index of a corpus.
#[derive(Debug, Clone)]
pub struct CorpusManifest {
    utterances: Vec<UtteranceRecord>,
    feature_dim: usize,
    root: PathBuf,
    index: HashMap<String, usize>,
}

impl CorpusManifest {
    /// Builds a manifest from records, checking every in-memory invariant.
    /// Feature files are not touched; see [`CorpusManifest::verify_files`].
    ///
    /// `feature_dim` is taken from the first record (0 for an empty list).
    pub fn new(root: impl Into<PathBuf>, utterances: Vec<UtteranceRecord>) -> Result<Self, CorpusError> {
        let feature_dim = utterances.first().map_or(0, |r| r.dim);
        let mut index = HashMap::with_capacity(utterances.len());
        for (i, rec) in utterances.iter().enumerate() {
            rec.check()?;
            if rec.dim != feature_dim {
                return Err(CorpusError::DimMismatch {
                    id: rec.id.clone(),
                    expected: feature_dim,
                    found: rec.dim,
                });
            }
            if index.insert(rec.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId(rec.id.clone()));
            }
        }
        Ok(CorpusManifest {
            utterances,
            feature_dim,
            root: root.into(),
            index,
        })
    }

    /// Parses, validates and cross-checks a manifest against its feature files.
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let file = fs::File::open(path).map_err(|e| CorpusError::io(path, e))?;
        let mut records = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| CorpusError::io(path, e))?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let rec: UtteranceRecord =
                serde_json::from_str(trimmed).map_err(|e| CorpusError::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
            records.push(rec);
        }
        let root = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        let manifest = CorpusManifest::new(root, records)?;
        manifest.verify_files()?;
        Ok(manifest)
    }

    /// Checks that each referenced feature file exists and that its header
    /// agrees with the record's `frame_count` and `dim`.
    pub fn verify_files(&self) -> Result<(), CorpusError> {
        for rec in &self.utterances {
            let (frames, dim) = read_feature_header(&self.feature_path(rec))?;
            if frames as usize != rec.frame_count {
                return Err(CorpusError::HeaderMismatch {
                    id: rec.id.clone(),
                    field: "frame_count",
                    manifest: rec.frame_count as u64,
                    file: frames as u64,
                });
            }
            if dim as usize != rec.dim {
                return Err(CorpusError::HeaderMismatch {
                    id: rec.id.clone(),
                    field: "dim",
                    manifest: rec.dim as u64,
                    file: dim as u64,
                });
            }
        }
        Ok(())
    }

    /// Writes the manifest as one JSON object per line.
    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let file = fs::File::create(path).map_err(|e| CorpusError::io(path, e))?;
        let mut out = BufWriter::new(file);
        for rec in &self.utterances {
            let line = serde_json::to_string(rec).expect("records always serialize");
            writeln!(out, "{line}").map_err(|e| CorpusError::io(path, e))?;
        }
        out.flush().map_err(|e| CorpusError::io(path, e))
    }

    pub fn utterances(&self) -> &[UtteranceRecord] {
        &self.utterances
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn get(&self, id: &str) -> Option<&UtteranceRecord> {
        self.index.get(id).map(|&i| &self.utterances[i])
    }

    pub fn feature_path(&self, record: &UtteranceRecord) -> PathBuf {
        self.root.join(&record.path)
    }

    pub fn total_hours(&self) -> f64 {
        compensated_sum(self.utterances.iter().map(|r| r.duration_sec)) / 3600.0
    }

    pub fn read_features(&self, id: &str) -> Result<FeatureMatrix, CorpusError> {
        let rec = self
            .get(id)
            .ok_or_else(|| CorpusError::UnknownId(id.to_string()))?;
        read_feature_file(&self.feature_path(rec))
    }

    /// Records for the given ids, in the order given.
    pub fn select<I, S>(&self, ids: I) -> Result<Vec<&UtteranceRecord>, CorpusError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        ids.into_iter()
            .map(|id| {
                self.get(id.as_ref())
                    .ok_or_else(|| CorpusError::UnknownId(id.as_ref().to_string()))
            })
            .collect()
    }
}
