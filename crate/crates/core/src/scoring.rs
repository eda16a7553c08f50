//! Per-utterance likelihood-ratio scores between a target-domain model and
//! a background model.
//!
//! Scores live in the log domain. For an utterance with frame log-ratios
//! `r_t = ln p(O_t | target) − ln p(O_t | background)`:
//!
//! * geometric mode: `(1/T) Σ_t r_t`, the log of the geometric mean of the
//!   frame ratios;
//! * arithmetic mode: `ln((1/T) Σ_t exp(r_t))`, the log of their arithmetic
//!   mean.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, CorpusManifest, FeatureMatrix};
use crate::gmm::DiagonalGmm;
use crate::numeric::{log_sum_exp, order_invariant_sum};

pub const CSV_HEADER: [&str; 6] = ["id", "domain", "duration_sec", "frame_count", "mean_log_lr", "mode"];

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("{role} model has D={expected}, features have D={found}")]
    DimMismatch {
        role: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("utterance {id:?}: {source}")]
    Corpus {
        id: String,
        #[source]
        source: CorpusError,
    },
    #[error("utterance {id:?}: non-finite score")]
    NonFinite { id: String },
    #[error("score file {}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    #[default]
    Geometric,
    Arithmetic,
}

impl ScoreMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreMode::Geometric => "geometric",
            ScoreMode::Arithmetic => "arithmetic",
        }
    }
}

impl fmt::Display for ScoreMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScoreMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "geometric" => Ok(ScoreMode::Geometric),
            "arithmetic" => Ok(ScoreMode::Arithmetic),
            other => Err(format!("unknown score mode {other:?} (expected geometric or arithmetic)")),
        }
    }
}

/// Likelihood-ratio statistic of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct LrScore {
    pub id: String,
    pub mean_log_lr: f64,
    pub duration_sec: f64,
    pub frame_count: usize,
}

/// Reduces frame log-ratios to an utterance score.
///
/// The reduction depends only on the multiset of ratios: permuting frames
/// yields a bit-identical score.
pub fn reduce_log_ratios(ratios: &[f64], mode: ScoreMode) -> f64 {
    let t = ratios.len() as f64;
    match mode {
        ScoreMode::Geometric => order_invariant_sum(ratios) / t,
        ScoreMode::Arithmetic => {
            let mut sorted = ratios.to_vec();
            sorted.sort_by(f64::total_cmp);
            log_sum_exp(&sorted) - t.ln()
        }
    }
}

fn check_dims(target: &DiagonalGmm, background: &DiagonalGmm, dim: usize) -> Result<(), ScoreError> {
    for (role, model) in [("target", target), ("background", background)] {
        if model.dim() != dim {
            return Err(ScoreError::DimMismatch {
                role,
                expected: model.dim(),
                found: dim,
            });
        }
    }
    Ok(())
}

/// `ln p(O_t | target) − ln p(O_t | background)` for every frame.
pub fn frame_log_ratios(
    target: &DiagonalGmm,
    background: &DiagonalGmm,
    matrix: &FeatureMatrix,
) -> Result<Vec<f64>, ScoreError> {
    check_dims(target, background, matrix.dim())?;
    Ok(matrix
        .rows()
        .map(|x| target.log_density_unchecked(x) - background.log_density_unchecked(x))
        .collect())
}

pub fn score_utterance(
    target: &DiagonalGmm,
    background: &DiagonalGmm,
    matrix: &FeatureMatrix,
    mode: ScoreMode,
) -> Result<f64, ScoreError> {
    let ratios = frame_log_ratios(target, background, matrix)?;
    Ok(reduce_log_ratios(&ratios, mode))
}

/// Scores every utterance of a manifest, in manifest order. Utterances are
/// processed in parallel; the output does not depend on scheduling.
pub fn score_corpus(
    target: &DiagonalGmm,
    background: &DiagonalGmm,
    manifest: &CorpusManifest,
    mode: ScoreMode,
) -> Result<Vec<LrScore>, ScoreError> {
    if manifest.is_empty() {
        return Ok(Vec::new());
    }
    check_dims(target, background, manifest.feature_dim())?;
    let results: Vec<Result<LrScore, ScoreError>> = manifest
        .utterances()
        .par_iter()
        .map(|rec| {
            let matrix = manifest
                .read_features(&rec.id)
                .map_err(|source| ScoreError::Corpus {
                    id: rec.id.clone(),
                    source,
                })?;
            let mean_log_lr = score_utterance(target, background, &matrix, mode)?;
            if !mean_log_lr.is_finite() {
                return Err(ScoreError::NonFinite { id: rec.id.clone() });
            }
            Ok(LrScore {
                id: rec.id.clone(),
                mean_log_lr,
                duration_sec: rec.duration_sec,
                frame_count: rec.frame_count,
            })
        })
        .collect();
    results.into_iter().collect()
}

/// One line of a score file. The domain label rides along for reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub score: LrScore,
    pub domain: Option<String>,
    pub mode: ScoreMode,
}

impl ScoreRow {
    pub fn from_manifest(scores: Vec<LrScore>, manifest: &CorpusManifest, mode: ScoreMode) -> Vec<ScoreRow> {
        scores
            .into_iter()
            .map(|score| {
                let domain = manifest.get(&score.id).and_then(|r| r.domain.clone());
                ScoreRow { score, domain, mode }
            })
            .collect()
    }
}

/// 17 significant digits, enough to round-trip any f64.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_score_rows<W: Write>(out: W, rows: &[ScoreRow]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for row in rows {
        w.write_record([
            row.score.id.as_str(),
            row.domain.as_deref().unwrap_or(""),
            &format_float(row.score.duration_sec),
            &row.score.frame_count.to_string(),
            &format_float(row.score.mean_log_lr),
            row.mode.as_str(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_score_rows<R: Read>(input: R) -> Result<Vec<ScoreRow>, String> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(|e| e.to_string())?;
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(format!("expected header {}, found {}", CSV_HEADER.join(","), header.iter().collect::<Vec<_>>().join(",")));
    }
    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| format!("line {line}: {e}"))?;
        let field = |j: usize| rec.get(j).unwrap_or_default();
        let num = |j: usize| -> Result<f64, String> {
            field(j)
                .parse::<f64>()
                .map_err(|e| format!("line {line}: {}: {e}", CSV_HEADER[j]))
        };
        let id = field(0).to_string();
        if id.is_empty() {
            return Err(format!("line {line}: empty id"));
        }
        if !seen.insert(id.clone()) {
            return Err(format!("line {line}: duplicate id {id:?}"));
        }
        let duration_sec = num(2)?;
        if !(duration_sec.is_finite() && duration_sec > 0.0) {
            return Err(format!("line {line}: duration_sec must be positive"));
        }
        let frame_count = field(3)
            .parse::<usize>()
            .map_err(|e| format!("line {line}: frame_count: {e}"))?;
        let mean_log_lr = num(4)?;
        if !mean_log_lr.is_finite() {
            return Err(format!("line {line}: mean_log_lr must be finite"));
        }
        let mode = field(5).parse::<ScoreMode>().map_err(|e| format!("line {line}: {e}"))?;
        let domain = Some(field(1).to_string()).filter(|d| !d.is_empty());
        rows.push(ScoreRow {
            score: LrScore {
                id,
                mean_log_lr,
                duration_sec,
                frame_count,
            },
            domain,
            mode,
        });
    }
    Ok(rows)
}

pub fn save_scores(path: &Path, rows: &[ScoreRow]) -> Result<(), ScoreError> {
    let file = fs::File::create(path).map_err(|source| ScoreError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_score_rows(io::BufWriter::new(file), rows).map_err(|e| ScoreError::Io {
        path: path.to_path_buf(),
        source: io::Error::other(e),
    })
}

pub fn load_scores(path: &Path) -> Result<Vec<ScoreRow>, ScoreError> {
    let file = fs::File::open(path).map_err(|source| ScoreError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_score_rows(io::BufReader::new(file)).map_err(|message| ScoreError::Format {
        path: path.to_path_buf(),
        message,
    })
}
