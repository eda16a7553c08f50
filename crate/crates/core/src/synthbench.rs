//! Synthetic multi-domain corpora with known generating densities, and
//! evaluation of a selection against their domain labels.
//!
//! Each domain is a diagonal-Gaussian mixture. Every utterance draws from
//! its own ChaCha8 stream (key from the run seed plus the domain's
//! `seed_offset`, stream number = global utterance index), so output is
//! reproducible across platforms and thread counts.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    write_features, CorpusError, CorpusManifest, FeatureMatrix, UtteranceRecord, FRAME_SHIFT_SEC,
};
use crate::numeric::compensated_sum;
use crate::scoring::LrScore;
use crate::selection::{f_lr, SelectionResult};

/// Largest instance [`brute_force_optimum`] will enumerate.
pub const BRUTE_FORCE_LIMIT: usize = 20;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const FEATURE_DIR: &str = "features";

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid domain spec: {0}")]
    InvalidSpec(String),
    #[error("malformed spec file {}: {source}", path.display())]
    SpecFile {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("selected id {0:?} is not in the manifest")]
    UnknownId(String),
    #[error("utterance {0:?} has no domain label")]
    MissingDomainLabels(String),
    #[error("target domain {0:?} does not occur in the manifest")]
    UnknownDomain(String),
    #[error("{len} scores exceed the brute-force limit of {BRUTE_FORCE_LIMIT}")]
    TooLarge { len: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub name: String,
    pub mixture: Vec<MixtureComponent>,
    pub utterance_count: usize,
    /// Inclusive `[min, max]` frame count per utterance.
    pub frames_per_utterance: (usize, usize),
    #[serde(default)]
    pub seed_offset: u64,
}

pub fn load_domain_specs(path: &Path) -> Result<Vec<DomainSpec>, SynthError> {
    let text = fs::read_to_string(path).map_err(|source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| SynthError::SpecFile {
        path: path.to_path_buf(),
        source,
    })
}

/// Dimension implied by the first component of the first domain.
pub fn spec_dim(specs: &[DomainSpec]) -> Option<usize> {
    specs.first()?.mixture.first().map(|c| c.mean.len())
}

pub fn validate_specs(specs: &[DomainSpec], dim: usize) -> Result<(), SynthError> {
    let bad = |msg: String| Err(SynthError::InvalidSpec(msg));
    if specs.is_empty() {
        return bad("no domains".into());
    }
    if dim == 0 {
        return bad("dimension must be at least 1".into());
    }
    let mut names = HashSet::new();
    for s in specs {
        if s.name.is_empty()
            || !s.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            return bad(format!("domain name {:?} must be non-empty [A-Za-z0-9_-]", s.name));
        }
        if !names.insert(s.name.as_str()) {
            return bad(format!("duplicate domain name {:?}", s.name));
        }
        if s.utterance_count == 0 {
            return bad(format!("{}: utterance_count must be at least 1", s.name));
        }
        let (lo, hi) = s.frames_per_utterance;
        if lo == 0 || lo > hi || hi > u32::MAX as usize {
            return bad(format!("{}: invalid frame range [{lo}, {hi}]", s.name));
        }
        if s.mixture.is_empty() {
            return bad(format!("{}: empty mixture", s.name));
        }
        for c in &s.mixture {
            if !(c.weight.is_finite() && c.weight > 0.0) {
                return bad(format!("{}: component weights must be positive", s.name));
            }
            if c.mean.len() != dim || c.variance.len() != dim {
                return bad(format!("{}: component vectors must have length {dim}", s.name));
            }
            if c.mean.iter().any(|m| !m.is_finite()) {
                return bad(format!("{}: non-finite mean", s.name));
            }
            if c.variance.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return bad(format!("{}: variances must be positive", s.name));
            }
        }
        let total: f64 = s.mixture.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("{}: weights sum to {total}, not 1", s.name));
        }
    }
    Ok(())
}

/// Six-or-so domains centred on scaled basis vectors: domain `i` has centre
/// `separation · e_i`, so centres are `separation · √2` apart. Each domain
/// is a two-component mixture (weights 0.6/0.4, offsets ±0.5 along its own
/// axis, unit variances).
pub fn well_separated_domains(
    names: &[&str],
    dim: usize,
    utterance_count: usize,
    frames_per_utterance: (usize, usize),
    separation: f64,
) -> Vec<DomainSpec> {
    assert!(names.len() <= dim, "need at least one dimension per domain");
    names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let component = |weight: f64, offset: f64| {
                let mut mean = vec![0.0; dim];
                mean[i] = separation + offset;
                MixtureComponent {
                    weight,
                    mean,
                    variance: vec![1.0; dim],
                }
            };
            DomainSpec {
                name: name.to_string(),
                mixture: vec![component(0.6, -0.5), component(0.4, 0.5)],
                utterance_count,
                frames_per_utterance,
                seed_offset: i as u64,
            }
        })
        .collect()
}

fn sample_utterance(spec: &DomainSpec, dim: usize, rng: &mut ChaCha8Rng) -> FeatureMatrix {
    let (lo, hi) = spec.frames_per_utterance;
    let frames = rng.random_range(lo..=hi);
    let cumulative: Vec<f64> = spec
        .mixture
        .iter()
        .scan(0.0, |acc, c| {
            *acc += c.weight;
            Some(*acc)
        })
        .collect();
    let total = *cumulative.last().expect("validated non-empty");
    let mut data = Vec::with_capacity(frames * dim);
    for _ in 0..frames {
        let u = rng.random::<f64>() * total;
        let k = cumulative.iter().position(|&c| u < c).unwrap_or(cumulative.len() - 1);
        let comp = &spec.mixture[k];
        for d in 0..dim {
            let z: f64 = StandardNormal.sample(rng);
            data.push((comp.mean[d] + comp.variance[d].sqrt() * z) as f32);
        }
    }
    FeatureMatrix::new(frames, dim, data).expect("sampled frames are finite")
}

/// Writes `out_dir/features/<id>.lrsf` for every utterance and
/// `out_dir/manifest.jsonl`. Utterance ids are `<domain>-<index:05>`, and
/// durations follow the 10 ms frame shift.
pub fn generate_corpus(
    specs: &[DomainSpec],
    dim: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<CorpusManifest, SynthError> {
    validate_specs(specs, dim)?;
    let feature_dir = out_dir.join(FEATURE_DIR);
    fs::create_dir_all(&feature_dir).map_err(|source| SynthError::Io {
        path: feature_dir.clone(),
        source,
    })?;

    let jobs: Vec<(&DomainSpec, usize)> = specs
        .iter()
        .flat_map(|s| (0..s.utterance_count).map(move |i| (s, i)))
        .collect();
    let records: Vec<Result<UtteranceRecord, SynthError>> = jobs
        .par_iter()
        .enumerate()
        .map(|(stream, &(spec, i))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(spec.seed_offset));
            rng.set_stream(stream as u64);
            let matrix = sample_utterance(spec, dim, &mut rng);
            let id = format!("{}-{i:05}", spec.name);
            let rel = format!("{FEATURE_DIR}/{id}.lrsf");
            write_features(&out_dir.join(&rel), &matrix)?;
            Ok(UtteranceRecord {
                id,
                domain: Some(spec.name.clone()),
                duration_sec: matrix.frames() as f64 * FRAME_SHIFT_SEC,
                frame_count: matrix.frames(),
                dim,
                path: rel,
            })
        })
        .collect();
    let records = records.into_iter().collect::<Result<Vec<_>, _>>()?;
    let manifest = CorpusManifest::new(out_dir, records)?;
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Domain composition of a selection (hours per domain) plus precision and
/// recall for one designated target domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub target_domain: String,
    pub selected_utterances: usize,
    /// Sum of `per_domain_hours`, in key order.
    pub total_hours: f64,
    pub per_domain_hours: BTreeMap<String, f64>,
    pub per_domain_fraction: BTreeMap<String, f64>,
    /// Target hours selected over all hours selected; `None` when nothing
    /// was selected.
    pub precision: Option<f64>,
    /// Target hours selected over target hours available.
    pub recall: f64,
    pub target_hours_available: f64,
}

pub fn evaluate_selection(
    result: &SelectionResult,
    manifest: &CorpusManifest,
    target_domain: &str,
) -> Result<SelectionReport, SynthError> {
    let mut available: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for rec in manifest.utterances() {
        let domain = rec
            .domain
            .as_ref()
            .ok_or_else(|| SynthError::MissingDomainLabels(rec.id.clone()))?;
        available.entry(domain.clone()).or_default().push(rec.duration_sec);
    }
    let target_available = available
        .get(target_domain)
        .ok_or_else(|| SynthError::UnknownDomain(target_domain.to_string()))?;
    let target_hours_available = compensated_sum(target_available.iter().copied()) / 3600.0;

    let mut chosen: BTreeMap<String, Vec<f64>> =
        available.keys().map(|d| (d.clone(), Vec::new())).collect();
    for id in result.ids() {
        let rec = manifest
            .get(id)
            .ok_or_else(|| SynthError::UnknownId(id.to_string()))?;
        let domain = rec.domain.as_ref().expect("checked above");
        chosen.get_mut(domain).expect("domain seen above").push(rec.duration_sec);
    }
    let per_domain_hours: BTreeMap<String, f64> = chosen
        .into_iter()
        .map(|(d, secs)| (d, compensated_sum(secs) / 3600.0))
        .collect();
    let total_hours = per_domain_hours.values().fold(0.0, |acc, h| acc + h);
    let per_domain_fraction = per_domain_hours
        .iter()
        .map(|(d, h)| (d.clone(), if total_hours > 0.0 { h / total_hours } else { 0.0 }))
        .collect();
    let target_selected = per_domain_hours[target_domain];
    Ok(SelectionReport {
        target_domain: target_domain.to_string(),
        selected_utterances: result.selected.len(),
        total_hours,
        per_domain_hours,
        per_domain_fraction,
        precision: (total_hours > 0.0).then(|| target_selected / total_hours),
        recall: target_selected / target_hours_available,
        target_hours_available,
    })
}

impl SelectionReport {
    /// Aligned plain-text rendering.
    pub fn to_table(&self) -> String {
        let width = self
            .per_domain_hours
            .keys()
            .map(String::len)
            .chain(["domain".len(), "total".len()])
            .max()
            .unwrap_or(6);
        let mut out = format!("{:<width$}  {:>10}  {:>9}\n", "domain", "hours", "fraction");
        for (domain, hours) in &self.per_domain_hours {
            let marker = if *domain == self.target_domain { " *" } else { "" };
            out.push_str(&format!(
                "{:<width$}  {:>10.4}  {:>8.2}%{marker}\n",
                domain,
                hours,
                100.0 * self.per_domain_fraction[domain]
            ));
        }
        out.push_str(&format!("{:<width$}  {:>10.4}\n", "total", self.total_hours));
        let precision = self
            .precision
            .map_or_else(|| "n/a".to_string(), |p| format!("{p:.4}"));
        out.push_str(&format!(
            "target {}: precision {precision}, recall {:.4}\n",
            self.target_domain, self.recall
        ));
        out
    }
}

/// Exact maximum of [`f_lr`] over all subsets of at most `cardinality`
/// utterances, by enumeration.
pub fn brute_force_optimum(scores: &[LrScore], cardinality: usize) -> Result<f64, SynthError> {
    if scores.len() > BRUTE_FORCE_LIMIT {
        return Err(SynthError::TooLarge { len: scores.len() });
    }
    let mut best = 0.0f64;
    let mut subset = Vec::with_capacity(scores.len());
    for mask in 0u32..(1u32 << scores.len()) {
        if mask.count_ones() as usize > cardinality {
            continue;
        }
        subset.clear();
        subset.extend(
            scores
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, s)| s.clone()),
        );
        best = best.max(f_lr(&subset));
    }
    Ok(best)
}
