use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;
use lrselect_core::corpus::{CorpusError, CorpusManifest, FeatureMatrix};
use lrselect_core::gmm::{self, DiagonalGmm, EmConfig, FramePool, GmmError, ModelMetadata};
use lrselect_core::scoring::{self, LrScore, ScoreMode, ScoreRow};
use lrselect_core::selection::{self, AutoBudgetConfig, Budget, SelectionDocument};
use lrselect_core::synthbench::{self, SynthError, MANIFEST_FILE};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::error::CliError;

fn print_json<T: Serialize>(value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("output types serialize");
    let mut out = std::io::stdout().lock();
    writeln!(out, "{text}").map_err(|e| CliError::Io(format!("cannot write to stdout: {e}")))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::write_failed(path, e))
}

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if !path.exists() {
        Err(CliError::usage(format!("{what} {} does not exist", path.display())))
    } else if path.is_dir() {
        Err(CliError::usage(format!("{what} {} is a directory", path.display())))
    } else {
        Ok(())
    }
}

pub fn gen(spec: &Path, out_dir: &Path, dim: Option<usize>, seed: u64) -> Result<(), CliError> {
    require_file(spec, "spec file")?;
    let specs = synthbench::load_domain_specs(spec)?;
    let dim = match dim.or_else(|| synthbench::spec_dim(&specs)) {
        Some(d) => d,
        None => return Err(CliError::usage("spec file defines no mixture components")),
    };
    synthbench::validate_specs(&specs, dim)?;

    let manifest = synthbench::generate_corpus(&specs, dim, seed, out_dir).map_err(|e| match e {
        SynthError::Io { .. } | SynthError::Corpus(CorpusError::Io { .. }) => CliError::Io(e.to_string()),
        other => other.into(),
    })?;
    info!("wrote {} utterances to {}", manifest.len(), out_dir.display());
    print_json(&json!({
        "manifest": out_dir.join(MANIFEST_FILE),
        "utterances": manifest.len(),
        "feature_dim": manifest.feature_dim(),
        "total_hours": manifest.total_hours(),
    }))
}

pub struct TrainArgs<'a> {
    pub manifest: &'a Path,
    pub ids_file: Option<&'a Path>,
    pub out_model: &'a Path,
    pub config: EmConfig,
}

/// Reads an id list: one id per line, blank lines and `#` comments skipped.
fn read_id_list(path: &Path) -> Result<Vec<String>, CliError> {
    require_file(path, "ids file")?;
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
    let mut seen = HashSet::new();
    let mut ids = Vec::new();
    for line in text.lines().map(str::trim) {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !seen.insert(line) {
            return Err(CliError::usage(format!("duplicate id {line:?} in {}", path.display())));
        }
        ids.push(line.to_string());
    }
    if ids.is_empty() {
        return Err(CliError::usage(format!("{} lists no ids", path.display())));
    }
    Ok(ids)
}

/// SHA-256 over each training utterance's id, a NUL separator and its
/// frame values as little-endian `f32`.
fn fingerprint(ids: &[String], matrices: &[FeatureMatrix]) -> String {
    let mut h = Sha256::new();
    for (id, m) in ids.iter().zip(matrices) {
        h.update(id.as_bytes());
        h.update([0u8]);
        for v in m.as_slice() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

pub fn train_gmm(args: TrainArgs<'_>) -> Result<(), CliError> {
    args.config.validate()?;
    require_file(args.manifest, "manifest")?;
    let manifest = CorpusManifest::load(args.manifest)?;
    let ids: Vec<String> = match args.ids_file {
        Some(path) => {
            let ids = read_id_list(path)?;
            manifest.select(&ids)?;
            ids
        }
        None => manifest.utterances().iter().map(|r| r.id.clone()).collect(),
    };
    if ids.is_empty() {
        return Err(CliError::usage("manifest lists no utterances"));
    }
    let matrices: Vec<FeatureMatrix> = ids
        .par_iter()
        .map(|id| manifest.read_features(id))
        .collect::<Result<_, _>>()?;
    let pool = FramePool::from_matrices(&matrices)?;
    info!(
        "training K={} on {} frames from {} utterances",
        args.config.num_components,
        pool.len(),
        ids.len()
    );
    let fit = gmm::fit(&pool, &args.config)?;
    let metadata = ModelMetadata {
        seed: args.config.seed,
        config: args.config.clone(),
        corpus_fingerprint: fingerprint(&ids, &matrices),
        frames: pool.len(),
        iterations: fit.iterations,
        converged: fit.converged,
        final_log_likelihood: fit.final_log_likelihood(),
    };
    fit.model
        .save(args.out_model, Some(metadata.clone()))
        .map_err(|e| CliError::write_failed(args.out_model, e))?;
    print_json(&json!({
        "model": args.out_model,
        "components": fit.model.num_components(),
        "dim": fit.model.dim(),
        "utterances": ids.len(),
        "frames": pool.len(),
        "iterations": fit.iterations,
        "converged": fit.converged,
        "reseeded": fit.reseeded,
        "final_log_likelihood": fit.final_log_likelihood(),
        "log_likelihood_trace": fit.log_likelihood_trace,
        "corpus_fingerprint": metadata.corpus_fingerprint,
    }))
}

fn load_model(path: &Path, role: &str) -> Result<DiagonalGmm, CliError> {
    require_file(path, &format!("{role} model"))?;
    match DiagonalGmm::load(path) {
        Ok((model, _)) => Ok(model),
        Err(e @ (GmmError::Io { .. } | GmmError::Json { .. } | GmmError::InvalidModel(_))) => {
            Err(CliError::usage(format!("{role} model: {e}")))
        }
        Err(e) => Err(e.into()),
    }
}

pub fn score(
    manifest_path: &Path,
    target: &Path,
    background: &Path,
    mode: ScoreMode,
    out_csv: &Path,
) -> Result<(), CliError> {
    require_file(manifest_path, "manifest")?;
    let manifest = CorpusManifest::load(manifest_path)?;
    let target = load_model(target, "target")?;
    let background = load_model(background, "background")?;
    let scores = scoring::score_corpus(&target, &background, &manifest, mode)?;
    let rows = ScoreRow::from_manifest(scores, &manifest, mode);
    let mut buf = Vec::new();
    scoring::write_score_rows(&mut buf, &rows).expect("writing to memory cannot fail");
    write_file(out_csv, &buf)?;

    let values: Vec<f64> = rows.iter().map(|r| r.score.mean_log_lr).collect();
    let min = values.iter().copied().reduce(f64::min);
    let max = values.iter().copied().reduce(f64::max);
    print_json(&json!({
        "scores": out_csv,
        "utterances": rows.len(),
        "mode": mode,
        "min_mean_log_lr": min,
        "max_mean_log_lr": max,
    }))
}

pub enum SelectRule {
    Hours(f64),
    Count(usize),
    Auto(AutoBudgetConfig),
}

pub fn select(scores_csv: &Path, rule: SelectRule, out_json: &Path, out_ids: &Path) -> Result<(), CliError> {
    let budget = match &rule {
        SelectRule::Hours(h) => Some(Budget::hours(*h)?),
        SelectRule::Count(n) => Some(Budget::count(*n)?),
        SelectRule::Auto(cfg) => {
            if cfg.num_components == 0 || cfg.max_iterations == 0 {
                return Err(CliError::usage(
                    "--auto-components and --max-iterations must be at least 1",
                ));
            }
            None
        }
    };
    if out_json == out_ids {
        return Err(CliError::usage("--out-json and --out-ids must differ"));
    }
    require_file(scores_csv, "score file")?;
    let rows = scoring::load_scores(scores_csv)?;
    if rows.is_empty() {
        return Err(CliError::usage(format!("{} contains no scores", scores_csv.display())));
    }
    let scores: Vec<LrScore> = rows.iter().map(|r| r.score.clone()).collect();
    let result = match (&rule, budget) {
        (SelectRule::Auto(cfg), _) => selection::auto_select(&scores, cfg)?,
        (_, Some(b)) => selection::greedy_select(&scores, b)?,
        (_, None) => unreachable!("budget rules always carry a budget"),
    };
    let domains: HashMap<&str, &str> = rows
        .iter()
        .filter_map(|r| Some((r.score.id.as_str(), r.domain.as_deref()?)))
        .collect();
    let doc = SelectionDocument::new(&result, |id| domains.get(id).copied());
    let mut text = serde_json::to_string_pretty(&doc).expect("selection serializes");
    text.push('\n');
    write_file(out_json, text.as_bytes())?;
    write_file(out_ids, doc.id_list().as_bytes())?;
    print_json(&json!({
        "selection": out_json,
        "ids": out_ids,
        "mode": doc.mode,
        "threshold": doc.threshold,
        "selected": doc.selected.len(),
        "total_hours": doc.total_hours,
        "objective_value": doc.objective_value,
    }))
}

pub fn report(
    selection_json: &Path,
    manifest_path: &Path,
    target_domain: &str,
    pretty: bool,
    out_json: Option<&PathBuf>,
) -> Result<(), CliError> {
    require_file(selection_json, "selection file")?;
    require_file(manifest_path, "manifest")?;
    let text = fs::read_to_string(selection_json)
        .map_err(|e| CliError::usage(format!("cannot read {}: {e}", selection_json.display())))?;
    let doc: SelectionDocument = serde_json::from_str(&text)
        .map_err(|e| CliError::usage(format!("malformed selection file {}: {e}", selection_json.display())))?;
    let manifest = CorpusManifest::load(manifest_path)?;
    let report = synthbench::evaluate_selection(&doc.into_result(), &manifest, target_domain)?;
    if let Some(path) = out_json {
        let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
        text.push('\n');
        write_file(path, text.as_bytes())?;
    }
    if pretty {
        print!("{}", report.to_table());
        Ok(())
    } else {
        eprint!("{}", report.to_table());
        print_json(&report)
    }
}
