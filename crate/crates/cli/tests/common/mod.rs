#![allow(dead_code)]

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lrselect_core::corpus::CorpusManifest;
use lrselect_core::synthbench::{well_separated_domains, DomainSpec};

pub const DOMAINS: [&str; 6] = ["A", "B", "C", "D", "E", "F"];

/// Runs the binary in `cwd` with logging silenced.
pub fn lrselect(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lrselect"))
        .current_dir(cwd)
        .args(args)
        .env_remove("LRSELECT_THREADS")
        .env("LRSELECT_LOG", "off")
        .output()
        .expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            stderr(out)
        )
    })
}

/// Runs and requires exit 0.
pub fn ok(cwd: &Path, args: &[&str]) -> Output {
    let out = lrselect(cwd, args);
    assert_eq!(code(&out), 0, "lrselect {args:?} failed: {}", stderr(&out));
    out
}

/// Six domains in D=10 with means 4.9·e_i, so every pair is 6.9σ apart.
pub fn six_domain_specs(utterances: usize) -> Vec<DomainSpec> {
    well_separated_domains(&DOMAINS, 10, utterances, (60, 140), 5.0)
}

pub fn write_spec(path: &Path, specs: &[DomainSpec]) {
    fs::write(path, serde_json::to_string_pretty(specs).unwrap()).unwrap();
}

pub fn domain_ids(manifest: &Path, domain: &str) -> Vec<String> {
    CorpusManifest::load(manifest)
        .unwrap()
        .utterances()
        .iter()
        .filter(|r| r.domain.as_deref() == Some(domain))
        .map(|r| r.id.clone())
        .collect()
}

pub fn domain_hours(manifest: &Path, domain: &str) -> f64 {
    CorpusManifest::load(manifest)
        .unwrap()
        .utterances()
        .iter()
        .filter(|r| r.domain.as_deref() == Some(domain))
        .map(|r| r.duration_sec)
        .sum::<f64>()
        / 3600.0
}

/// gen → train target on domain A → train background → score → select
/// with a budget equal to domain A's hours → report, all inside `dir`.
/// Every command's stdout is appended to `dir/pipeline.log`. Returns the
/// parsed report.
pub fn run_pipeline(dir: &Path, seed: u64) -> serde_json::Value {
    let seed = seed.to_string();
    write_spec(&dir.join("spec.json"), &six_domain_specs(100));
    let common = ["--seed", seed.as_str(), "--threads", "1"];
    let with = |rest: &[&str]| -> Vec<String> {
        common.iter().chain(rest).map(|s| s.to_string()).collect()
    };
    let log = std::cell::RefCell::new(Vec::new());
    let run = |args: Vec<String>| {
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let out = ok(dir, &refs);
        log.borrow_mut().extend_from_slice(&out.stdout);
        out
    };
    run(with(&["gen", "--spec", "spec.json", "--out-dir", "corpus"]));
    let manifest = dir.join("corpus/manifest.jsonl");
    let mut ids = domain_ids(&manifest, "A").join("\n");
    ids.push('\n');
    fs::write(dir.join("target.ids"), ids).unwrap();
    run(with(&[
        "train-gmm", "--manifest", "corpus/manifest.jsonl", "--ids-file", "target.ids", "--k", "8",
        "--out-model", "target.json",
    ]));
    run(with(&["train-gmm", "--manifest", "corpus/manifest.jsonl", "--k", "8", "--out-model", "background.json"]));
    run(with(&[
        "score", "--manifest", "corpus/manifest.jsonl", "--target-model", "target.json",
        "--background-model", "background.json", "--out-csv", "scores.csv",
    ]));
    let hours = domain_hours(&manifest, "A").to_string();
    run(with(&[
        "select", "--scores", "scores.csv", "--budget-hours", hours.as_str(), "--out-json", "selection.json",
        "--out-ids", "selection.ids",
    ]));
    let out = run(with(&[
        "report", "--selection", "selection.json", "--manifest", "corpus/manifest.jsonl", "--target-domain", "A",
        "--out-json", "report.json",
    ]));
    fs::write(dir.join("pipeline.log"), log.into_inner()).unwrap();
    stdout_json(&out)
}
