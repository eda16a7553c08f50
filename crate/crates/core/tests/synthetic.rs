//! End-to-end behaviour on generated corpora, checked against what the
//! generator put there.

use std::fs;
use std::path::Path;

use lrselect_core::corpus::{CorpusManifest, FeatureMatrix};
use lrselect_core::gmm::{self, DiagonalGmm, EmConfig, FramePool};
use lrselect_core::scoring::{score_corpus, LrScore, ScoreMode};
use lrselect_core::selection::{auto_select, auto_threshold, greedy_select, AutoBudgetConfig, Budget};
use lrselect_core::synthbench::{
    evaluate_selection, generate_corpus, well_separated_domains, DomainSpec, MixtureComponent,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const DOMAINS: [&str; 6] = ["A", "B", "C", "D", "E", "F"];

fn six_domains() -> Vec<DomainSpec> {
    // Domain means sit at 4.9·e_i, so any two are 6.9σ apart.
    well_separated_domains(&DOMAINS, 10, 100, (60, 140), 5.0)
}

fn matrices_of(manifest: &CorpusManifest, domain: Option<&str>) -> Vec<FeatureMatrix> {
    manifest
        .utterances()
        .iter()
        .filter(|r| domain.is_none() || r.domain.as_deref() == domain)
        .map(|r| manifest.read_features(&r.id).unwrap())
        .collect()
}

fn train(matrices: &[FeatureMatrix], k: usize, seed: u64) -> DiagonalGmm {
    let pool = FramePool::from_matrices(matrices).unwrap();
    let config = EmConfig {
        seed,
        ..EmConfig::with_components(k)
    };
    gmm::fit(&pool, &config).unwrap().model
}

fn hashed_dir(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in [dir.to_path_buf(), dir.join("features")] {
        for entry in fs::read_dir(&sub).unwrap() {
            let path = entry.unwrap().path();
            if path.is_file() {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn generation_is_reproducible_and_seed_sensitive() {
    let specs = well_separated_domains(&DOMAINS[..3], 4, 5, (10, 20), 5.0);
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate_corpus(&specs, 4, 11, a.path()).unwrap();
    generate_corpus(&specs, 4, 11, b.path()).unwrap();
    generate_corpus(&specs, 4, 12, c.path()).unwrap();
    let (ha, hb, hc) = (hashed_dir(a.path()), hashed_dir(b.path()), hashed_dir(c.path()));
    assert_eq!(ha.len(), 16);
    assert_eq!(ha, hb);
    assert_ne!(ha, hc);
}

#[test]
fn generated_frames_follow_the_spec() {
    let spec = DomainSpec {
        name: "x".into(),
        mixture: vec![MixtureComponent {
            weight: 1.0,
            mean: vec![3.0, -1.0],
            variance: vec![4.0, 0.25],
        }],
        utterance_count: 40,
        frames_per_utterance: (100, 100),
        seed_offset: 0,
    };
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_corpus(&[spec], 2, 5, dir.path()).unwrap();
    assert_eq!(manifest.len(), 40);
    assert!(manifest.utterances().iter().all(|r| r.frame_count == 100 && r.duration_sec == 1.0));
    let pool = FramePool::from_matrices(&matrices_of(&manifest, None)).unwrap();
    let n = pool.len() as f64;
    for (d, (mu, var)) in [(3.0, 4.0), (-1.0, 0.25)].into_iter().enumerate() {
        let xs: Vec<f64> = (0..pool.len()).map(|i| pool.row(i)[d]).collect();
        let mean = xs.iter().sum::<f64>() / n;
        let sample_var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        // Four standard errors of the mean and of the variance.
        assert!((mean - mu).abs() < 4.0 * (var / n).sqrt(), "dim {d}: mean {mean}");
        assert!((sample_var - var).abs() < 4.0 * var * (2.0 / (n - 1.0)).sqrt(), "dim {d}: var {sample_var}");
    }
}

#[test]
fn per_domain_models_classify_held_out_frames() {
    let specs = six_domains();
    let (train_dir, test_dir) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let train_set = generate_corpus(&specs, 10, 1, train_dir.path()).unwrap();
    let test_set = generate_corpus(&specs, 10, 2, test_dir.path()).unwrap();
    let models: Vec<DiagonalGmm> = DOMAINS
        .iter()
        .map(|d| train(&matrices_of(&train_set, Some(d)), 8, 3))
        .collect();
    for (own, domain) in DOMAINS.iter().enumerate() {
        let (mut correct, mut total) = (0usize, 0usize);
        for m in matrices_of(&test_set, Some(domain)) {
            for row in m.rows() {
                let x: Vec<f64> = row.iter().map(|&v| f64::from(v)).collect();
                let ll: Vec<f64> = models.iter().map(|g| g.log_density(&x).unwrap()).collect();
                total += 1;
                if (0..ll.len()).all(|j| j == own || ll[own] > ll[j]) {
                    correct += 1;
                }
            }
        }
        let rate = correct as f64 / total as f64;
        assert!(rate >= 0.99, "domain {domain}: {rate}");
    }
}

#[test]
fn target_domain_scores_highest_and_is_selected() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_corpus(&six_domains(), 10, 21, dir.path()).unwrap();
    let target = train(&matrices_of(&manifest, Some("A")), 8, 0);
    let background = train(&matrices_of(&manifest, None), 8, 0);

    let scores = score_corpus(&target, &background, &manifest, ScoreMode::Geometric).unwrap();
    let mean = |in_a: bool| {
        let v: Vec<f64> = scores
            .iter()
            .filter(|s| s.id.starts_with("A-") == in_a)
            .map(|s| s.mean_log_lr)
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    assert!(mean(true) > mean(false));

    let mut ranked = scores.clone();
    ranked.sort_by(lrselect_core::selection::selection_order);
    assert!(ranked[..100].iter().all(|s| s.id.starts_with("A-")));

    let a_hours: f64 = manifest
        .utterances()
        .iter()
        .filter(|r| r.domain.as_deref() == Some("A"))
        .map(|r| r.duration_sec)
        .sum::<f64>()
        / 3600.0;
    let result = greedy_select(&scores, Budget::hours(a_hours * (1.0 + 1e-12)).unwrap()).unwrap();
    let report = evaluate_selection(&result, &manifest, "A").unwrap();
    assert!(report.precision.unwrap() >= 0.9, "{report:?}");
    let fraction_sum: f64 = report.per_domain_fraction.values().sum();
    assert!((fraction_sum - 1.0).abs() < 1e-12);
}

#[test]
fn held_out_target_frames_fit_the_target_model_better() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_corpus(&six_domains(), 10, 31, dir.path()).unwrap();
    let a = matrices_of(&manifest, Some("A"));
    let b = matrices_of(&manifest, Some("B"));
    let target = train(&a[..80], 8, 0);
    let held_out_a: f64 = a[80..].iter().map(|m| target.mean_log_likelihood(m).unwrap()).sum::<f64>() / 20.0;
    let held_out_b: f64 = b[80..].iter().map(|m| target.mean_log_likelihood(m).unwrap()).sum::<f64>() / 20.0;
    assert!(held_out_a > held_out_b);
}

fn normal_scores(prefix: &str, n: usize, mean: f64, sd: f64, rng: &mut ChaCha8Rng) -> Vec<LrScore> {
    let dist = Normal::new(mean, sd).unwrap();
    (0..n)
        .map(|i| LrScore {
            id: format!("{prefix}{i:04}"),
            mean_log_lr: dist.sample(rng),
            duration_sec: 1.0,
            frame_count: 100,
        })
        .collect()
}

fn two_components() -> AutoBudgetConfig {
    AutoBudgetConfig {
        num_components: 2,
        ..AutoBudgetConfig::default()
    }
}

#[test]
fn balanced_bimodal_threshold_lands_on_a_mode() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut scores = normal_scores("lo", 500, -2.0, 0.1, &mut rng);
    scores.extend(normal_scores("hi", 500, 2.0, 0.1, &mut rng));
    let t = auto_threshold(&scores, &two_components()).unwrap();
    assert!((t - 2.0).abs() <= 0.3 || (t + 2.0).abs() <= 0.3, "{t}");
}

#[test]
fn exact_weight_tie_goes_to_the_upper_mode() {
    // Mirror-image halves make the two fitted weights equal up to rounding.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let upper = normal_scores("hi", 400, 2.0, 0.1, &mut rng);
    let mut scores: Vec<LrScore> = upper
        .iter()
        .map(|s| LrScore {
            id: s.id.replace("hi", "lo"),
            mean_log_lr: -s.mean_log_lr,
            ..s.clone()
        })
        .collect();
    scores.extend(upper);
    let t = auto_threshold(&scores, &two_components()).unwrap();
    assert!((t - 2.0).abs() <= 0.3, "{t}");
}

#[test]
fn dominant_component_sets_the_threshold() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut scores = normal_scores("big", 700, 0.0, 0.1, &mut rng);
    scores.extend(normal_scores("small", 300, 5.0, 0.1, &mut rng));
    let t = auto_threshold(&scores, &two_components()).unwrap();
    assert!(t.abs() <= 0.3, "{t}");
}

#[test]
fn auto_select_keeps_the_upper_half_of_a_dominant_high_mode() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut scores = normal_scores("hi", 700, 5.0, 0.1, &mut rng);
    scores.extend(normal_scores("lo", 300, 0.0, 0.1, &mut rng));
    let result = auto_select(&scores, &two_components()).unwrap();
    let selected = result.selected.len();
    let hits = result.ids().filter(|id| id.starts_with("hi")).count();
    assert!(selected > 0);
    assert!(hits as f64 / selected as f64 >= 0.95);
    let t = result.threshold.unwrap();
    assert!(t > 0.0 && t < 5.0 + 4.0 * 0.1 / (700f64).sqrt(), "{t}");
}
