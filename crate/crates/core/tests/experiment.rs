use std::fs;
use std::path::Path;

use tabgen::experiment::{hash_tree, run_experiment, DatasetConfig, ExperimentConfig, RunManifest, StageStatus};
use tabgen::vae::ModelVariant;

fn small_config(out: &Path, variants: &[ModelVariant]) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        run_id: Some("t".into()),
        output_dir: out.to_path_buf(),
        datasets: vec![DatasetConfig { rows: 300, ..DatasetConfig::default() }],
        variants: variants.to_vec(),
        ..ExperimentConfig::default()
    };
    cfg.train.epochs = 2;
    cfg.analysis.rows = 32;
    cfg.synthetic_rows = Some(150);
    cfg
}

fn listed(m: &RunManifest, path: &str) -> bool {
    m.files.iter().any(|f| f.path == path)
}

#[test]
fn single_variant_run_lists_its_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let m = run_experiment(&small_config(tmp.path(), &[ModelVariant::VAE])).unwrap();
    assert!(m.succeeded(), "{:?}", m.failures().collect::<Vec<_>>());
    for p in [
        "checkpoints/gaussian_mixture/VAE/model.json",
        "checkpoints/gaussian_mixture/VAE/train.json",
        "synthetic/gaussian_mixture/VAE.csv",
        "metrics/gaussian_mixture/VAE/metrics.json",
        "metrics/summary.csv",
    ] {
        assert!(listed(&m, p), "{p} missing from manifest");
    }
    let analyze = m.stages.iter().find(|s| s.stage == "analyze").unwrap();
    assert_eq!(analyze.status, StageStatus::Skipped);

    let dir = tmp.path().join("t");
    assert_eq!(hash_tree(&dir).unwrap(), m.files);
    let stored = RunManifest::read(&dir.join("manifest.json")).unwrap();
    assert_eq!(stored, m);
    let syn = fs::read_to_string(dir.join("synthetic/gaussian_mixture/VAE.csv")).unwrap();
    assert_eq!(syn.lines().count(), 151);
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), &[ModelVariant::VAE, ModelVariant::D_VAE]);
    let first = run_experiment(&cfg).unwrap();
    let again = run_experiment(&cfg).unwrap();
    assert!(first.succeeded());
    assert_eq!(first.files, again.files);
    assert!(listed(&first, "analysis/gaussian_mixture/D-VAE/dec_cka.csv"));
    assert!(listed(&first, "analysis/gaussian_mixture/D-VAE/dec_sigma.json"));
}

#[test]
fn forward_sequence_gains() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config(
        tmp.path(),
        &[ModelVariant::VAE, ModelVariant::E_VAE, ModelVariant::EL_VAE, ModelVariant::ELD_VAE],
    );
    cfg.train.epochs = 1;
    cfg.analysis.enabled = false;
    let m = run_experiment(&cfg).unwrap();
    assert!(m.succeeded());
    let gains = fs::read_to_string(tmp.path().join("t/analysis/gains_forward.csv")).unwrap();
    let transitions: Vec<&str> = gains.lines().skip(1).filter(|l| !l.contains(",,")).collect();
    assert_eq!(transitions.len(), 3, "{gains}");
    assert!(transitions[0].starts_with("forward,small,VAE,E-VAE,1,"));
    assert!(!tmp.path().join("t/analysis/gains_backward.csv").exists());
}

#[test]
fn stage_failures_are_recorded() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config(tmp.path(), &[ModelVariant::VAE]);
    cfg.datasets.push(DatasetConfig {
        name: "missing".into(),
        csv: Some(tmp.path().join("nope.csv")),
        schema: Some(tmp.path().join("nope.json")),
        ..DatasetConfig::default()
    });
    let m = run_experiment(&cfg).unwrap();
    assert!(!m.succeeded());
    let failed: Vec<_> = m.failures().collect();
    assert_eq!(failed.len(), 1);
    assert_eq!(failed[0].stage, "preprocess");
    assert_eq!(failed[0].dataset.as_deref(), Some("missing"));
    assert!(listed(&m, "metrics/gaussian_mixture/VAE/metrics.json"));
}

#[test]
fn refuses_foreign_directories() {
    let tmp = tempfile::tempdir().unwrap();
    fs::create_dir_all(tmp.path().join("t")).unwrap();
    fs::write(tmp.path().join("t/keep.txt"), "x").unwrap();
    assert!(run_experiment(&small_config(tmp.path(), &[ModelVariant::VAE])).is_err());
    assert!(tmp.path().join("t/keep.txt").exists());
}
