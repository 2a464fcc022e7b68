use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{AnalysisConfig, ExperimentConfig};
use crate::analysis::{
    capture_trace, gain_aggregation, residual_sigma, similarity_grid, wilcoxon_signed_rank, DatasetReports, Sequence,
};
use crate::dataio::{inverse_transform, preprocess_with, size_bucket, Matrix, PreprocessedDataset, SizeBucket};
use crate::error::{bail, Error, Result};
use crate::metrics::{evaluate, MetricsReport};
use crate::vae::{build_model, train, Component, ModelConfig, ModelVariant, TrainConfig, TrainReport, VaeModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Ok,
    Failed,
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    pub status: StageStatus,
    pub seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the run directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config: ExperimentConfig,
    pub versions: BTreeMap<String, String>,
    pub stages: Vec<StageRecord>,
    pub files: Vec<FileEntry>,
}

impl RunManifest {
    pub fn succeeded(&self) -> bool {
        self.stages.iter().all(|s| s.status != StageStatus::Failed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &StageRecord> {
        self.stages.iter().filter(|s| s.status == StageStatus::Failed)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path.display(), e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Summary of a dataset written next to its metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub name: String,
    pub bucket: SizeBucket,
    pub train_rows: usize,
    pub test_rows: usize,
    pub width: usize,
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent.display(), e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path.display(), e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

/// Build a model for `variant` and fit it on the dataset's training split.
pub fn train_variant(
    ds: &PreprocessedDataset,
    model: &ModelConfig,
    variant: ModelVariant,
    cfg: &TrainConfig,
    init_seed: u64,
    train_seed: u64,
) -> Result<(VaeModel<f32>, TrainReport)> {
    let mcfg = ModelConfig { variant, ..model.clone() };
    let mut m = build_model::<f32>(&ds.schema, &mcfg, init_seed)?;
    let report = train(&mut m, ds, cfg, train_seed)?;
    Ok((m, report))
}

/// Training history without wall-clock fields, so reruns match byte for byte.
pub fn write_train_report(report: &TrainReport, path: &Path) -> Result<()> {
    let mut v = serde_json::to_value(report)?;
    if let Some(map) = v.as_object_mut() {
        map.remove("seconds");
    }
    write_json(path, &v)
}

/// Sample `n` rows, write them as a raw CSV and return them in model layout.
pub fn write_synthetic(model: &VaeModel<f32>, ds: &PreprocessedDataset, n: usize, seed: u64, path: &Path) -> Result<Matrix> {
    let syn = model.sample(n, seed)?;
    if !syn.all_finite() {
        return Err(Error::NonFinite {
            term: "synthetic rows".into(),
            context: "sampling".into(),
        });
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent.display(), e))?;
    }
    inverse_transform(&syn, ds)?.write_csv(path)?;
    Ok(syn)
}

/// The leading test rows used for representation analysis.
pub fn analysis_rows(ds: &PreprocessedDataset, rows: usize) -> Matrix {
    let test = ds.test_x();
    let n = rows.min(test.rows());
    test.select_rows(&(0..n).collect::<Vec<_>>())
}

/// CKA grid and σ report for each requested stack, written as
/// `<component>_cka.{json,csv}` and `<component>_sigma.{json,csv}`.
pub fn analyze_model(
    model: &VaeModel<f32>,
    x: &Matrix,
    components: &[Component],
    centered: bool,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for &c in components {
        let trace = capture_trace(model, x, c)?;
        let grid = similarity_grid(&trace, c, centered)?;
        let sigma = residual_sigma(&trace)?;
        let name = c.as_str();
        let files = [
            (format!("{name}_cka.json"), serde_json::to_string_pretty(&grid)? + "\n"),
            (format!("{name}_cka.csv"), grid.to_csv()?),
            (format!("{name}_sigma.json"), serde_json::to_string_pretty(&sigma)? + "\n"),
            (format!("{name}_sigma.csv"), sigma.summary_csv()?),
        ];
        for (file, text) in files {
            let p = dir.join(file);
            write_bytes(&p, text.as_bytes())?;
            written.push(p);
        }
    }
    Ok(written)
}

/// Transformer positions present in `variant`.
pub fn components_of(variant: ModelVariant) -> Vec<Component> {
    Component::ALL.into_iter().filter(|c| variant.has(*c)).collect()
}

struct Stages {
    records: Vec<StageRecord>,
}

impl Stages {
    fn run<T>(&mut self, stage: &str, dataset: Option<&str>, variant: Option<ModelVariant>, f: impl FnOnce() -> Result<T>) -> Option<T> {
        let start = Instant::now();
        let out = f();
        let (status, message) = match &out {
            Ok(_) => (StageStatus::Ok, None),
            Err(e) => (StageStatus::Failed, Some(e.to_string())),
        };
        self.records.push(StageRecord {
            stage: stage.to_string(),
            dataset: dataset.map(str::to_string),
            variant: variant.map(|v| v.to_string()),
            status,
            seconds: start.elapsed().as_secs_f64(),
            message,
        });
        out.ok()
    }

    fn skip(&mut self, stage: &str, dataset: Option<&str>, variant: Option<ModelVariant>, why: &str) {
        self.records.push(StageRecord {
            stage: stage.to_string(),
            dataset: dataset.map(str::to_string),
            variant: variant.map(|v| v.to_string()),
            status: StageStatus::Skipped,
            seconds: 0.0,
            message: Some(why.to_string()),
        });
    }
}

/// Clear a previous run's directory; refuse to touch anything else.
fn prepare_run_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        let is_run = dir.join("manifest.json").is_file();
        let empty = fs::read_dir(dir).map_err(|e| Error::io(dir.display(), e))?.next().is_none();
        if is_run {
            fs::remove_dir_all(dir).map_err(|e| Error::io(dir.display(), e))?;
        } else if !empty {
            bail!(InvalidArgument, "{} exists and is not a previous run directory", dir.display());
        }
    }
    for sub in ["checkpoints", "synthetic", "metrics", "analysis"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(p.display(), e))?;
    }
    Ok(())
}

/// Every file under `dir` except the manifest, sorted by path.
pub fn hash_tree(dir: &Path) -> Result<Vec<FileEntry>> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<FileEntry>) -> Result<()> {
        let mut entries: Vec<_> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir.display(), e))?
            .collect::<std::io::Result<_>>()
            .map_err(|e| Error::io(dir.display(), e))?;
        entries.sort_by_key(|e| e.file_name());
        for e in entries {
            let p = e.path();
            if p.is_dir() {
                walk(root, &p, out)?;
                continue;
            }
            let rel = p.strip_prefix(root).expect("under root");
            let rel = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            if rel == "manifest.json" {
                continue;
            }
            let bytes = fs::read(&p).map_err(|err| Error::io(p.display(), err))?;
            out.push(FileEntry {
                path: rel,
                sha256: Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect(),
                bytes: bytes.len() as u64,
            });
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out)?;
    out.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(out)
}

/// Execute the whole pipeline for every dataset and variant and write
/// `<output_dir>/<run_id>/`. Stage failures are recorded in the manifest
/// rather than returned; check [`RunManifest::succeeded`].
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunManifest> {
    cfg.validate()?;
    let run_id = cfg.resolved_run_id()?;
    let dir = cfg.output_dir.join(&run_id);
    prepare_run_dir(&dir)?;
    let mut st = Stages { records: Vec::new() };

    for dcfg in &cfg.datasets {
        let name = dcfg.name.as_str();
        let seed = cfg.seeds.for_stage("preprocess", name);
        let ds = st.run("preprocess", Some(name), None, || {
            let ds = preprocess_with(&dcfg.load()?, seed, &cfg.preprocess)?;
            ds.save(&dir.join("checkpoints").join(name).join("preprocessed"))?;
            let info = DatasetInfo {
                name: name.to_string(),
                bucket: size_bucket(ds.splits.train.len()),
                train_rows: ds.splits.train.len(),
                test_rows: ds.splits.test.len(),
                width: ds.width(),
            };
            write_json(&dir.join("metrics").join(name).join("dataset.json"), &info)?;
            Ok(ds)
        });
        let Some(ds) = ds else { continue };
        let real_train = ds.train_x();
        let real_test = ds.test_x();

        for &variant in &cfg.variants {
            let scope = format!("{name}/{variant}");
            let vname = variant.to_string();
            let trained = st.run("train", Some(name), Some(variant), || {
                let (m, report) = train_variant(
                    &ds,
                    &cfg.model,
                    variant,
                    &cfg.train,
                    cfg.seeds.for_stage("init", &scope),
                    cfg.seeds.for_stage("train", &scope),
                )?;
                let ck = dir.join("checkpoints").join(name).join(&vname);
                m.save(&ck)?;
                write_train_report(&report, &ck.join("train.json"))?;
                Ok(m)
            });
            let Some(model) = trained else { continue };

            let n = cfg.synthetic_rows.unwrap_or(real_train.rows());
            let syn = st.run("sample", Some(name), Some(variant), || {
                let path = dir.join("synthetic").join(name).join(format!("{vname}.csv"));
                write_synthetic(&model, &ds, n, cfg.seeds.for_stage("sample", &scope), &path)
            });
            if let Some(syn) = syn {
                st.run("evaluate", Some(name), Some(variant), || {
                    let rep = evaluate(&real_train, &syn, &real_test, &ds, &cfg.metrics, cfg.seeds.for_stage("metrics", &scope))?;
                    rep.write(&dir.join("metrics").join(name).join(&vname))
                });
            }

            analyze_stage(&mut st, &cfg.analysis, &model, &ds, &dir.join("analysis").join(name).join(&vname), name, variant);
        }
    }

    st.run("report", None, None, || report(&dir));
    let files = hash_tree(&dir)?;
    let manifest = RunManifest {
        run_id,
        config: cfg.clone(),
        versions: BTreeMap::from([
            ("tabgen".to_string(), env!("CARGO_PKG_VERSION").to_string()),
            ("manifest".to_string(), "1".to_string()),
        ]),
        stages: st.records,
        files,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

fn analyze_stage(
    st: &mut Stages,
    cfg: &AnalysisConfig,
    model: &VaeModel<f32>,
    ds: &PreprocessedDataset,
    dir: &Path,
    dataset: &str,
    variant: ModelVariant,
) {
    let components = components_of(variant);
    if !cfg.enabled {
        st.skip("analyze", Some(dataset), Some(variant), "analysis disabled");
    } else if components.is_empty() {
        st.skip("analyze", Some(dataset), Some(variant), "no Transformer stacks");
    } else {
        st.run("analyze", Some(dataset), Some(variant), || {
            analyze_model(model, &analysis_rows(ds, cfg.rows), &components, cfg.centered, dir)
        });
    }
}

/// Files written by [`report`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportOutputs {
    pub files: Vec<PathBuf>,
    /// Why optional tables were not produced.
    pub notes: Vec<String>,
}

fn collect_reports(run_dir: &Path) -> Result<Vec<DatasetReports>> {
    let metrics = run_dir.join("metrics");
    let mut out = Vec::new();
    let mut names: Vec<_> = fs::read_dir(&metrics)
        .map_err(|e| Error::io(metrics.display(), e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.path())
        .collect();
    names.sort();
    for ddir in names {
        let info_path = ddir.join("dataset.json");
        if !info_path.is_file() {
            continue;
        }
        let text = fs::read_to_string(&info_path).map_err(|e| Error::io(info_path.display(), e))?;
        let info: DatasetInfo = serde_json::from_str(&text)?;
        let mut reports = BTreeMap::new();
        for v in ModelVariant::ALL {
            let p = ddir.join(v.name()).join("metrics.json");
            if p.is_file() {
                reports.insert(v, MetricsReport::read(&p)?);
            }
        }
        out.push(DatasetReports {
            dataset: info.name,
            bucket: info.bucket,
            reports,
        });
    }
    Ok(out)
}

/// Rebuild the cross-variant tables of a run from its metrics files:
/// `metrics/summary.csv`, `analysis/gains_<sequence>.csv` for every sequence
/// whose variants were all scored, and `analysis/wilcoxon.csv` against the
/// base VAE once at least six datasets are available.
pub fn report(run_dir: &Path) -> Result<ReportOutputs> {
    let datasets = collect_reports(run_dir)?;
    if datasets.iter().all(|d| d.reports.is_empty()) {
        bail!(Data, "{} holds no metrics reports", run_dir.display());
    }
    let mut out = ReportOutputs::default();

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["dataset", "bucket", "variant"];
    header.extend(MetricsReport::METRIC_NAMES);
    w.write_record(&header)?;
    for d in &datasets {
        for (v, r) in &d.reports {
            let mut rec = vec![d.dataset.clone(), d.bucket.as_str().to_string(), v.to_string()];
            rec.extend(r.scores().iter().map(|(_, s)| s.to_string()));
            w.write_record(&rec)?;
        }
    }
    let p = run_dir.join("metrics").join("summary.csv");
    write_bytes(&p, &w.into_inner().map_err(|e| Error::Data(e.to_string()))?)?;
    out.files.push(p);

    for seq in [Sequence::Forward, Sequence::Backward] {
        let complete: Vec<DatasetReports> = datasets
            .iter()
            .filter(|d| seq.variants().iter().all(|v| d.reports.contains_key(v)))
            .cloned()
            .collect();
        if complete.is_empty() {
            out.notes.push(format!("{seq} gains: no dataset has all of its variants"));
            continue;
        }
        let table = gain_aggregation(&complete, seq)?;
        let p = run_dir.join("analysis").join(format!("gains_{seq}.csv"));
        write_bytes(&p, table.to_csv()?.as_bytes())?;
        out.files.push(p);
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["variant", "baseline", "metric", "datasets", "statistic", "p_value", "method"])?;
    let mut rows = 0;
    for v in ModelVariant::ALL.into_iter().filter(|v| *v != ModelVariant::VAE) {
        let paired: Vec<&DatasetReports> = datasets
            .iter()
            .filter(|d| d.reports.contains_key(&v) && d.reports.contains_key(&ModelVariant::VAE))
            .collect();
        if paired.len() < 6 {
            continue;
        }
        for (k, metric) in MetricsReport::METRIC_NAMES.iter().enumerate() {
            let a: Vec<f64> = paired.iter().map(|d| d.reports[&v].scores()[k].1).collect();
            let b: Vec<f64> = paired.iter().map(|d| d.reports[&ModelVariant::VAE].scores()[k].1).collect();
            let (stat, p, method) = match wilcoxon_signed_rank(&a, &b) {
                Ok(r) => (r.statistic.to_string(), r.p_value.to_string(), format!("{:?}", r.method).to_lowercase()),
                Err(_) => (String::new(), String::new(), "no differences".to_string()),
            };
            w.write_record([v.to_string(), "VAE".into(), metric.to_string(), paired.len().to_string(), stat, p, method])?;
            rows += 1;
        }
    }
    if rows > 0 {
        let p = run_dir.join("analysis").join("wilcoxon.csv");
        write_bytes(&p, &w.into_inner().map_err(|e| Error::Data(e.to_string()))?)?;
        out.files.push(p);
    } else {
        out.notes.push("wilcoxon: fewer than 6 paired datasets".into());
    }
    Ok(out)
}
