use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::dataio::{load_csv, PreprocessOptions, RawTable};
use crate::datasets;
use crate::error::{bail, Error, Result};
use crate::metrics::MetricsConfig;
use crate::numerics::derive_seed;
use crate::vae::{ModelConfig, ModelVariant, TrainConfig};

/// A bundled generator or a CSV file with its schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    /// Output subdirectory name; also selects the generator when `csv` is unset
    /// (`gaussian_mixture`, `xor_blobs`, `mixed_six`).
    pub name: String,
    pub csv: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    /// Row count for generated tables.
    pub rows: usize,
    /// Generator seed.
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            name: "gaussian_mixture".into(),
            csv: None,
            schema: None,
            rows: 2000,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn load(&self) -> Result<RawTable> {
        match (&self.csv, &self.schema) {
            (Some(csv), Some(schema)) => load_csv(csv, schema),
            (Some(_), None) | (None, Some(_)) => {
                bail!(InvalidArgument, "dataset `{}` needs both csv and schema", self.name)
            }
            (None, None) => generate(&self.name, self.rows, self.seed),
        }
    }
}

/// One of the bundled toy tables.
pub fn generate(name: &str, rows: usize, seed: u64) -> Result<RawTable> {
    match name {
        "gaussian_mixture" => Ok(datasets::gaussian_mixture(rows, seed)),
        "xor_blobs" => Ok(datasets::xor_blobs(rows, seed)),
        "mixed_six" => Ok(datasets::mixed_six(rows, seed)),
        _ => bail!(InvalidArgument, "no bundled dataset `{}`; give csv and schema paths", name),
    }
}

/// Per-stage seeds. Unset stages derive theirs from `global`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Seeds {
    pub global: u64,
    pub preprocess: Option<u64>,
    pub init: Option<u64>,
    pub train: Option<u64>,
    pub sample: Option<u64>,
    pub metrics: Option<u64>,
}

impl Seeds {
    /// Seed of `stage` for one (dataset, variant) cell.
    pub fn for_stage(&self, stage: &str, scope: &str) -> u64 {
        let fixed = match stage {
            "preprocess" => self.preprocess,
            "init" => self.init,
            "train" => self.train,
            "sample" => self.sample,
            "metrics" => self.metrics,
            _ => None,
        };
        fixed.unwrap_or_else(|| derive_seed(self.global, &format!("{stage}/{scope}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    pub enabled: bool,
    /// Test rows fed through the captured stacks.
    pub rows: usize,
    pub centered: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            enabled: true,
            rows: 256,
            centered: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Defaults to a hash of the rest of the config.
    pub run_id: Option<String>,
    pub output_dir: PathBuf,
    pub datasets: Vec<DatasetConfig>,
    pub variants: Vec<ModelVariant>,
    /// Shared model settings; `variant` is replaced per run.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub preprocess: PreprocessOptions,
    pub seeds: Seeds,
    pub metrics: MetricsConfig,
    pub analysis: AnalysisConfig,
    /// Synthetic rows per model; defaults to the training split size.
    pub synthetic_rows: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            run_id: None,
            output_dir: PathBuf::from("out"),
            datasets: vec![DatasetConfig::default()],
            variants: vec![ModelVariant::VAE],
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            preprocess: PreprocessOptions::default(),
            seeds: Seeds::default(),
            metrics: MetricsConfig::default(),
            analysis: AnalysisConfig::default(),
            synthetic_rows: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path.display(), e))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        Ok(cfg)
    }

    /// Apply `(dotted.path, value)` overrides. Values parse as JSON when they
    /// can and fall back to plain strings, so `train.epochs=50` and
    /// `variants=["VAE","LD-VAE"]` both work. Unknown paths are rejected.
    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<Self> {
        let mut v = serde_json::to_value(self)?;
        for (path, raw) in overrides {
            let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.clone()));
            set_path(&mut v, path, value)?;
        }
        serde_json::from_value(v).map_err(|e| Error::InvalidArgument(format!("config override: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() {
            bail!(InvalidArgument, "config lists no variants");
        }
        if self.datasets.is_empty() {
            bail!(InvalidArgument, "config lists no datasets");
        }
        let mut names: Vec<&str> = self.datasets.iter().map(|d| d.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            bail!(InvalidArgument, "dataset names must be unique");
        }
        if names.iter().any(|n| n.is_empty() || n.contains(['/', '\\']) || *n == "." || *n == "..") {
            bail!(InvalidArgument, "dataset names must be plain directory names");
        }
        for v in &self.variants {
            ModelConfig { variant: *v, ..self.model.clone() }.validate()?;
        }
        if let Some(id) = &self.run_id {
            if id.is_empty() || id.contains(['/', '\\']) || id == "." || id == ".." {
                bail!(InvalidArgument, "run_id `{}` is not a plain directory name", id);
            }
        }
        Ok(())
    }

    /// `run_id` if set, else the first 12 hex digits of the SHA-256 of the
    /// config JSON.
    pub fn resolved_run_id(&self) -> Result<String> {
        if let Some(id) = &self.run_id {
            return Ok(id.clone());
        }
        let bytes = serde_json::to_vec(self)?;
        let digest = Sha256::digest(&bytes);
        Ok(digest[..6].iter().map(|b| format!("{b:02x}")).collect())
    }
}

fn set_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, key) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        cur = match cur {
            Value::Object(map) => {
                if !map.contains_key(*key) {
                    bail!(InvalidArgument, "unknown config field `{}`", path);
                }
                let slot = map.get_mut(*key).expect("checked");
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            Value::Array(items) => {
                let idx: usize = key
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("`{}`: `{}` is not an index", path, key)))?;
                let len = items.len();
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| Error::InvalidArgument(format!("`{}`: index {} out of {}", path, idx, len)))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => bail!(InvalidArgument, "unknown config field `{}`", path),
        };
    }
    bail!(InvalidArgument, "empty config path")
}
