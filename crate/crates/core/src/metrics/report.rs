use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::columns::{FeatureScore, FeatureTable};
use super::density::{alpha_precision, beta_recall, quantile_grid, BetaMatch, CurvePoint, NeighbourSet, DEFAULT_K};
use super::gbt::{gbt_train, ClassifierConfig};
use super::marginal::marginals_score;
use super::ml::{accuracy, features_and_labels, ml_efficiency, single_class, MlEfficiency};
use super::pairwise::{pairwise_score, PairScore, PairwiseReport, DEFAULT_BINS};
use crate::dataio::{inverse_transform, Matrix, PreprocessedDataset};
use crate::error::{bail, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    pub bins: usize,
    pub k: usize,
    /// Number of quantile levels `j / (n + 1)` for α and β.
    pub grid: usize,
    pub nnd: NeighbourSet,
    pub beta_match: BetaMatch,
    pub classifier: ClassifierConfig,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            bins: DEFAULT_BINS,
            k: DEFAULT_K,
            grid: 30,
            nnd: NeighbourSet::Real,
            beta_match: BetaMatch::Nearest,
            classifier: ClassifierConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub marginals: f64,
    pub pairwise_correlations: f64,
    pub alpha_precision: f64,
    pub beta_recall: f64,
    pub utility: f64,
    pub ml_fidelity: f64,
    pub marginal_features: Vec<FeatureScore>,
    pub pairs: Vec<PairScore>,
    pub alpha_curve: Vec<CurvePoint>,
    pub beta_curve: Vec<CurvePoint>,
    /// Set when the synthetic labels hold one class and the synthetic-side
    /// classifier degenerates to that constant.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ml_note: Option<String>,
}

impl MetricsReport {
    pub const METRIC_NAMES: [&'static str; 6] = [
        "marginals",
        "pairwise_correlations",
        "alpha_precision",
        "beta_recall",
        "utility",
        "ml_fidelity",
    ];

    pub fn scores(&self) -> [(&'static str, f64); 6] {
        let v = [
            self.marginals,
            self.pairwise_correlations,
            self.alpha_precision,
            self.beta_recall,
            self.utility,
            self.ml_fidelity,
        ];
        std::array::from_fn(|i| (Self::METRIC_NAMES[i], v[i]))
    }

    pub fn score(&self, name: &str) -> Option<f64> {
        self.scores().iter().find(|(n, _)| *n == name).map(|(_, v)| *v)
    }

    /// Write `metrics.json` and `pairs.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir.display(), e))?;
        let path = dir.join("metrics.json");
        fs::write(&path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path.display(), e))?;
        let pairs = PairwiseReport { score: self.pairwise_correlations, pairs: self.pairs.clone() };
        pairs.write_csv(&dir.join("pairs.csv"))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path.display(), e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Constant-prediction fallback used when the synthetic labels hold one class.
fn constant_ml(real_train: &Matrix, class: usize, real_test: &Matrix, ds: &PreprocessedDataset, cfg: &MetricsConfig, seed: u64) -> Result<MlEfficiency> {
    let (xr, yr) = features_and_labels(real_train, &ds.layout)?;
    let (xt, yt) = features_and_labels(real_test, &ds.layout)?;
    let pr = gbt_train(&xr, &yr, ds.layout.target().len, &cfg.classifier, seed)?.predict(&xt)?;
    let ps = vec![class; yt.len()];
    Ok(MlEfficiency { utility: accuracy(&ps, &yt), ml_fidelity: accuracy(&ps, &pr) })
}

/// Score `syn` against the real training rows; ML metrics use `real_test`.
/// Marginals and pair scores are computed on raw values (numericals mapped
/// back through the quantile transform), α/β in model layout.
pub fn evaluate(
    real_train: &Matrix,
    syn: &Matrix,
    real_test: &Matrix,
    ds: &PreprocessedDataset,
    cfg: &MetricsConfig,
    seed: u64,
) -> Result<MetricsReport> {
    if cfg.grid == 0 {
        bail!(InvalidArgument, "metrics grid must have at least one level");
    }
    let real_cols = FeatureTable::from_raw(&inverse_transform(real_train, ds)?)?;
    let syn_cols = FeatureTable::from_raw(&inverse_transform(syn, ds)?)?;
    let marg = marginals_score(&real_cols, &syn_cols)?;
    let pairs = pairwise_score(&real_cols, &syn_cols, cfg.bins)?;
    let grid = quantile_grid(cfg.grid);
    let alpha = alpha_precision(real_train, syn, &grid)?;
    let beta = beta_recall(real_train, syn, cfg.k, &grid, cfg.nnd, cfg.beta_match)?;
    let (_, ys) = features_and_labels(syn, &ds.layout)?;
    let (ml, ml_note) = match single_class(&ys) {
        Some(c) => (
            constant_ml(real_train, c, real_test, ds, cfg, seed)?,
            Some(format!("synthetic labels contain only class {c}; constant predictor used")),
        ),
        None => (ml_efficiency(real_train, syn, real_test, &ds.layout, &cfg.classifier, seed)?, None),
    };
    Ok(MetricsReport {
        marginals: marg.score,
        pairwise_correlations: pairs.score,
        alpha_precision: alpha.score,
        beta_recall: beta.score,
        utility: ml.utility,
        ml_fidelity: ml.ml_fidelity,
        marginal_features: marg.features,
        pairs: pairs.pairs,
        alpha_curve: alpha.curve,
        beta_curve: beta.curve,
        ml_note,
    })
}
