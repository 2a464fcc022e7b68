use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::columns::{FeatureTable, FeatureValues};
use crate::error::{bail, Error, Result};

/// Bins used to discretize a numerical column paired with a categorical one.
pub const DEFAULT_BINS: usize = 10;

/// Pearson correlation, `None` when either column has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// `1 - |rho - rho~| / 2`. An undefined correlation on one side scores 0.5,
/// on both sides 1.
pub fn correlation_pair_score(real: Option<f64>, syn: Option<f64>) -> f64 {
    match (real, syn) {
        (Some(a), Some(b)) => 1.0 - (a - b).abs() / 2.0,
        (None, None) => 1.0,
        _ => 0.5,
    }
}

/// `1 - (1/2) sum_ij |p_ij - q_ij|` over the joint frequencies of two coded columns.
pub fn contingency_similarity(real: (&[usize], &[usize]), syn: (&[usize], &[usize])) -> Result<f64> {
    if real.0.len() != real.1.len() || syn.0.len() != syn.1.len() {
        bail!(Shape, "contingency columns differ in length");
    }
    let pr: Vec<(usize, usize)> = real.0.iter().copied().zip(real.1.iter().copied()).collect();
    let ps: Vec<(usize, usize)> = syn.0.iter().copied().zip(syn.1.iter().copied()).collect();
    super::marginal::tvd_score(&pr, &ps)
}

/// Equal-width bin codes over the range of `reference`; values outside that
/// range fall into the edge bins.
pub fn equal_width_bins(reference: &[f64], values: &[f64], bins: usize) -> Vec<usize> {
    let lo = reference.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = reference.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    values
        .iter()
        .map(|&v| {
            if width.is_nan() || width <= 0.0 {
                return 0;
            }
            let b = ((v - lo) / width).floor();
            if b < 0.0 {
                0
            } else {
                (b as usize).min(bins - 1)
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub first: String,
    pub second: String,
    /// "pearson" or "contingency".
    pub metric: String,
    pub real: Option<f64>,
    pub synthetic: Option<f64>,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairwiseReport {
    pub score: f64,
    pub pairs: Vec<PairScore>,
}

impl PairwiseReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(Error::from)?;
        w.write_record(["first", "second", "metric", "real", "synthetic", "score"])?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        for p in &self.pairs {
            w.write_record([
                p.first.clone(),
                p.second.clone(),
                p.metric.clone(),
                opt(p.real),
                opt(p.synthetic),
                format!("{}", p.score),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path.display(), e))?;
        Ok(())
    }
}

fn codes(f: &FeatureValues, reference: &FeatureValues, bins: usize) -> Vec<usize> {
    match (f, reference) {
        (FeatureValues::Categorical { codes, .. }, _) => codes.clone(),
        (FeatureValues::Numerical(v), FeatureValues::Numerical(r)) => equal_width_bins(r, v, bins),
        _ => unreachable!("kinds checked"),
    }
}

fn score_pair(real: &FeatureTable, syn: &FeatureTable, i: usize, j: usize, bins: usize) -> Result<PairScore> {
    let (ra, rb) = (&real.features[i], &real.features[j]);
    let (sa, sb) = (&syn.features[i], &syn.features[j]);
    let (metric, r, s, score) = match (ra, rb, sa, sb) {
        (
            FeatureValues::Numerical(x),
            FeatureValues::Numerical(y),
            FeatureValues::Numerical(u),
            FeatureValues::Numerical(v),
        ) => {
            let (r, s) = (pearson(x, y), pearson(u, v));
            ("pearson", r, s, correlation_pair_score(r, s))
        }
        _ => {
            let (ca, cb) = (codes(ra, ra, bins), codes(rb, rb, bins));
            let (da, db) = (codes(sa, ra, bins), codes(sb, rb, bins));
            let sim = contingency_similarity((&ca, &cb), (&da, &db))?;
            ("contingency", None, None, sim)
        }
    };
    Ok(PairScore {
        first: real.names[i].clone(),
        second: real.names[j].clone(),
        metric: metric.into(),
        real: r,
        synthetic: s,
        score,
    })
}

/// Mean pair score over all unordered column pairs.
pub fn pairwise_score(real: &FeatureTable, syn: &FeatureTable, bins: usize) -> Result<PairwiseReport> {
    real.check_compatible(syn)?;
    let m = real.features.len();
    if m < 2 {
        bail!(InvalidArgument, "pairwise correlations need at least two columns");
    }
    if bins == 0 {
        bail!(InvalidArgument, "bins must be positive");
    }
    if real.num_rows() == 0 || syn.num_rows() == 0 {
        bail!(InvalidArgument, "pairwise correlations need rows");
    }
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))).collect();
    let pairs: Vec<PairScore> = pairs
        .par_iter()
        .map(|&(i, j)| score_pair(real, syn, i, j, bins))
        .collect::<Result<_>>()?;
    let score = pairs.iter().map(|p| p.score).sum::<f64>() / pairs.len() as f64;
    Ok(PairwiseReport { score, pairs })
}
