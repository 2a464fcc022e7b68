use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::columns::{FeatureScore, FeatureTable, FeatureValues};
use crate::error::{bail, Result};

/// `1 - sup |F_real - F_syn|` over the two empirical CDFs.
pub fn ks_score(real: &[f64], syn: &[f64]) -> Result<f64> {
    if real.is_empty() || syn.is_empty() {
        bail!(InvalidArgument, "KS needs non-empty columns");
    }
    if real.iter().chain(syn).any(|v| !v.is_finite()) {
        bail!(Data, "KS input is not finite");
    }
    let mut a = real.to_vec();
    let mut b = syn.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(1.0 - d)
}

/// `1 - TVD` between the two empirical distributions over the union of values.
pub fn tvd_score<T: Ord>(real: &[T], syn: &[T]) -> Result<f64> {
    if real.is_empty() || syn.is_empty() {
        bail!(InvalidArgument, "TVD needs non-empty columns");
    }
    let mut counts: BTreeMap<&T, (usize, usize)> = BTreeMap::new();
    for v in real {
        counts.entry(v).or_default().0 += 1;
    }
    for v in syn {
        counts.entry(v).or_default().1 += 1;
    }
    let (na, nb) = (real.len() as f64, syn.len() as f64);
    let l1: f64 = counts
        .values()
        .map(|&(a, b)| (a as f64 / na - b as f64 / nb).abs())
        .sum();
    Ok((1.0 - 0.5 * l1).clamp(0.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalsReport {
    pub score: f64,
    pub features: Vec<FeatureScore>,
}

/// Mean over columns of KS (numerical) or TVD (categorical) similarity.
pub fn marginals_score(real: &FeatureTable, syn: &FeatureTable) -> Result<MarginalsReport> {
    real.check_compatible(syn)?;
    if real.features.is_empty() {
        bail!(InvalidArgument, "no features to score");
    }
    let mut features = Vec::with_capacity(real.features.len());
    for (name, (a, b)) in real.names.iter().zip(real.features.iter().zip(&syn.features)) {
        let (metric, score) = match (a, b) {
            (FeatureValues::Numerical(x), FeatureValues::Numerical(y)) => ("ks", ks_score(x, y)?),
            (FeatureValues::Categorical { codes: x, .. }, FeatureValues::Categorical { codes: y, .. }) => {
                ("tvd", tvd_score(x, y)?)
            }
            _ => unreachable!("kinds checked"),
        };
        features.push(FeatureScore { name: name.clone(), metric: metric.into(), score });
    }
    let score = features.iter().map(|f| f.score).sum::<f64>() / features.len() as f64;
    Ok(MarginalsReport { score, features })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ks_examples() {
        assert_eq!(ks_score(&[1.0, 2.0], &[2.0, 1.0]).unwrap(), 1.0);
        assert_eq!(ks_score(&[0.0; 4], &[1.0; 3]).unwrap(), 0.0);
        assert_eq!(ks_score(&[1.0, 2.0, 3.0, 4.0], &[3.0, 4.0, 5.0, 6.0]).unwrap(), 0.5);
        assert!(ks_score(&[], &[1.0]).is_err());
    }

    #[test]
    fn tvd_examples() {
        assert_eq!(tvd_score(&["a", "b"], &["b", "a"]).unwrap(), 1.0);
        assert_eq!(tvd_score(&["a", "a"], &["b"]).unwrap(), 0.0);
        assert_eq!(tvd_score(&["a", "b"], &["a", "a"]).unwrap(), 0.5);
        assert!(tvd_score::<u8>(&[1], &[]).is_err());
    }
}
