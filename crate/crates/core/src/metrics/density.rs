use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::Matrix;
use crate::error::{bail, Result};

/// Neighbour count for the β-recall coverage radius.
pub const DEFAULT_K: usize = 5;

/// `n` evenly spaced quantile levels strictly inside (0, 1): `j / (n + 1)`.
pub fn quantile_grid(n: usize) -> Vec<f64> {
    (1..=n).map(|j| j as f64 / (n + 1) as f64).collect()
}

/// Reference set for the k-nearest-neighbour radius in β-recall.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeighbourSet {
    #[default]
    Real,
    Synthetic,
}

/// Which synthetic row a real row is matched against in β-recall.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaMatch {
    /// The nearest synthetic row overall; the row counts as covered when that
    /// match is inside the β-ball and within the k-NN radius.
    #[default]
    Nearest,
    /// The nearest synthetic row among those inside the β-ball.
    NearestInSupport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub level: f64,
    pub value: f64,
}

/// An integrated quantile curve: `clamp(1 - 2 mean |curve(q) - q|, 0, 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveScore {
    pub score: f64,
    pub curve: Vec<CurvePoint>,
}

impl CurveScore {
    fn from_curve(grid: &[f64], values: Vec<f64>) -> Self {
        let dev = grid.iter().zip(&values).map(|(q, v)| (v - q).abs()).sum::<f64>() / grid.len() as f64;
        CurveScore {
            score: (1.0 - 2.0 * dev).clamp(0.0, 1.0),
            curve: grid
                .iter()
                .zip(values)
                .map(|(&level, value)| CurvePoint { level, value })
                .collect(),
        }
    }
}

/// Linear-interpolation quantile of sorted values (numpy's default).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn column_mean(x: &Matrix) -> Vec<f64> {
    let mut c = vec![0.0; x.cols()];
    for r in 0..x.rows() {
        for (m, v) in c.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    c.iter_mut().for_each(|m| *m /= x.rows() as f64);
    c
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        bail!(InvalidArgument, "empty quantile grid");
    }
    if grid.iter().any(|q| !(0.0..=1.0).contains(q)) {
        bail!(InvalidArgument, "quantile levels must lie in [0, 1]");
    }
    Ok(())
}

fn check_pair(real: &Matrix, syn: &Matrix) -> Result<()> {
    if real.cols() != syn.cols() {
        bail!(Shape, "real has {} columns, synthetic {}", real.cols(), syn.cols());
    }
    if !real.all_finite() || !syn.all_finite() {
        bail!(Data, "non-finite values in density metric input");
    }
    Ok(())
}

/// Fraction of synthetic rows inside the real α-ball around the real mean,
/// integrated over `grid`.
pub fn alpha_precision(real: &Matrix, syn: &Matrix, grid: &[f64]) -> Result<CurveScore> {
    check_grid(grid)?;
    check_pair(real, syn)?;
    if real.rows() < 10 || syn.rows() < 10 {
        bail!(InvalidArgument, "α-precision needs at least 10 real and 10 synthetic rows");
    }
    let c = column_mean(real);
    let mut dr: Vec<f64> = (0..real.rows()).map(|r| euclidean(real.row(r), &c)).collect();
    dr.sort_by(f64::total_cmp);
    if dr[dr.len() - 1] == 0.0 {
        bail!(Data, "real rows are all identical");
    }
    let ds: Vec<f64> = (0..syn.rows()).map(|r| euclidean(syn.row(r), &c)).collect();
    let values = grid
        .iter()
        .map(|&a| {
            let radius = quantile_sorted(&dr, a);
            ds.iter().filter(|&&d| d <= radius).count() as f64 / ds.len() as f64
        })
        .collect();
    Ok(CurveScore::from_curve(grid, values))
}

/// Distance from each row of `x` to its k-th nearest row of `reference`.
/// With `exclude_self`, row `i` of `x` is row `i` of `reference` and is skipped.
fn kth_neighbour(x: &Matrix, reference: &Matrix, k: usize, exclude_self: bool) -> Vec<f64> {
    (0..x.rows())
        .into_par_iter()
        .map(|i| {
            let mut d: Vec<f64> = (0..reference.rows())
                .filter(|&j| !(exclude_self && j == i))
                .map(|j| euclidean(x.row(i), reference.row(j)))
                .collect();
            let (_, v, _) = d.select_nth_unstable_by(k - 1, f64::total_cmp);
            *v
        })
        .collect()
}

/// Fraction of real rows covered by the synthetic β-support (the synthetic
/// rows within the β-quantile distance of the synthetic mean), integrated
/// over `grid`. A real row is covered when its matched synthetic row (see
/// [`BetaMatch`]) is in the support and no farther than the row's k-NN radius.
pub fn beta_recall(
    real: &Matrix,
    syn: &Matrix,
    k: usize,
    grid: &[f64],
    nnd: NeighbourSet,
    matching: BetaMatch,
) -> Result<CurveScore> {
    check_grid(grid)?;
    check_pair(real, syn)?;
    if k == 0 {
        bail!(InvalidArgument, "k must be at least 1");
    }
    if k >= real.rows() {
        bail!(InvalidArgument, "k = {} needs more than {} real rows", k, real.rows());
    }
    if syn.rows() <= k {
        bail!(InvalidArgument, "k = {} needs more than {} synthetic rows", k, syn.rows());
    }
    let c = column_mean(syn);
    let ds: Vec<f64> = (0..syn.rows()).map(|r| euclidean(syn.row(r), &c)).collect();
    let mut order: Vec<usize> = (0..syn.rows()).collect();
    order.sort_by(|&a, &b| ds[a].total_cmp(&ds[b]).then(a.cmp(&b)));
    let sorted: Vec<f64> = order.iter().map(|&i| ds[i]).collect();
    // Support at each level is a prefix of `order`.
    let prefix: Vec<usize> = grid
        .iter()
        .map(|&b| {
            let radius = quantile_sorted(&sorted, b);
            sorted.partition_point(|&d| d <= radius)
        })
        .collect();
    let radius = match nnd {
        NeighbourSet::Real => kth_neighbour(real, real, k, true),
        NeighbourSet::Synthetic => kth_neighbour(real, syn, k, false),
    };
    let covered: Vec<Vec<bool>> = (0..real.rows())
        .into_par_iter()
        .map(|i| match matching {
            BetaMatch::Nearest => {
                // Rank of the nearest synthetic row (first in `order` on ties).
                let mut best = (f64::INFINITY, 0);
                for (rank, &j) in order.iter().enumerate() {
                    let d = euclidean(real.row(i), syn.row(j));
                    if d < best.0 {
                        best = (d, rank);
                    }
                }
                prefix.iter().map(|&m| best.1 < m && best.0 <= radius[i]).collect()
            }
            BetaMatch::NearestInSupport => {
                let mut best = f64::INFINITY;
                let mut running = Vec::with_capacity(order.len());
                for &j in &order {
                    best = best.min(euclidean(real.row(i), syn.row(j)));
                    running.push(best);
                }
                prefix.iter().map(|&m| m > 0 && running[m - 1] <= radius[i]).collect()
            }
        })
        .collect();
    let n = real.rows() as f64;
    let values = (0..grid.len())
        .map(|g| covered.iter().filter(|c| c[g]).count() as f64 / n)
        .collect();
    Ok(CurveScore::from_curve(grid, values))
}
