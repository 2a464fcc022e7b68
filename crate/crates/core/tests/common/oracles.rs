//! Independent reference implementations shared by the test suites.

use rand_distr::{Distribution, StandardNormal};
use tabgen::dataio::Matrix;
use tabgen::metrics::BetaMatch;
use tabgen::numerics::rng;

/// `n x d` standard normal matrix.
pub fn gaussian(n: usize, d: usize, seed: u64) -> Matrix {
    let mut r = rng(seed);
    Matrix::new(n, d, (0..n * d).map(|_| StandardNormal.sample(&mut r)).collect()).unwrap()
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for k in 0..a.cols() {
            let v = a.get(i, k);
            for j in 0..b.cols() {
                out.set(i, j, out.get(i, j) + v * b.get(k, j));
            }
        }
    }
    out
}

/// Random orthogonal matrix by modified Gram-Schmidt on Gaussian columns.
pub fn orthogonal(n: usize, seed: u64) -> Matrix {
    let g = gaussian(n, n, seed);
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| g.column(j)).collect();
    for j in 0..n {
        for k in 0..j {
            let d: f64 = (0..n).map(|i| cols[j][i] * cols[k][i]).sum();
            for i in 0..n {
                cols[j][i] -= d * cols[k][i];
            }
        }
        let norm = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        cols[j].iter_mut().for_each(|v| *v /= norm);
    }
    let mut q = Matrix::zeros(n, n);
    for (j, c) in cols.iter().enumerate() {
        for (i, v) in c.iter().enumerate() {
            q.set(i, j, *v);
        }
    }
    q
}

/// Direct evaluation of the β-recall definition, one level at a time.
pub fn beta_oracle(real: &Matrix, syn: &Matrix, k: usize, grid: &[f64], matching: BetaMatch) -> Vec<f64> {
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let mut c = vec![0.0; syn.cols()];
    for r in 0..syn.rows() {
        for (m, v) in c.iter_mut().zip(syn.row(r)) {
            *m += v;
        }
    }
    for m in &mut c {
        *m /= syn.rows() as f64;
    }
    let ds: Vec<f64> = (0..syn.rows()).map(|i| dist(syn.row(i), &c)).collect();
    let mut sorted = ds.clone();
    sorted.sort_by(f64::total_cmp);
    let nnd: Vec<f64> = (0..real.rows())
        .map(|n| {
            let mut d: Vec<f64> =
                (0..real.rows()).filter(|&m| m != n).map(|m| dist(real.row(n), real.row(m))).collect();
            d.sort_by(f64::total_cmp);
            d[k - 1]
        })
        .collect();
    grid.iter()
        .map(|&b| {
            let h = (sorted.len() - 1) as f64 * b;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(sorted.len() - 1);
            let radius = sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]);
            let mut hits = 0;
            for n in 0..real.rows() {
                let covered = match matching {
                    BetaMatch::NearestInSupport => {
                        let nearest = (0..syn.rows())
                            .filter(|&i| ds[i] <= radius)
                            .map(|i| dist(real.row(n), syn.row(i)))
                            .fold(f64::INFINITY, f64::min);
                        nearest <= nnd[n]
                    }
                    BetaMatch::Nearest => {
                        // Ties go to the row closer to the synthetic mean, then the lower index.
                        let j = (0..syn.rows())
                            .min_by(|&a, &b| {
                                dist(real.row(n), syn.row(a))
                                    .total_cmp(&dist(real.row(n), syn.row(b)))
                                    .then(ds[a].total_cmp(&ds[b]))
                                    .then(a.cmp(&b))
                            })
                            .unwrap();
                        ds[j] <= radius && dist(real.row(n), syn.row(j)) <= nnd[n]
                    }
                };
                hits += covered as usize;
            }
            hits as f64 / real.rows() as f64
        })
        .collect()
}

/// Two-sided p by listing every sign pattern over the absolute differences.
pub fn wilcoxon_oracle(d: &[f64]) -> (f64, f64) {
    let d: Vec<f64> = d.iter().copied().filter(|v| *v != 0.0).collect();
    let n = d.len();
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let rank = |i: usize| {
        let below = abs.iter().filter(|v| **v < abs[i]).count() as f64;
        let equal = abs.iter().filter(|v| **v == abs[i]).count() as f64;
        below + (equal + 1.0) / 2.0
    };
    let ranks: Vec<f64> = (0..n).map(rank).collect();
    let total: f64 = ranks.iter().sum();
    let w_plus: f64 = (0..n).filter(|&i| d[i] > 0.0).map(|i| ranks[i]).sum();
    let t = w_plus.min(total - w_plus);
    let mut hits = 0u64;
    for mask in 0u64..(1 << n) {
        let w: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if w <= t + 1e-9 {
            hits += 1;
        }
    }
    (t, (2.0 * hits as f64 / (1u64 << n) as f64).min(1.0))
}
