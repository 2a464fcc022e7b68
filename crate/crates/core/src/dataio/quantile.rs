use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{bail, Result};

/// Inverse of the standard normal CDF; infinite at 0 and 1.
pub fn inv_norm_cdf(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    Normal::standard().inverse_cdf(p)
}

/// Monotone piecewise-linear map from raw values to standard-normal scores.
/// Knot `k` pairs the k-th distinct observed value with the normal quantile at
/// its midpoint plotting position `(rank - 0.5) / N`; tied values share their
/// mean rank.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileMap {
    pub values: Vec<f64>,
    pub gaussian: Vec<f64>,
}

impl QuantileMap {
    pub fn fit(data: &[f64]) -> Result<Self> {
        if data.is_empty() {
            bail!(InvalidArgument, "quantile map needs at least one value");
        }
        if data.iter().any(|v| !v.is_finite()) {
            bail!(Data, "quantile map input is not finite");
        }
        let mut sorted = data.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        let mut values = Vec::new();
        let mut gaussian = Vec::new();
        let mut i = 0;
        while i < sorted.len() {
            let mut j = i;
            while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
                j += 1;
            }
            // 1-based ranks i+1..=j+1 share their mean.
            let rank = (i + j) as f64 / 2.0 + 1.0;
            values.push(sorted[i]);
            gaussian.push(inv_norm_cdf((rank - 0.5) / n));
            i = j + 1;
        }
        Ok(QuantileMap { values, gaussian })
    }

    pub fn min_value(&self) -> f64 {
        self.values[0]
    }

    pub fn max_value(&self) -> f64 {
        *self.values.last().expect("non-empty")
    }

    pub fn forward(&self, x: f64) -> f64 {
        interp(&self.values, &self.gaussian, x)
    }

    /// Scores beyond the outermost knots clamp to the observed extremes.
    pub fn inverse(&self, g: f64) -> f64 {
        interp(&self.gaussian, &self.values, g)
    }
}

/// Piecewise-linear interpolation through increasing `xs`, constant outside.
fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let last = xs.len() - 1;
    if x.is_nan() {
        return f64::NAN;
    }
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[last] {
        return ys[last];
    }
    let hi = xs.partition_point(|&v| v < x);
    if xs[hi] == x {
        return ys[hi];
    }
    let lo = hi - 1;
    let t = (x - xs[lo]) / (xs[hi] - xs[lo]);
    ys[lo] + t * (ys[hi] - ys[lo])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_normal_known_quantiles() {
        // scipy.stats.norm.ppf
        let cases = [
            (0.5, 0.0),
            (0.975, 1.959963984540054),
            (0.1, -1.2815515655446004),
            (0.3, -0.5244005127080407),
            (1e-6, -4.753424308822899),
            (0.999, 3.090232306167813),
        ];
        for (p, z) in cases {
            let got = inv_norm_cdf(p);
            assert!((got - z).abs() <= 1.2e-8 * z.abs().max(1.0), "p={p}: {got} vs {z}");
        }
    }

    #[test]
    fn five_ranks() {
        let q = QuantileMap::fit(&[3.0, 1.0, 5.0, 2.0, 4.0]).unwrap();
        let expect = [
            -1.2815515655446004,
            -0.5244005127080407,
            0.0,
            0.5244005127080407,
            1.2815515655446004,
        ];
        for (i, e) in expect.iter().enumerate() {
            assert!((q.forward((i + 1) as f64) - e).abs() < 1e-8);
        }
    }

    #[test]
    fn ties_share_midrank() {
        let q = QuantileMap::fit(&[1.0, 2.0, 2.0, 3.0]).unwrap();
        assert_eq!(q.values, vec![1.0, 2.0, 3.0]);
        // ranks 2 and 3 average to 2.5 -> p = 0.5
        assert!(q.gaussian[1].abs() < 1e-12);
    }

    #[test]
    fn inverse_clamps_to_observed_range() {
        let q = QuantileMap::fit(&[0.0, 10.0, 20.0]).unwrap();
        assert_eq!(q.inverse(50.0), 20.0);
        assert_eq!(q.inverse(-50.0), 0.0);
        assert_eq!(q.inverse(q.gaussian[2] + 1e-9), q.max_value());
        assert_eq!(q.forward(-1.0), q.gaussian[0]);
    }
}
