use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::metrics::quantile_sorted;
use crate::transformer::{CaptureTrace, Label};

/// Five-number summary plus mean, for box plots.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

impl BoxStats {
    /// `None` for an empty slice.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        Some(BoxStats {
            min: s[0],
            q1: quantile_sorted(&s, 0.25),
            median: quantile_sorted(&s, 0.5),
            q3: quantile_sorted(&s, 0.75),
            max: s[s.len() - 1],
            mean: s.iter().sum::<f64>() / s.len() as f64,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockSigma {
    pub block: usize,
    /// One value per sample.
    pub sigma: Vec<f64>,
    pub summary: BoxStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelNorms {
    /// `label(block)`.
    pub label: String,
    /// Euclidean norm of each sample's flattened representation.
    pub norms: Vec<f64>,
    pub summary: BoxStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaReport {
    pub blocks: Vec<BlockSigma>,
    pub norms: Vec<LabelNorms>,
}

impl SigmaReport {
    /// One row per block (σ) and per label (norm) with the box-plot summary.
    pub fn summary_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["kind", "name", "min", "q1", "median", "q3", "max", "mean"])?;
        let rows = self
            .blocks
            .iter()
            .map(|b| ("sigma", format!("block{}", b.block), b.summary))
            .chain(self.norms.iter().map(|n| ("norm", n.label.clone(), n.summary)));
        for (kind, name, s) in rows {
            let vals = [s.min, s.q1, s.median, s.q3, s.max, s.mean].map(|v| v.to_string());
            let mut rec = vec![kind.to_string(), name];
            rec.extend(vals);
            w.write_record(&rec)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| crate::Error::Data(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| crate::Error::Data(e.to_string()))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per sample and block, the least-squares scale σ = ⟨res, in⟩ / ⟨in, in⟩
/// relating the post-attention residual to the block input, plus the norm
/// of every captured representation.
pub fn residual_sigma(trace: &CaptureTrace) -> Result<SigmaReport> {
    let mut blocks = Vec::new();
    for block in 0..trace.num_blocks() {
        let (Some(input), Some(res)) = (trace.get(Label::In, block), trace.get(Label::Res, block)) else {
            bail!(InvalidArgument, "trace lacks the in/res pair of block {}", block);
        };
        let (b, w, e) = input.flattened();
        let (b2, w2, e_hat) = res.flattened();
        if (b, w) != (b2, w2) {
            bail!(Shape, "in and res of block {} differ in shape", block);
        }
        let mut sigma = Vec::with_capacity(b);
        for i in 0..b {
            let row = &e[i * w..(i + 1) * w];
            let denom = dot(row, row);
            if denom < 1e-12 {
                bail!(Data, "block {} input of sample {} has squared norm {:e}", block, i, denom);
            }
            sigma.push(dot(&e_hat[i * w..(i + 1) * w], row) / denom);
        }
        let Some(summary) = BoxStats::of(&sigma) else {
            bail!(InvalidArgument, "trace has no samples");
        };
        blocks.push(BlockSigma { block, sigma, summary });
    }
    if blocks.is_empty() {
        bail!(InvalidArgument, "trace contains no blocks");
    }
    let mut norms = Vec::with_capacity(trace.len());
    for r in &trace.records {
        let (b, w, v) = r.flattened();
        let n: Vec<f64> = (0..b).map(|i| dot(&v[i * w..(i + 1) * w], &v[i * w..(i + 1) * w]).sqrt()).collect();
        if let Some(summary) = BoxStats::of(&n) {
            norms.push(LabelNorms {
                label: r.name(),
                norms: n,
                summary,
            });
        }
    }
    Ok(SigmaReport { blocks, norms })
}
