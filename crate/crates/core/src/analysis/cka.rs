use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::Matrix;
use crate::error::{bail, Error, Result};
use crate::transformer::CaptureTrace;
use crate::vae::{Component, VaeModel};
use crate::numerics::Scalar;

/// Linear CKA between two representations of the same `b` samples, with
/// columns centered first. Returns 0 when either side has no variance.
pub fn linear_cka(a: &Matrix, b: &Matrix) -> Result<f64> {
    linear_cka_with(a, b, true)
}

/// [`linear_cka`] with an explicit centering switch.
pub fn linear_cka_with(a: &Matrix, b: &Matrix, centered: bool) -> Result<f64> {
    let pa = Prepared::new(a, centered)?;
    let pb = Prepared::new(b, centered)?;
    if pa.rows != pb.rows {
        bail!(Shape, "cka inputs have {} and {} rows", pa.rows, pb.rows);
    }
    Ok(pa.cka(&pb))
}

/// One representation ready for repeated CKA evaluations: optionally
/// centered values plus the self term `‖XᵀX‖_F`.
struct Prepared {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    self_norm: f64,
    degenerate: bool,
}

impl Prepared {
    fn new(x: &Matrix, centered: bool) -> Result<Self> {
        let (rows, cols) = (x.rows(), x.cols());
        if rows < 2 {
            bail!(InvalidArgument, "cka needs at least 2 rows, got {}", rows);
        }
        if !x.all_finite() {
            bail!(Data, "cka input contains non-finite values");
        }
        let mut data = x.data().to_vec();
        let raw_sq: f64 = data.iter().map(|v| v * v).sum();
        if centered {
            for j in 0..cols {
                let mean = (0..rows).map(|i| data[i * cols + j]).sum::<f64>() / rows as f64;
                for i in 0..rows {
                    data[i * cols + j] -= mean;
                }
            }
        }
        let sq: f64 = data.iter().map(|v| v * v).sum();
        // Centering a constant column leaves rounding residue, not signal.
        let degenerate = cols == 0 || sq <= 1e-24 * raw_sq;
        let gram = gemm_tn(&data, &data, rows, cols, cols);
        let self_norm = frob(&gram);
        Ok(Prepared {
            rows,
            cols,
            data,
            self_norm,
            degenerate,
        })
    }

    fn cka(&self, other: &Prepared) -> f64 {
        if self.degenerate || other.degenerate || self.self_norm == 0.0 || other.self_norm == 0.0 {
            return 0.0;
        }
        let cross = gemm_tn(&other.data, &self.data, self.rows, other.cols, self.cols);
        let num: f64 = cross.iter().map(|v| v * v).sum();
        (num / (self.self_norm * other.self_norm)).clamp(0.0, 1.0)
    }
}

/// `Bᵀ A` for row-major `A: n×ka`, `B: n×kb`, giving `kb×ka`.
fn gemm_tn(b: &[f64], a: &[f64], n: usize, kb: usize, ka: usize) -> Vec<f64> {
    let mut out = vec![0.0; kb * ka];
    if n == 0 || ka == 0 || kb == 0 {
        return out;
    }
    unsafe {
        matrixmultiply::dgemm(
            kb,
            n,
            ka,
            1.0,
            b.as_ptr(),
            1,
            kb as isize,
            a.as_ptr(),
            ka as isize,
            1,
            0.0,
            out.as_mut_ptr(),
            ka as isize,
            1,
        );
    }
    out
}

fn frob(m: &[f64]) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Pairwise CKA between every captured representation of one stack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub component: Component,
    pub centered: bool,
    /// `label(block)` names in capture order.
    pub labels: Vec<String>,
    /// Symmetric `labels.len()` square grid.
    pub grid: Vec<Vec<f64>>,
}

impl SimilarityReport {
    /// Heatmap-ready CSV: a header row of labels, then one row per label.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["label".to_string()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header)?;
        for (label, row) in self.labels.iter().zip(&self.grid) {
            let mut rec = vec![label.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Data(e.to_string()))
    }
}

/// CKA grid over all records of a capture trace.
pub fn similarity_grid(trace: &CaptureTrace, component: Component, centered: bool) -> Result<SimilarityReport> {
    if trace.is_empty() {
        bail!(InvalidArgument, "empty capture trace for the {} stack", component.as_str());
    }
    let prepared = trace
        .records
        .par_iter()
        .map(|r| {
            let (b, w, data) = r.flattened();
            Prepared::new(&Matrix::new(b, w, data)?, centered)
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = prepared[0].rows;
    if prepared.iter().any(|p| p.rows != rows) {
        bail!(Shape, "capture records disagree on the number of samples");
    }
    let n = prepared.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| prepared[i].cka(&prepared[j]))
        .collect();
    let mut grid = vec![vec![0.0; n]; n];
    for (&(i, j), &v) in pairs.iter().zip(&values) {
        grid[i][j] = v;
        grid[j][i] = v;
    }
    Ok(SimilarityReport {
        component,
        centered,
        labels: trace.records.iter().map(|r| r.name()).collect(),
        grid,
    })
}

/// Reconstruct `x` with `z = mu` while capturing the chosen stack, then
/// compare every pair of its representations.
pub fn capture_similarity_grid<T: Scalar>(
    model: &VaeModel<T>,
    x: &Matrix,
    component: Component,
    centered: bool,
) -> Result<SimilarityReport> {
    let trace = capture_trace(model, x, component)?;
    similarity_grid(&trace, component, centered)
}

/// Capture one stack's representations on `x` with `z = mu`.
pub fn capture_trace<T: Scalar>(model: &VaeModel<T>, x: &Matrix, component: Component) -> Result<CaptureTrace> {
    let variant = model.variant();
    if !variant.has(component) {
        bail!(
            InvalidArgument,
            "{} has no {} Transformer",
            variant,
            component.as_str()
        );
    }
    let (_, caps) = model.reconstruct_with_capture(x, 0, true)?;
    let trace = match component {
        Component::Enc => caps.enc,
        Component::Lat => caps.lat,
        Component::Dec => caps.dec,
    };
    trace.ok_or_else(|| Error::Data(format!("no capture recorded for the {} stack", component.as_str())))
}
