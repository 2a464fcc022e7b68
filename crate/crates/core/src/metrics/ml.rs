use serde::{Deserialize, Serialize};

use super::gbt::{gbt_train, ClassifierConfig};
use crate::dataio::preprocess::argmax;
use crate::dataio::{Layout, Matrix};
use crate::error::{bail, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlEfficiency {
    /// Accuracy on the real test rows of the model trained on synthetic rows.
    pub utility: f64,
    /// Agreement between the real-trained and synthetic-trained models.
    pub ml_fidelity: f64,
}

/// Classifier features (every column outside the target block) and labels
/// (argmax of the target block).
pub fn features_and_labels(x: &Matrix, layout: &Layout) -> Result<(Matrix, Vec<usize>)> {
    if x.cols() != layout.width() {
        bail!(Shape, "matrix has {} columns, layout expects {}", x.cols(), layout.width());
    }
    let t = layout.target();
    let keep: Vec<usize> = (0..x.cols()).filter(|&c| c < t.start || c >= t.start + t.len).collect();
    let labels = (0..x.rows())
        .map(|r| argmax(&x.row(r)[t.start..t.start + t.len]))
        .collect();
    Ok((x.select_cols(&keep), labels))
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / pred.len() as f64
}

pub(crate) fn single_class(labels: &[usize]) -> Option<usize> {
    let first = *labels.first()?;
    labels.iter().all(|&l| l == first).then_some(first)
}

/// Train on real and on synthetic rows, then score both models on the real test rows.
pub fn ml_efficiency(
    real_train: &Matrix,
    syn_train: &Matrix,
    real_test: &Matrix,
    layout: &Layout,
    clf: &ClassifierConfig,
    seed: u64,
) -> Result<MlEfficiency> {
    if real_test.rows() == 0 {
        bail!(InvalidArgument, "empty test set");
    }
    let (xr, yr) = features_and_labels(real_train, layout)?;
    let (xs, ys) = features_and_labels(syn_train, layout)?;
    let (xt, yt) = features_and_labels(real_test, layout)?;
    for (name, y) in [("real", &yr), ("synthetic", &ys)] {
        if let Some(c) = single_class(y) {
            return Err(Error::Data(format!("{name} training labels contain only class {c}")));
        }
    }
    let k = layout.target().len;
    let pr = gbt_train(&xr, &yr, k, clf, seed)?.predict(&xt)?;
    let ps = gbt_train(&xs, &ys, k, clf, seed)?.predict(&xt)?;
    Ok(MlEfficiency { utility: accuracy(&ps, &yt), ml_fidelity: accuracy(&ps, &pr) })
}
