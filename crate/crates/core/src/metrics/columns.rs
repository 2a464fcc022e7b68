use serde::{Deserialize, Serialize};

use crate::dataio::preprocess::argmax;
use crate::dataio::{ColumnKind, Layout, Matrix, RawColumn, RawTable};
use crate::error::{bail, Result};

/// One feature's values as scored by the low-density metrics.
#[derive(Clone, Debug, PartialEq)]
pub enum FeatureValues {
    Numerical(Vec<f64>),
    /// Category codes in `0..categories`.
    Categorical { codes: Vec<usize>, categories: usize },
}

impl FeatureValues {
    pub fn len(&self) -> usize {
        match self {
            FeatureValues::Numerical(v) => v.len(),
            FeatureValues::Categorical { codes, .. } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> ColumnKind {
        match self {
            FeatureValues::Numerical(_) => ColumnKind::Numerical,
            FeatureValues::Categorical { .. } => ColumnKind::Categorical,
        }
    }
}

/// Named feature columns of one table.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    pub names: Vec<String>,
    pub features: Vec<FeatureValues>,
}

impl FeatureTable {
    /// Columns of a complete raw table, categories coded by schema order.
    pub fn from_raw(t: &RawTable) -> Result<Self> {
        let mut names = Vec::with_capacity(t.num_columns());
        let mut features = Vec::with_capacity(t.num_columns());
        for (col, data) in t.schema.columns.iter().zip(&t.columns) {
            let f = match data {
                RawColumn::Numerical(v) => FeatureValues::Numerical(
                    v.iter()
                        .map(|x| x.ok_or_else(|| missing(&col.name)))
                        .collect::<Result<_>>()?,
                ),
                RawColumn::Categorical(v) => {
                    let cats = col.categories.as_deref().unwrap_or_default();
                    let codes = v
                        .iter()
                        .map(|x| {
                            let s = x.as_ref().ok_or_else(|| missing(&col.name))?;
                            cats.iter().position(|c| c == s).ok_or_else(|| {
                                crate::Error::Data(format!("column `{}`: unknown category `{s}`", col.name))
                            })
                        })
                        .collect::<Result<_>>()?;
                    FeatureValues::Categorical { codes, categories: cats.len() }
                }
            };
            names.push(col.name.clone());
            features.push(f);
        }
        Ok(FeatureTable { names, features })
    }

    /// Columns of a model-layout matrix; one-hot blocks decode by argmax.
    pub fn from_matrix(x: &Matrix, layout: &Layout) -> Result<Self> {
        if x.cols() != layout.width() {
            bail!(Shape, "matrix has {} columns, layout expects {}", x.cols(), layout.width());
        }
        let mut names = layout.numerical.clone();
        let mut features: Vec<FeatureValues> =
            (0..layout.num_numerical()).map(|j| FeatureValues::Numerical(x.column(j))).collect();
        for b in &layout.blocks {
            let codes = (0..x.rows())
                .map(|r| argmax(&x.row(r)[b.start..b.start + b.len]))
                .collect();
            names.push(b.name.clone());
            features.push(FeatureValues::Categorical { codes, categories: b.len });
        }
        Ok(FeatureTable { names, features })
    }

    pub fn num_rows(&self) -> usize {
        self.features.first().map_or(0, |f| f.len())
    }

    /// Checks that `other` has the same columns with the same kinds.
    pub(crate) fn check_compatible(&self, other: &FeatureTable) -> Result<()> {
        if self.names != other.names {
            bail!(Schema, "feature names differ: {:?} vs {:?}", self.names, other.names);
        }
        for (n, (a, b)) in self.names.iter().zip(self.features.iter().zip(&other.features)) {
            if a.kind() != b.kind() {
                bail!(Schema, "column `{n}` has different kinds");
            }
        }
        Ok(())
    }
}

fn missing(name: &str) -> crate::Error {
    crate::Error::Data(format!("column `{name}` has missing values"))
}

/// Similarity of one column or column pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureScore {
    pub name: String,
    /// "ks" or "tvd".
    pub metric: String,
    pub score: f64,
}
