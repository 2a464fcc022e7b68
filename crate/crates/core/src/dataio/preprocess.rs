use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::quantile::QuantileMap;
use super::schema::{Column, ColumnKind, Schema};
use super::table::{RawColumn, RawTable};
use crate::error::{bail, Error, Result};
use crate::numerics::{derive_seed, rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    AllMissing,
    ZeroVariance,
    SingleCategory,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DroppedColumn {
    pub name: String,
    pub reason: DropReason,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessOptions {
    /// Share of the original training rows moved to validation.
    pub val_fraction: f64,
    /// Share of all rows held out for testing when `test_rows` is unset.
    pub test_fraction: f64,
    /// Explicit test rows, e.g. the tail of a concatenated train/test table.
    pub test_rows: Option<Vec<usize>>,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        PreprocessOptions {
            val_fraction: 0.15,
            test_fraction: 0.2,
            test_rows: None,
        }
    }
}

/// A one-hot block inside the model matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

/// Column layout: all numerical columns first, then one one-hot block per
/// categorical column, both in schema order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub numerical: Vec<String>,
    pub blocks: Vec<Block>,
    /// Index into `blocks` of the target column.
    pub target_block: usize,
}

impl Layout {
    pub fn from_schema(schema: &Schema) -> Result<Self> {
        let numerical: Vec<String> = schema
            .columns
            .iter()
            .filter(|c| c.kind == ColumnKind::Numerical)
            .map(|c| c.name.clone())
            .collect();
        let mut start = numerical.len();
        let mut blocks = Vec::new();
        let mut target_block = None;
        for c in schema.categorical() {
            let len = c.categories.as_ref().map_or(0, |v| v.len());
            if c.name == schema.target {
                target_block = Some(blocks.len());
            }
            blocks.push(Block {
                name: c.name.clone(),
                start,
                len,
            });
            start += len;
        }
        let target_block = target_block
            .ok_or_else(|| Error::Schema(format!("target `{}` is not categorical", schema.target)))?;
        Ok(Layout {
            numerical,
            blocks,
            target_block,
        })
    }

    pub fn num_numerical(&self) -> usize {
        self.numerical.len()
    }

    pub fn num_columns(&self) -> usize {
        self.numerical.len() + self.blocks.len()
    }

    /// Width of the model matrix, `M_n + sum |C_j|`.
    pub fn width(&self) -> usize {
        self.numerical.len() + self.blocks.iter().map(|b| b.len).sum::<usize>()
    }

    pub fn category_sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.len).collect()
    }

    pub fn target(&self) -> &Block {
        &self.blocks[self.target_block]
    }
}

/// Model-ready table plus everything needed to map new rows in and out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessedDataset {
    /// Schema after column drops, with final category lists.
    pub schema: Schema,
    pub layout: Layout,
    #[serde(skip)]
    pub x: Matrix,
    /// One map per numerical column, in layout order.
    pub quantile_maps: Vec<QuantileMap>,
    pub numeric_means: Vec<f64>,
    /// Imputation category index per block.
    pub category_modes: Vec<usize>,
    pub dropped: Vec<DroppedColumn>,
    pub splits: Splits,
    pub seed: u64,
}

/// Preprocess with the default options (15% validation, 20% test).
pub fn preprocess(raw: &RawTable, seed: u64) -> Result<PreprocessedDataset> {
    preprocess_with(raw, seed, &PreprocessOptions::default())
}

/// Drops degenerate columns, imputes, Gaussianizes numericals and one-hot
/// encodes categoricals. Column statistics are fitted on the training and
/// validation rows; test rows are only transformed.
pub fn preprocess_with(
    raw: &RawTable,
    seed: u64,
    opts: &PreprocessOptions,
) -> Result<PreprocessedDataset> {
    let n = raw.num_rows();
    if n == 0 {
        bail!(Data, "table has no rows");
    }
    if !(0.0..1.0).contains(&opts.val_fraction) || !(0.0..1.0).contains(&opts.test_fraction) {
        bail!(InvalidArgument, "split fractions must lie in [0, 1)");
    }
    let splits = make_splits(n, seed, opts)?;
    let fit_rows: Vec<usize> = splits.train.iter().chain(&splits.val).copied().collect();

    let mut kept_cols: Vec<Column> = Vec::new();
    let mut kept_data: Vec<&RawColumn> = Vec::new();
    let mut dropped = Vec::new();
    for (col, data) in raw.schema.columns.iter().zip(&raw.columns) {
        if let Some(reason) = drop_reason(data, &fit_rows) {
            if col.name == raw.schema.target {
                bail!(Data, "target column `{}` dropped ({:?})", col.name, reason);
            }
            dropped.push(DroppedColumn {
                name: col.name.clone(),
                reason,
            });
            continue;
        }
        let mut col = col.clone();
        if let RawColumn::Categorical(vals) = data {
            let seen: HashSet<&String> = vals.iter().flatten().collect();
            let cats = col.categories.take().unwrap_or_default();
            col.categories = Some(cats.into_iter().filter(|c| seen.contains(c)).collect());
        }
        kept_cols.push(col);
        kept_data.push(data);
    }
    if kept_cols.len() <= 1 {
        bail!(Data, "no feature columns remain after dropping degenerate columns");
    }
    let schema = Schema {
        columns: kept_cols,
        target: raw.schema.target.clone(),
        task: raw.schema.task,
    };
    let layout = Layout::from_schema(&schema)?;

    let mut quantile_maps = Vec::new();
    let mut numeric_means = Vec::new();
    let mut category_modes = Vec::new();
    for (col, data) in schema.columns.iter().zip(&kept_data) {
        match data {
            RawColumn::Numerical(vals) => {
                let observed: Vec<f64> = fit_rows.iter().filter_map(|&r| vals[r]).collect();
                let mean = observed.iter().sum::<f64>() / observed.len() as f64;
                let imputed: Vec<f64> =
                    fit_rows.iter().map(|&r| vals[r].unwrap_or(mean)).collect();
                numeric_means.push(mean);
                quantile_maps.push(QuantileMap::fit(&imputed)?);
            }
            RawColumn::Categorical(vals) => {
                let cats = col.categories.as_ref().expect("categorical");
                let mut counts = vec![0usize; cats.len()];
                for &r in &fit_rows {
                    if let Some(v) = &vals[r] {
                        counts[cats.iter().position(|c| c == v).expect("kept")] += 1;
                    }
                }
                // Ties go to the earliest category.
                let mode = counts
                    .iter()
                    .enumerate()
                    .fold(0, |best, (i, &c)| if c > counts[best] { i } else { best });
                category_modes.push(mode);
            }
        }
    }

    let mut ds = PreprocessedDataset {
        schema,
        layout,
        x: Matrix::zeros(0, 0),
        quantile_maps,
        numeric_means,
        category_modes,
        dropped,
        splits,
        seed,
    };
    let sub = RawTable {
        schema: ds.schema.clone(),
        columns: kept_data.into_iter().cloned().collect(),
    };
    ds.x = ds.encode(&sub)?;
    Ok(ds)
}

fn drop_reason(data: &RawColumn, rows: &[usize]) -> Option<DropReason> {
    match data {
        RawColumn::Numerical(v) => {
            let mut it = rows.iter().filter_map(|&r| v[r]);
            let first = it.next()?;
            if it.all(|x| x == first) {
                Some(DropReason::ZeroVariance)
            } else {
                None
            }
        }
        RawColumn::Categorical(v) => {
            let distinct: HashSet<&String> = rows.iter().filter_map(|&r| v[r].as_ref()).collect();
            match distinct.len() {
                0 => Some(DropReason::AllMissing),
                1 => Some(DropReason::SingleCategory),
                _ => None,
            }
        }
    }
    .or_else(|| {
        rows.iter()
            .all(|&r| data.is_missing(r))
            .then_some(DropReason::AllMissing)
    })
}

fn make_splits(n: usize, seed: u64, opts: &PreprocessOptions) -> Result<Splits> {
    let test: Vec<usize> = match &opts.test_rows {
        Some(rows) => {
            let mut t = rows.clone();
            t.sort_unstable();
            t.dedup();
            if t.last().is_some_and(|&r| r >= n) {
                bail!(InvalidArgument, "test row index out of range");
            }
            t
        }
        None => {
            let mut all: Vec<usize> = (0..n).collect();
            all.shuffle(&mut rng(derive_seed(seed, "split/test")));
            let k = ((opts.test_fraction * n as f64).round() as usize).min(n.saturating_sub(1));
            let mut t = all[..k].to_vec();
            t.sort_unstable();
            t
        }
    };
    let is_test: HashSet<usize> = test.iter().copied().collect();
    let mut train: Vec<usize> = (0..n).filter(|r| !is_test.contains(r)).collect();
    if train.is_empty() {
        bail!(InvalidArgument, "no training rows remain after the test split");
    }
    let k = ((opts.val_fraction * train.len() as f64).round() as usize).min(train.len() - 1);
    train.shuffle(&mut rng(derive_seed(seed, "split/val")));
    let mut val = train.split_off(train.len() - k);
    train.sort_unstable();
    val.sort_unstable();
    Ok(Splits { train, val, test })
}

impl PreprocessedDataset {
    pub fn width(&self) -> usize {
        self.layout.width()
    }

    pub fn train_x(&self) -> Matrix {
        self.x.select_rows(&self.splits.train)
    }

    pub fn val_x(&self) -> Matrix {
        self.x.select_rows(&self.splits.val)
    }

    pub fn test_x(&self) -> Matrix {
        self.x.select_rows(&self.splits.test)
    }

    /// Training plus validation rows, the data the column maps were fitted on.
    pub fn fit_rows(&self) -> Vec<usize> {
        let mut r: Vec<usize> = self.splits.train.iter().chain(&self.splits.val).copied().collect();
        r.sort_unstable();
        r
    }

    /// Encode a new raw table with the fitted maps. Columns present in the
    /// source but dropped during fitting are ignored.
    pub fn transform(&self, raw: &RawTable) -> Result<Matrix> {
        let mut columns = Vec::with_capacity(self.schema.columns.len());
        for c in &self.schema.columns {
            let col = raw
                .column(&c.name)
                .ok_or_else(|| Error::Schema(format!("column `{}` absent", c.name)))?;
            columns.push(col.clone());
        }
        self.encode(&RawTable {
            schema: self.schema.clone(),
            columns,
        })
    }

    fn encode(&self, raw: &RawTable) -> Result<Matrix> {
        let n = raw.num_rows();
        let mut x = Matrix::zeros(n, self.width());
        let mut ni = 0;
        let mut bi = 0;
        for (col, data) in self.schema.columns.iter().zip(&raw.columns) {
            match data {
                RawColumn::Numerical(vals) => {
                    let q = &self.quantile_maps[ni];
                    let mean = self.numeric_means[ni];
                    for (r, v) in vals.iter().enumerate() {
                        x.set(r, ni, q.forward(v.unwrap_or(mean)));
                    }
                    ni += 1;
                }
                RawColumn::Categorical(vals) => {
                    let cats = col.categories.as_ref().expect("categorical");
                    let block = &self.layout.blocks[bi];
                    for (r, v) in vals.iter().enumerate() {
                        let k = match v {
                            None => self.category_modes[bi],
                            Some(v) => cats.iter().position(|c| c == v).ok_or_else(|| {
                                Error::Data(format!("column `{}`: unseen category `{}`", col.name, v))
                            })?,
                        };
                        x.set(r, block.start + k, 1.0);
                    }
                    bi += 1;
                }
            }
        }
        Ok(x)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir.display(), e))?;
        let manifest = serde_json::json!({
            "rows": self.x.rows(),
            "cols": self.x.cols(),
            "dataset": self,
        });
        let p = dir.join("manifest.json");
        fs::write(&p, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(p.display(), e))?;
        let bytes: Vec<u8> = self
            .x
            .data()
            .iter()
            .flat_map(|v| (*v as f32).to_le_bytes())
            .collect();
        let p = dir.join("X.f32");
        fs::write(&p, bytes).map_err(|e| Error::io(p.display(), e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Manifest {
            rows: usize,
            cols: usize,
            dataset: PreprocessedDataset,
        }
        let p = dir.join("manifest.json");
        let text = fs::read_to_string(&p).map_err(|e| Error::io(p.display(), e))?;
        let m: Manifest = serde_json::from_str(&text)?;
        let p = dir.join("X.f32");
        let bytes = fs::read(&p).map_err(|e| Error::io(p.display(), e))?;
        if bytes.len() != m.rows * m.cols * 4 {
            bail!(Data, "{} holds {} bytes, expected {}", p.display(), bytes.len(), m.rows * m.cols * 4);
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let mut ds = m.dataset;
        ds.x = Matrix::new(m.rows, m.cols, data)?;
        if ds.x.cols() != ds.layout.width() {
            bail!(Data, "stored matrix width does not match the layout");
        }
        Ok(ds)
    }
}

/// Map a matrix in model layout back to raw values: numericals through the
/// inverse quantile maps, one-hot blocks by argmax (first maximum wins).
pub fn inverse_transform(x: &Matrix, ds: &PreprocessedDataset) -> Result<RawTable> {
    if x.cols() != ds.width() {
        bail!(Shape, "matrix has {} columns, layout expects {}", x.cols(), ds.width());
    }
    let n = x.rows();
    let mut columns = Vec::with_capacity(ds.schema.columns.len());
    let mut ni = 0;
    let mut bi = 0;
    for col in &ds.schema.columns {
        match col.kind {
            ColumnKind::Numerical => {
                let q = &ds.quantile_maps[ni];
                columns.push(RawColumn::Numerical(
                    (0..n).map(|r| Some(q.inverse(x.get(r, ni)))).collect(),
                ));
                ni += 1;
            }
            ColumnKind::Categorical => {
                let cats = col.categories.as_ref().expect("categorical");
                let b = &ds.layout.blocks[bi];
                columns.push(RawColumn::Categorical(
                    (0..n)
                        .map(|r| Some(cats[argmax(&x.row(r)[b.start..b.start + b.len])].clone()))
                        .collect(),
                ));
                bi += 1;
            }
        }
    }
    RawTable::new(ds.schema.clone(), columns)
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeBucket {
    Small,
    Medium,
    Large,
}

impl SizeBucket {
    pub const ALL: [SizeBucket; 3] = [SizeBucket::Small, SizeBucket::Medium, SizeBucket::Large];

    pub fn as_str(self) -> &'static str {
        match self {
            SizeBucket::Small => "small",
            SizeBucket::Medium => "medium",
            SizeBucket::Large => "large",
        }
    }
}

/// Training-set size bucket: below 1000 rows small, below 5000 medium, else large.
pub fn size_bucket(n_train: usize) -> SizeBucket {
    if n_train < 1000 {
        SizeBucket::Small
    } else if n_train < 5000 {
        SizeBucket::Medium
    } else {
        SizeBucket::Large
    }
}
