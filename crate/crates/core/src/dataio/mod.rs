//! Table ingest, preprocessing and the model matrix layout.

pub mod matrix;
pub mod preprocess;
pub mod quantile;
pub mod schema;
pub mod table;

pub use matrix::Matrix;
pub use preprocess::{
    inverse_transform, preprocess, preprocess_with, size_bucket, Block, DropReason,
    DroppedColumn, Layout, PreprocessOptions, PreprocessedDataset, SizeBucket, Splits,
};
pub use quantile::{inv_norm_cdf, QuantileMap};
pub use schema::{Column, ColumnKind, Schema, Task};
pub use table::{load_csv, load_csv_with_schema, RawColumn, RawTable};
