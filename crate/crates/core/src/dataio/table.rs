use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use super::schema::{ColumnKind, Schema};
use crate::error::{bail, Error, Result};

/// One column of a raw table; `None` marks a missing cell.
#[derive(Clone, Debug, PartialEq)]
pub enum RawColumn {
    Numerical(Vec<Option<f64>>),
    Categorical(Vec<Option<String>>),
}

impl RawColumn {
    pub fn len(&self) -> usize {
        match self {
            RawColumn::Numerical(v) => v.len(),
            RawColumn::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_missing(&self, row: usize) -> bool {
        match self {
            RawColumn::Numerical(v) => v[row].is_none(),
            RawColumn::Categorical(v) => v[row].is_none(),
        }
    }

    fn take(&self, rows: &[usize]) -> RawColumn {
        match self {
            RawColumn::Numerical(v) => RawColumn::Numerical(rows.iter().map(|&r| v[r]).collect()),
            RawColumn::Categorical(v) => {
                RawColumn::Categorical(rows.iter().map(|&r| v[r].clone()).collect())
            }
        }
    }
}

/// Column-major table whose columns follow `schema.columns` order.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTable {
    pub schema: Schema,
    pub columns: Vec<RawColumn>,
}

impl RawTable {
    pub fn new(schema: Schema, columns: Vec<RawColumn>) -> Result<Self> {
        if schema.columns.len() != columns.len() {
            bail!(Shape, "{} columns for a schema of {}", columns.len(), schema.columns.len());
        }
        let n = columns.first().map_or(0, |c| c.len());
        for (c, col) in schema.columns.iter().zip(&columns) {
            if col.len() != n {
                bail!(Shape, "column `{}` has {} rows, expected {}", c.name, col.len(), n);
            }
            let ok = matches!(
                (c.kind, col),
                (ColumnKind::Numerical, RawColumn::Numerical(_))
                    | (ColumnKind::Categorical, RawColumn::Categorical(_))
            );
            if !ok {
                bail!(Schema, "column `{}` does not match its declared kind", c.name);
            }
            if let (Some(cats), RawColumn::Categorical(vals)) = (&c.categories, col) {
                for v in vals.iter().flatten() {
                    if !cats.contains(v) {
                        bail!(Data, "column `{}`: `{}` is not a declared category", c.name, v);
                    }
                }
            }
            if let RawColumn::Numerical(vals) = col {
                if vals.iter().flatten().any(|v| !v.is_finite()) {
                    bail!(Data, "column `{}` holds a non-finite value", c.name);
                }
            }
        }
        Ok(RawTable { schema, columns })
    }

    pub fn num_rows(&self) -> usize {
        self.columns.first().map_or(0, |c| c.len())
    }

    pub fn num_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, name: &str) -> Option<&RawColumn> {
        self.schema.index_of(name).map(|i| &self.columns[i])
    }

    pub fn take_rows(&self, rows: &[usize]) -> RawTable {
        RawTable {
            schema: self.schema.clone(),
            columns: self.columns.iter().map(|c| c.take(rows)).collect(),
        }
    }

    /// Append the rows of `other`, which must share this table's schema.
    pub fn concat(&self, other: &RawTable) -> Result<RawTable> {
        if self.schema != other.schema {
            bail!(Schema, "cannot concatenate tables with different schemas");
        }
        let columns = self
            .columns
            .iter()
            .zip(&other.columns)
            .map(|(a, b)| match (a, b) {
                (RawColumn::Numerical(x), RawColumn::Numerical(y)) => {
                    RawColumn::Numerical(x.iter().chain(y).copied().collect())
                }
                (RawColumn::Categorical(x), RawColumn::Categorical(y)) => {
                    RawColumn::Categorical(x.iter().chain(y).cloned().collect())
                }
                _ => unreachable!("schemas are equal"),
            })
            .collect();
        Ok(RawTable {
            schema: self.schema.clone(),
            columns,
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(self.schema.columns.iter().map(|c| c.name.as_str()))?;
        for r in 0..self.num_rows() {
            let rec: Vec<String> = self
                .columns
                .iter()
                .map(|c| match c {
                    RawColumn::Numerical(v) => v[r].map(|x| x.to_string()).unwrap_or_default(),
                    RawColumn::Categorical(v) => v[r].clone().unwrap_or_default(),
                })
                .collect();
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path.display(), e))?;
        Ok(())
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path.display(), io),
        other => Error::Data(format!("{}: {other:?}", path.display())),
    }
}

fn is_missing_token(s: &str) -> bool {
    let t = s.trim();
    t.is_empty() || t == "?"
}

/// Read a CSV whose header names columns of the schema at `schema_path`.
/// Header order is free; the table comes back in schema order.
pub fn load_csv(path: &Path, schema_path: &Path) -> Result<RawTable> {
    let schema = Schema::from_json_file(schema_path)?;
    load_csv_with_schema(path, schema)
}

pub fn load_csv_with_schema(path: &Path, mut schema: Schema) -> Result<RawTable> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::Headers)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        bail!(Data, "{} is empty", path.display());
    }
    let mut pos: HashMap<&str, usize> = HashMap::new();
    for (i, h) in header.iter().enumerate() {
        if schema.column(h).is_none() {
            bail!(Schema, "{}: unknown column `{}`", path.display(), h);
        }
        if pos.insert(h, i).is_some() {
            bail!(Schema, "{}: column `{}` appears twice", path.display(), h);
        }
    }
    let order: Vec<usize> = schema
        .columns
        .iter()
        .map(|c| {
            pos.get(c.name.as_str())
                .copied()
                .ok_or_else(|| Error::Schema(format!("{}: missing column `{}`", path.display(), c.name)))
        })
        .collect::<Result<_>>()?;

    let mut num: Vec<Vec<Option<f64>>> = vec![Vec::new(); schema.columns.len()];
    let mut cat: Vec<Vec<Option<String>>> = vec![Vec::new(); schema.columns.len()];
    let mut n_rows = 0usize;
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        n_rows += 1;
        if rec.len() != header.len() {
            bail!(Data, "{}: row {} has {} fields", path.display(), line + 2, rec.len());
        }
        for (ci, col) in schema.columns.iter().enumerate() {
            let cell = &rec[order[ci]];
            let missing = is_missing_token(cell);
            match col.kind {
                ColumnKind::Numerical => {
                    let v = if missing {
                        None
                    } else {
                        let x: f64 = cell.trim().parse().map_err(|_| {
                            Error::Data(format!(
                                "{}: row {}, column `{}`: `{}` is not a number",
                                path.display(),
                                line + 2,
                                col.name,
                                cell
                            ))
                        })?;
                        if !x.is_finite() {
                            bail!(Data, "{}: row {}, column `{}` is not finite", path.display(), line + 2, col.name);
                        }
                        Some(x)
                    };
                    num[ci].push(v);
                }
                ColumnKind::Categorical => {
                    let v = (!missing).then(|| cell.trim().to_string());
                    if let (Some(v), Some(cats)) = (&v, &col.categories) {
                        if !cats.contains(v) {
                            bail!(
                                Data,
                                "{}: row {}, column `{}`: `{}` is not a declared category",
                                path.display(),
                                line + 2,
                                col.name,
                                v
                            );
                        }
                    }
                    cat[ci].push(v);
                }
            }
        }
    }
    if n_rows == 0 {
        bail!(Data, "{} has no data rows", path.display());
    }
    let mut columns = Vec::with_capacity(schema.columns.len());
    for (ci, col) in schema.columns.iter_mut().enumerate() {
        match col.kind {
            ColumnKind::Numerical => columns.push(RawColumn::Numerical(std::mem::take(&mut num[ci]))),
            ColumnKind::Categorical => {
                let vals = std::mem::take(&mut cat[ci]);
                if col.categories.is_none() {
                    let set: BTreeSet<&String> = vals.iter().flatten().collect();
                    col.categories = Some(set.into_iter().cloned().collect());
                }
                columns.push(RawColumn::Categorical(vals));
            }
        }
    }
    RawTable::new(schema, columns)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    const SCHEMA: &str = r#"{"columns":[{"name":"x","kind":"numerical"},
        {"name":"c","kind":"categorical"}],"target":"c","task":"binary"}"#;

    #[test]
    fn three_rows_two_columns() {
        let d = tempfile::tempdir().unwrap();
        let s = write(d.path(), "s.json", SCHEMA);
        let c = write(d.path(), "t.csv", "x,c\n1.5,a\n2,b\n-3,a\n");
        let t = load_csv(&c, &s).unwrap();
        assert_eq!(t.num_rows(), 3);
        assert_eq!(t.num_columns(), 2);
        assert_eq!(
            t.schema.columns[1].categories.as_deref(),
            Some(&["a".to_string(), "b".to_string()][..])
        );
    }

    #[test]
    fn empty_numeric_cell_is_missing() {
        let d = tempfile::tempdir().unwrap();
        let s = write(d.path(), "s.json", SCHEMA);
        let c = write(d.path(), "t.csv", "c,x\na,\nb,2\n");
        let t = load_csv(&c, &s).unwrap();
        assert_eq!(t.columns[0], RawColumn::Numerical(vec![None, Some(2.0)]));
    }

    #[test]
    fn unknown_column_bad_number_and_empty_file() {
        let d = tempfile::tempdir().unwrap();
        let s = write(d.path(), "s.json", SCHEMA);
        let c = write(d.path(), "a.csv", "x,c,z\n1,a,3\n");
        assert!(matches!(load_csv(&c, &s), Err(Error::Schema(_))));
        let c = write(d.path(), "b.csv", "x,c\nfoo,a\n");
        assert!(matches!(load_csv(&c, &s), Err(Error::Data(_))));
        let c = write(d.path(), "c.csv", "");
        assert!(load_csv(&c, &s).is_err());
        let c = write(d.path(), "d.csv", "x,c\n");
        assert!(load_csv(&c, &s).is_err());
    }

    #[test]
    fn undeclared_category_rejected() {
        let d = tempfile::tempdir().unwrap();
        let s = write(
            d.path(),
            "s.json",
            r#"{"columns":[{"name":"c","kind":"categorical","categories":["a"]}],"target":"c","task":"binary"}"#,
        );
        let c = write(d.path(), "t.csv", "c\na\nb\n");
        assert!(load_csv(&c, &s).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let d = tempfile::tempdir().unwrap();
        let s = write(d.path(), "s.json", SCHEMA);
        let c = write(d.path(), "t.csv", "x,c\n1.25,\"a\"\n,b\n");
        let t = load_csv(&c, &s).unwrap();
        let out = d.path().join("o.csv");
        t.write_csv(&out).unwrap();
        let t2 = load_csv_with_schema(&out, t.schema.clone()).unwrap();
        assert_eq!(t, t2);
    }
}
