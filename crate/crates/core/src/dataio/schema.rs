use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numerical,
    Categorical,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Binary,
    Multiclass,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
    /// Ordered category labels. When omitted in a schema file they are
    /// inferred from the data and sorted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<Vec<String>>,
}

impl Column {
    pub fn numerical(name: &str) -> Self {
        Column {
            name: name.to_string(),
            kind: ColumnKind::Numerical,
            categories: None,
        }
    }

    pub fn categorical(name: &str, categories: &[&str]) -> Self {
        Column {
            name: name.to_string(),
            kind: ColumnKind::Categorical,
            categories: Some(categories.iter().map(|s| s.to_string()).collect()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<Column>,
    pub target: String,
    pub task: Task,
}

impl Schema {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path.display(), e))?;
        let schema: Schema = serde_json::from_str(&text)
            .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.as_str()) {
                bail!(Schema, "duplicate column `{}`", c.name);
            }
            match (c.kind, &c.categories) {
                (ColumnKind::Numerical, Some(_)) => {
                    bail!(Schema, "numerical column `{}` lists categories", c.name)
                }
                (ColumnKind::Categorical, Some(cats)) => {
                    let uniq: HashSet<_> = cats.iter().collect();
                    if uniq.len() != cats.len() {
                        bail!(Schema, "column `{}` repeats a category", c.name);
                    }
                }
                _ => {}
            }
        }
        let Some(t) = self.column(&self.target) else {
            bail!(Schema, "target `{}` is not a column", self.target);
        };
        if t.kind != ColumnKind::Categorical {
            bail!(Schema, "target `{}` must be categorical", self.target);
        }
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// Columns other than the target.
    pub fn feature_columns(&self) -> impl Iterator<Item = &Column> {
        self.columns.iter().filter(move |c| c.name != self.target)
    }

    pub fn num_numerical(&self) -> usize {
        self.columns
            .iter()
            .filter(|c| c.kind == ColumnKind::Numerical)
            .count()
    }

    pub fn categorical(&self) -> impl Iterator<Item = &Column> {
        self.columns
            .iter()
            .filter(|c| c.kind == ColumnKind::Categorical)
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
