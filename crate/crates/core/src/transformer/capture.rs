use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};
use crate::numerics::Tensor;

/// Position of a captured representation inside a block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    In,
    N1,
    Attn,
    Res,
    N2,
    Ffn,
    Out,
}

impl Label {
    pub const ALL: [Label; 7] = [
        Label::In,
        Label::N1,
        Label::Attn,
        Label::Res,
        Label::N2,
        Label::Ffn,
        Label::Out,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::In => "in",
            Label::N1 => "n1",
            Label::Attn => "attn",
            Label::Res => "res",
            Label::N2 => "n2",
            Label::Ffn => "ffn",
            Label::Out => "out",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaptureRecord {
    pub label: Label,
    pub block: usize,
    /// Detached `[batch, tokens, d]` snapshot.
    pub tensor: Tensor<f32>,
}

impl CaptureRecord {
    /// `label(block)`, e.g. `res(2)`.
    pub fn name(&self) -> String {
        format!("{}({})", self.label.as_str(), self.block)
    }

    /// Rows of `tokens * d` values, one per sample.
    pub fn flattened(&self) -> (usize, usize, Vec<f64>) {
        let b = self.tensor.shape()[0];
        let w = self.tensor.len() / b.max(1);
        (b, w, self.tensor.to_f64_vec())
    }
}

/// Ordered representations captured during one forward pass of a stack.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CaptureTrace {
    pub records: Vec<CaptureRecord>,
}

impl CaptureTrace {
    pub fn new() -> Self {
        CaptureTrace::default()
    }

    pub fn push(&mut self, label: Label, block: usize, tensor: Tensor<f32>) {
        self.records.push(CaptureRecord {
            label,
            block,
            tensor,
        });
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, label: Label, block: usize) -> Option<&CaptureRecord> {
        self.records
            .iter()
            .find(|r| r.label == label && r.block == block)
    }

    pub fn num_blocks(&self) -> usize {
        self.records.iter().map(|r| r.block + 1).max().unwrap_or(0)
    }

    /// Write `trace.json` plus one little-endian `.f32` file per record.
    pub fn export(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir.display(), e))?;
        let mut index = Vec::with_capacity(self.records.len());
        for (i, r) in self.records.iter().enumerate() {
            let file = format!("r{i:03}_{}_{}.f32", r.label.as_str(), r.block);
            let bytes: Vec<u8> = r.tensor.data().iter().flat_map(|v| v.to_le_bytes()).collect();
            let path = dir.join(&file);
            fs::write(&path, bytes).map_err(|e| Error::io(path.display(), e))?;
            index.push(serde_json::json!({
                "label": r.label,
                "block": r.block,
                "shape": r.tensor.shape(),
                "file": file,
            }));
        }
        let path = dir.join("trace.json");
        fs::write(&path, serde_json::to_string_pretty(&index)?)
            .map_err(|e| Error::io(path.display(), e))?;
        Ok(())
    }

    pub fn import(dir: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Entry {
            label: Label,
            block: usize,
            shape: Vec<usize>,
            file: String,
        }
        let path = dir.join("trace.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(path.display(), e))?;
        let entries: Vec<Entry> = serde_json::from_str(&text)?;
        let mut t = CaptureTrace::new();
        for e in entries {
            let path = dir.join(&e.file);
            let bytes = fs::read(&path).map_err(|err| Error::io(path.display(), err))?;
            if bytes.len() % 4 != 0 {
                bail!(Data, "{} is truncated", path.display());
            }
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            t.push(e.label, e.block, Tensor::new(e.shape, data)?);
        }
        Ok(t)
    }
}
