use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Name and 2-D shape of one parameter block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockShape {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

impl BlockShape {
    pub fn new(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        Self {
            name: name.into(),
            rows,
            cols,
        }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flat parameter vector with an ordered manifest of named blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    manifest: Vec<BlockShape>,
    data: Vec<f64>,
}

impl ParamVector {
    pub fn new(manifest: Vec<BlockShape>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = manifest.iter().map(BlockShape::len).sum();
        if expected != data.len() {
            return Err(Error::DimensionMismatch {
                context: "parameter data",
                expected,
                found: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { coordinate: i });
        }
        Ok(Self { manifest, data })
    }

    pub fn zeros(manifest: Vec<BlockShape>) -> Self {
        let n = manifest.iter().map(BlockShape::len).sum();
        Self {
            manifest,
            data: vec![0.0; n],
        }
    }

    pub fn zeros_like(other: &ParamVector) -> Self {
        Self {
            manifest: other.manifest.clone(),
            data: vec![0.0; other.data.len()],
        }
    }

    /// Builds a vector from `(shape, values)` pairs, in order.
    pub fn from_blocks(blocks: Vec<(BlockShape, Vec<f64>)>) -> Result<Self> {
        let mut manifest = Vec::with_capacity(blocks.len());
        let mut data = Vec::new();
        for (shape, values) in blocks {
            if shape.len() != values.len() {
                return Err(Error::DimensionMismatch {
                    context: "parameter block",
                    expected: shape.len(),
                    found: values.len(),
                });
            }
            data.extend_from_slice(&values);
            manifest.push(shape);
        }
        Self::new(manifest, data)
    }

    pub fn manifest(&self) -> &[BlockShape] {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.data.clone()
    }

    pub fn unflatten(manifest: &[BlockShape], flat: Vec<f64>) -> Result<Self> {
        Self::new(manifest.to_vec(), flat)
    }

    /// Iterates blocks as `(shape, values)` in manifest order.
    pub fn blocks(&self) -> impl Iterator<Item = (&BlockShape, &[f64])> {
        let mut offset = 0;
        self.manifest.iter().map(move |shape| {
            let s = &self.data[offset..offset + shape.len()];
            offset += shape.len();
            (shape, s)
        })
    }

    pub fn into_blocks(self) -> Vec<(BlockShape, Vec<f64>)> {
        let mut out = Vec::with_capacity(self.manifest.len());
        let mut offset = 0;
        for shape in self.manifest {
            let n = shape.len();
            out.push((shape, self.data[offset..offset + n].to_vec()));
            offset += n;
        }
        out
    }

    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.blocks().find(|(s, _)| s.name == name).map(|(_, v)| v)
    }

    pub fn same_manifest(&self, other: &ParamVector) -> bool {
        self.manifest == other.manifest
    }

    pub fn check_manifest(&self, other: &ParamVector) -> Result<()> {
        if self.same_manifest(other) {
            Ok(())
        } else {
            Err(Error::ManifestMismatch(format!(
                "{} blocks ({} values) vs {} blocks ({} values)",
                self.manifest.len(),
                self.data.len(),
                other.manifest.len(),
                other.data.len()
            )))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Bitwise equality, distinguishing `-0.0` from `0.0`.
    pub fn bit_eq(&self, other: &ParamVector) -> bool {
        self.manifest == other.manifest
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn max_abs_diff(&self, other: &ParamVector) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| f64::max(m, (a - b).abs()))
    }
}
