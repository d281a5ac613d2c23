//! `CIR1` checkpoint files: an encoder block followed by a class-table block.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! "CIR1"
//! u32 number of layer dims (L + 1), then L + 1 x u32 dims
//! u8  activation code (0 relu, 1 tanh, 2 identity)
//! for each layer: out*in f32 weights (row-major), out f32 biases
//! u32 C, u32 d, f32 momentum, C*d f32 table rows (row-major)
//! ```

use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{CirError, Result};
use crate::nn::{Activation, ModelParams};
use crate::tac::ClassTable;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CIR1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelParams,
    pub table: ClassTable,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let m = &self.model;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(m.layer_dims.len() as u32).to_le_bytes());
        for &d in &m.layer_dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.push(m.activation.code());
        for (w, b) in m.weights.iter().zip(&m.biases) {
            for &v in w.iter() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
            for &v in b.iter() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        let t = &self.table;
        out.extend_from_slice(&(t.class_count() as u32).to_le_bytes());
        out.extend_from_slice(&(t.dim() as u32).to_le_bytes());
        out.extend_from_slice(&(t.momentum() as f32).to_le_bytes());
        for &v in t.rows().iter() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = ByteCursor::new(bytes);
        if cur.take(4)? != CHECKPOINT_MAGIC {
            return Err(CirError::Format("not a CIR1 checkpoint".into()));
        }
        let n_dims = cur.u32()? as usize;
        if !(2..=64).contains(&n_dims) {
            return Err(CirError::Format(format!("implausible layer count {n_dims}")));
        }
        let dims = (0..n_dims)
            .map(|_| cur.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let activation = Activation::from_code(cur.u8()?)?;
        let mut weights = Vec::with_capacity(n_dims - 1);
        let mut biases = Vec::with_capacity(n_dims - 1);
        for pair in dims.windows(2) {
            let (inp, out) = (pair[0], pair[1]);
            let w = cur.f32_block(out * inp)?;
            weights.push(Array2::from_shape_vec((out, inp), w).expect("sized block"));
            biases.push(Array1::from(cur.f32_block(out)?));
        }
        let model = ModelParams::from_parts(weights, biases, activation)?;
        let classes = cur.u32()? as usize;
        let dim = cur.u32()? as usize;
        let momentum = f64::from(cur.f32()?);
        let rows = Array2::from_shape_vec((classes, dim), cur.f32_block(classes * dim)?)
            .expect("sized block");
        if !cur.rest().is_empty() {
            return Err(CirError::Format("trailing bytes after class table".into()));
        }
        let table = ClassTable::from_rows(rows, momentum)?;
        Ok(Self { model, table })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Minimal little-endian reader over a byte slice.
pub(crate) struct ByteCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteCursor<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(CirError::Format("unexpected end of file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32_block(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f32().map(f64::from)).collect()
    }

    pub(crate) fn rest(&self) -> &'a [u8] {
        &self.bytes[self.pos..]
    }
}
