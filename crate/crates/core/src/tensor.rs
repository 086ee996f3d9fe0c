//! Dense row-major `f32` tensors and the `VTEN` binary file format.
//!
//! A [`Tensor`] is immutable once built. Its payload sits behind an `Arc`, so
//! cloning is cheap and read-only sharing across threads is safe.
//!
//! `VTEN` layout: the magic bytes `VTEN`, one `u8` rank, `rank` little-endian
//! `u32` extents, then the `f32` little-endian payload in row-major order.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};

pub const VTEN_MAGIC: &[u8; 4] = b"VTEN";

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<[f32]>,
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: impl Into<Arc<[f32]>>) -> Result<Self> {
        let shape = shape.into();
        let data = data.into();
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "Tensor::new",
                format!("shape {shape:?} holds {expected} values, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    /// Builds a tensor whose size is already known to match. Internal ops only.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data: data.into() }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f32) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Tensor { shape, data: vec![value; n].into() }
    }

    pub fn scalar(value: f32) -> Self {
        Tensor { shape: Vec::new(), data: vec![value].into() }
    }

    pub fn from_vec(data: Vec<f32>) -> Self {
        Tensor { shape: vec![data.len()], data: data.into() }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.data.to_vec()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f32 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.len() {
            return Err(Error::shape("reshape", format!("cannot view {:?} as {:?}", self.shape, shape)));
        }
        Ok(Tensor { shape, data: Arc::clone(&self.data) })
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    /// Extent of the leading axis and the flat size of everything after it.
    pub(crate) fn outer_inner(&self) -> (usize, usize) {
        match self.shape.split_first() {
            Some((&n, rest)) => (n, rest.iter().product()),
            None => (1, 1),
        }
    }

    /// Copy of index `i` along the leading axis.
    pub fn index_outer(&self, i: usize) -> Tensor {
        let (n, inner) = self.outer_inner();
        assert!(i < n, "index {i} out of range for leading extent {n}");
        Tensor::from_parts(self.shape[1..].to_vec(), self.data[i * inner..(i + 1) * inner].to_vec())
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items.first().ok_or_else(|| Error::shape("stack", "nothing to stack"))?;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(Error::shape("stack", format!("{:?} vs {:?}", first.shape, t.shape)));
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Tensor::from_parts(shape, data))
    }

    pub fn to_vten_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(5 + 4 * self.rank() + 4 * self.len());
        out.extend_from_slice(VTEN_MAGIC);
        out.push(self.rank() as u8);
        for &d in &self.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in self.data.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_vten_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < 5 || &bytes[..4] != VTEN_MAGIC {
            return Err("missing VTEN magic".into());
        }
        let rank = bytes[4] as usize;
        let header = 5 + 4 * rank;
        if bytes.len() < header {
            return Err(format!("truncated header for rank {rank}"));
        }
        let shape: Vec<usize> =
            bytes[5..header].chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize).collect();
        let n: usize = shape.iter().product();
        let payload = &bytes[header..];
        if payload.len() != 4 * n {
            return Err(format!("shape {shape:?} needs {} payload bytes, found {}", 4 * n, payload.len()));
        }
        let data: Vec<f32> = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Tensor::from_parts(shape, data))
    }

    pub fn write_vten(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_vten_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read_vten(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Tensor::from_vten_bytes(&bytes).map_err(|reason| Error::TensorFormat { path: path.to_path_buf(), reason })
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f32> = self.data.iter().take(8).copied().collect();
        f.debug_struct("Tensor").field("shape", &self.shape).field("head", &preview).finish()
    }
}
