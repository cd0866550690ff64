//! Points in the base latent space, the layered latent space and pixel space.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// A code in the base latent space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LatentCode(Vec<f64>);

impl LatentCode {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().all(|v| v.is_finite()) {
            Ok(Self(values))
        } else {
            Err(Error::Format("latent code has non-finite entries".into()))
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for LatentCode {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// One code per generator layer, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtendedLatent {
    layers: usize,
    dim: usize,
    data: Vec<f64>,
}

impl ExtendedLatent {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let layers = rows.len();
        if layers == 0 {
            return Err(Error::Empty("extended latent rows"));
        }
        let dim = rows[0].len();
        let mut data = Vec::with_capacity(layers * dim);
        for row in rows {
            check_dim("extended latent row", dim, row.len())?;
            data.extend_from_slice(row);
        }
        Self::from_flat(layers, dim, data)
    }

    pub fn from_flat(layers: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        check_dim("extended latent data", layers * dim, data.len())?;
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::Format("extended latent has non-finite entries".into()));
        }
        Ok(Self { layers, dim, data })
    }

    pub fn zeros(layers: usize, dim: usize) -> Self {
        Self {
            layers,
            dim,
            data: vec![0.0; layers * dim],
        }
    }

    /// Copies `w` into every layer.
    pub fn replicate(w: &LatentCode, layers: usize) -> Self {
        let mut data = Vec::with_capacity(layers * w.dim());
        for _ in 0..layers {
            data.extend_from_slice(w.as_slice());
        }
        Self {
            layers,
            dim: w.dim(),
            data,
        }
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, layer: usize) -> &[f64] {
        &self.data[layer * self.dim..(layer + 1) * self.dim]
    }

    pub fn row_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.data[layer * self.dim..(layer + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.data
    }

    pub fn row_mean(&self) -> LatentCode {
        let mut mean = vec![0.0; self.dim];
        for row in self.rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        let n = self.layers as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        LatentCode(mean)
    }

    /// Euclidean norm of every layer row.
    pub fn row_norms(&self) -> Vec<f64> {
        self.rows()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect()
    }
}

/// A rendered image, flattened to a pixel vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageVector(Vec<f64>);

impl ImageVector {
    pub fn new(pixels: Vec<f64>) -> Result<Self> {
        if pixels.iter().all(|v| v.is_finite()) {
            Ok(Self(pixels))
        } else {
            Err(Error::Format("image has non-finite pixels".into()))
        }
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for ImageVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
