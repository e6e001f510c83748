use crate::error::{Error, Result};

/// Channel-major, then row-major spatial values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    channels: usize,
    spatial: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(channels: usize, spatial: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let expected = channels * spatial.iter().product::<usize>();
        if values.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "{channels} x {spatial:?} needs {expected} values, got {}",
                values.len()
            )));
        }
        Ok(Self {
            channels,
            spatial,
            values,
        })
    }

    pub fn zeros(channels: usize, spatial: Vec<usize>) -> Self {
        let len = channels * spatial.iter().product::<usize>();
        Self {
            channels,
            spatial,
            values: vec![0.0; len],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn spatial(&self) -> &[usize] {
        &self.spatial
    }

    pub fn spatial_len(&self) -> usize {
        self.spatial.iter().product()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let s = self.spatial_len();
        &self.values[c * s..(c + 1) * s]
    }

    /// Cyclic translate every channel: `out[c][i] = self[c][i + delta]`.
    pub fn cyclic_shift(&self, delta: &[isize]) -> Tensor {
        let strides = strides(&self.spatial);
        let s = self.spatial_len();
        let mut out = vec![0.0; self.values.len()];
        for flat in 0..s {
            let mut src = 0;
            for (k, (&size, &stride)) in self.spatial.iter().zip(&strides).enumerate() {
                let coord = (flat / stride) % size;
                src += (coord as isize + delta[k]).rem_euclid(size as isize) as usize * stride;
            }
            for c in 0..self.channels {
                out[c * s + flat] = self.values[c * s + src];
            }
        }
        Tensor {
            channels: self.channels,
            spatial: self.spatial.clone(),
            values: out,
        }
    }
}

/// Row-major strides of `shape`.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut out = vec![1; shape.len()];
    for k in (0..shape.len().saturating_sub(1)).rev() {
        out[k] = out[k + 1] * shape[k + 1];
    }
    out
}
