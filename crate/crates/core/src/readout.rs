//! Linear readouts mapping reservoir states back to data space.

use crate::error::{check_dim, Error, Result};
use crate::series::ReservoirState;

/// Block-diagonal linear readout: chunk `c` maps its reservoir state to
/// `out_per_chunk` outputs, and the outputs are concatenated.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearReadout {
    chunks: usize,
    res_dim: usize,
    out_per_chunk: usize,
    /// `chunks x out_per_chunk x res_dim`, row-major.
    weights: Vec<f64>,
}

impl LinearReadout {
    /// All-zero readout, the untrained starting point.
    pub fn zeros(out_dim: usize, res_dim: usize, chunks: usize) -> Result<Self> {
        if chunks == 0 || res_dim == 0 || out_dim == 0 {
            return Err(Error::InvalidParameter {
                name: "out_dim",
                reason: "dimensions must be positive".into(),
            });
        }
        if out_dim % chunks != 0 {
            return Err(Error::IndivisibleChunks {
                data_dim: out_dim,
                chunks,
            });
        }
        let out_per_chunk = out_dim / chunks;
        Ok(Self {
            chunks,
            res_dim,
            out_per_chunk,
            weights: vec![0.0; chunks * out_per_chunk * res_dim],
        })
    }

    pub fn from_weights(out_dim: usize, res_dim: usize, chunks: usize, weights: Vec<f64>) -> Result<Self> {
        let mut r = Self::zeros(out_dim, res_dim, chunks)?;
        check_dim("readout weights", r.weights.len(), weights.len())?;
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "readout weights",
                reason: "must be finite".into(),
            });
        }
        r.weights = weights;
        Ok(r)
    }

    pub fn out_dim(&self) -> usize {
        self.chunks * self.out_per_chunk
    }

    pub fn out_per_chunk(&self) -> usize {
        self.out_per_chunk
    }

    pub fn res_dim(&self) -> usize {
        self.res_dim
    }

    pub fn chunks(&self) -> usize {
        self.chunks
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weights of chunk `c`, `out_per_chunk x res_dim` row-major.
    pub fn chunk_weights(&self, c: usize) -> &[f64] {
        let len = self.out_per_chunk * self.res_dim;
        &self.weights[c * len..(c + 1) * len]
    }

    pub(crate) fn chunk_weights_mut(&mut self, c: usize) -> &mut [f64] {
        let len = self.out_per_chunk * self.res_dim;
        &mut self.weights[c * len..(c + 1) * len]
    }

    /// Reads a flat `chunks * res_dim` state into `out`.
    pub fn read_into(&self, r: &[f64], out: &mut [f64]) {
        let n = self.res_dim;
        for c in 0..self.chunks {
            let w = self.chunk_weights(c);
            let rc = &r[c * n..(c + 1) * n];
            for k in 0..self.out_per_chunk {
                out[c * self.out_per_chunk + k] = crate::embed::dot(&w[k * n..(k + 1) * n], rc);
            }
        }
    }

    pub fn read(&self, r: &ReservoirState) -> Result<Vec<f64>> {
        r.check_shape("read", self.chunks, self.res_dim)?;
        let mut out = vec![0.0; self.out_dim()];
        self.read_into(r.as_slice(), &mut out);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_readout_reads_zero() {
        let ro = LinearReadout::zeros(4, 3, 2).unwrap();
        let r = ReservoirState::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 2, 3).unwrap();
        assert_eq!(ro.read(&r).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn block_diagonal_read() {
        let w = vec![1.0, 0.0, 0.0, 0.0, 1.0, 1.0];
        let ro = LinearReadout::from_weights(2, 3, 2, w).unwrap();
        let r = ReservoirState::from_vec(vec![2.0, 5.0, 7.0, 1.0, 3.0, 4.0], 2, 3).unwrap();
        assert_eq!(ro.read(&r).unwrap(), vec![2.0, 7.0]);
    }

    #[test]
    fn shape_errors() {
        assert!(matches!(LinearReadout::zeros(5, 3, 2), Err(Error::IndivisibleChunks { .. })));
        let ro = LinearReadout::zeros(2, 3, 1).unwrap();
        assert!(matches!(ro.read(&ReservoirState::zeros(1, 4)), Err(Error::DimensionMismatch { .. })));
    }
}
