//! Time series and reservoir state containers, plus the CSV exchange format.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// A length-`T` sequence of `D`-dimensional samples, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    values: Vec<f64>,
    len: usize,
    dim: usize,
    dt: Option<f64>,
    t0: f64,
}

impl TimeSeries {
    /// Builds a series from row-major values. All entries must be finite.
    pub fn new(values: Vec<f64>, dim: usize, dt: Option<f64>, t0: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter {
                name: "dim",
                reason: "must be at least 1".into(),
            });
        }
        if values.is_empty() || values.len() % dim != 0 {
            return Err(Error::InvalidParameter {
                name: "values",
                reason: format!("length {} is not a positive multiple of {dim}", values.len()),
            });
        }
        if let Some(dt) = dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(Error::InvalidParameter {
                    name: "dt",
                    reason: format!("must be positive, got {dt}"),
                });
            }
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "values",
                reason: format!("non-finite entry at flat index {i}"),
            });
        }
        Ok(Self {
            len: values.len() / dim,
            values,
            dim,
            dt,
            t0,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], dt: Option<f64>, t0: f64) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            crate::error::check_dim("TimeSeries::from_rows", dim, row.len())?;
            values.extend_from_slice(row);
        }
        Self::new(values, dim, dt, t0)
    }

    /// Number of samples `T`.
    pub fn len(&self) -> usize {
        self.len
    }

    /// Always false; a series holds at least one sample.
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Sample dimension `D`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dt(&self) -> Option<f64> {
        self.dt
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.dim..(t + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim)
    }

    /// Timestamp of sample `t` (`t0 + t*dt`, or `t` for unit-step series).
    pub fn time(&self, t: usize) -> f64 {
        self.t0 + t as f64 * self.dt.unwrap_or(1.0)
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len).map(|t| self.time(t)).collect()
    }

    /// Samples `start..end`, keeping the time axis aligned.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len {
            return Err(Error::InvalidParameter {
                name: "range",
                reason: format!("{start}..{end} is not a non-empty range within 0..{}", self.len),
            });
        }
        Ok(Self {
            values: self.values[start * self.dim..end * self.dim].to_vec(),
            len: end - start,
            dim: self.dim,
            dt: self.dt,
            t0: self.time(start),
        })
    }

    /// Splits at `index`: samples `..index` and `index..`.
    pub fn split_at(&self, index: usize) -> Result<(Self, Self)> {
        Ok((self.slice(0, index)?, self.slice(index, self.len)?))
    }

    pub fn with_t0(mut self, t0: f64) -> Self {
        self.t0 = t0;
        self
    }

    /// Root-mean-square of the sample norms, `sqrt(mean_t |u_t|^2)`.
    pub fn rms(&self) -> f64 {
        (self.values.iter().map(|v| v * v).sum::<f64>() / self.len as f64).sqrt()
    }

    /// Standard deviation over all entries.
    pub fn std(&self) -> f64 {
        let n = self.values.len() as f64;
        let mean = self.values.iter().sum::<f64>() / n;
        (self.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
    }

    /// Writes the series as CSV: header `t,x0,x1,...`, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "t")?;
        for d in 0..self.dim {
            write!(w, ",x{d}")?;
        }
        writeln!(w)?;
        for (t, row) in self.rows().enumerate() {
            write!(w, "{}", fmt_f64(self.time(t)))?;
            for v in row {
                write!(w, ",{}", fmt_f64(*v))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Reads the CSV format written by [`TimeSeries::write_csv`].
    ///
    /// `dt` is inferred from the time column when it is uniform.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Csv("empty input".into()))??;
        let cols: Vec<&str> = header.trim().split(',').collect();
        if cols.first() != Some(&"t") || cols.len() < 2 {
            return Err(Error::Csv(format!("bad header `{header}`")));
        }
        let dim = cols.len() - 1;
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.trim().split(',').collect();
            if fields.len() != dim + 1 {
                return Err(Error::Csv(format!(
                    "row {}: expected {} fields, got {}",
                    i + 1,
                    dim + 1,
                    fields.len()
                )));
            }
            for (j, f) in fields.iter().enumerate() {
                let v: f64 = f
                    .parse()
                    .map_err(|_| Error::Csv(format!("row {}: cannot parse `{f}`", i + 1)))?;
                if j == 0 {
                    times.push(v);
                } else {
                    values.push(v);
                }
            }
        }
        if times.is_empty() {
            return Err(Error::Csv("no data rows".into()));
        }
        let t0 = times[0];
        let dt = if times.len() >= 2 {
            let step = (times[times.len() - 1] - t0) / (times.len() - 1) as f64;
            let uniform = step > 0.0
                && times
                    .iter()
                    .enumerate()
                    .all(|(i, t)| (t - (t0 + i as f64 * step)).abs() <= 1e-9 * (1.0 + t.abs()));
            if uniform && (step - 1.0).abs() > 1e-12 {
                Some(step)
            } else {
                None
            }
        } else {
            None
        };
        Self::new(values, dim, dt, t0)
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Per-chunk reservoir latent vectors, `chunks x res_dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ReservoirState {
    data: Vec<f64>,
    chunks: usize,
    res_dim: usize,
}

impl ReservoirState {
    pub fn zeros(chunks: usize, res_dim: usize) -> Self {
        assert!(chunks >= 1 && res_dim >= 1, "reservoir state needs chunks >= 1 and res_dim >= 1");
        Self {
            data: vec![0.0; chunks * res_dim],
            chunks,
            res_dim,
        }
    }

    pub fn from_vec(data: Vec<f64>, chunks: usize, res_dim: usize) -> Result<Self> {
        if chunks == 0 || res_dim == 0 {
            return Err(Error::InvalidParameter {
                name: "shape",
                reason: "chunks and res_dim must be positive".into(),
            });
        }
        crate::error::check_dim("ReservoirState::from_vec", chunks * res_dim, data.len())?;
        Ok(Self {
            data,
            chunks,
            res_dim,
        })
    }

    pub fn chunks(&self) -> usize {
        self.chunks
    }

    pub fn res_dim(&self) -> usize {
        self.res_dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn chunk(&self, c: usize) -> &[f64] {
        &self.data[c * self.res_dim..(c + 1) * self.res_dim]
    }

    pub fn chunk_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.res_dim..(c + 1) * self.res_dim]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_shape(&self, context: &'static str, chunks: usize, res_dim: usize) -> Result<()> {
        crate::error::check_dim(context, chunks, self.chunks)?;
        crate::error::check_dim(context, res_dim, self.res_dim)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }
}

/// Reservoir states collected while teacher forcing, `T x chunks x res_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForcedStates {
    data: Vec<f64>,
    len: usize,
    chunks: usize,
    res_dim: usize,
}

impl ForcedStates {
    pub(crate) fn with_capacity(len: usize, chunks: usize, res_dim: usize) -> Self {
        Self {
            data: Vec::with_capacity(len * chunks * res_dim),
            len: 0,
            chunks,
            res_dim,
        }
    }

    pub(crate) fn push_slice(&mut self, r: &[f64]) {
        debug_assert_eq!(r.len(), self.chunks * self.res_dim);
        self.data.extend_from_slice(r);
        self.len += 1;
    }

    pub(crate) fn push(&mut self, r: &ReservoirState) {
        debug_assert_eq!(r.as_slice().len(), self.chunks * self.res_dim);
        self.data.extend_from_slice(r.as_slice());
        self.len += 1;
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn chunks(&self) -> usize {
        self.chunks
    }

    pub fn res_dim(&self) -> usize {
        self.res_dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Flat view of state `t` (`chunks * res_dim` values).
    pub fn state_slice(&self, t: usize) -> &[f64] {
        let w = self.chunks * self.res_dim;
        &self.data[t * w..(t + 1) * w]
    }

    pub fn state(&self, t: usize) -> ReservoirState {
        ReservoirState {
            data: self.state_slice(t).to_vec(),
            chunks: self.chunks,
            res_dim: self.res_dim,
        }
    }

    pub fn last(&self) -> Option<ReservoirState> {
        (self.len > 0).then(|| self.state(self.len - 1))
    }

    pub fn chunk_at(&self, t: usize, c: usize) -> &[f64] {
        let base = (t * self.chunks + c) * self.res_dim;
        &self.data[base..base + self.res_dim]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
