//! Input embeddings: lift `u_t` to the reservoir dimension.
//!
//! Parallel reservoirs see the signal through a [`ChunkLayout`]: the field is
//! cut into `chunks` equal segments and each reservoir receives its own
//! segment plus `locality` neighbouring points on either side, wrapping
//! periodically at the domain edges.

use crate::error::{check_dim, Error, Result};
use crate::rng::{tags, SeededRng};

/// Partition of a `data_dim` signal into `chunks` overlapping windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkLayout {
    data_dim: usize,
    chunks: usize,
    locality: usize,
}

impl ChunkLayout {
    pub fn new(data_dim: usize, chunks: usize, locality: usize) -> Result<Self> {
        if data_dim == 0 || chunks == 0 {
            return Err(Error::InvalidParameter {
                name: "chunks",
                reason: "data_dim and chunks must be positive".into(),
            });
        }
        if data_dim % chunks != 0 {
            return Err(Error::IndivisibleChunks { data_dim, chunks });
        }
        let chunk_size = data_dim / chunks;
        if chunk_size + 2 * locality > data_dim {
            return Err(Error::LocalityTooLarge {
                data_dim,
                chunk_size,
                locality,
            });
        }
        Ok(Self {
            data_dim,
            chunks,
            locality,
        })
    }

    /// Single chunk covering the whole signal.
    pub fn single(data_dim: usize) -> Self {
        Self {
            data_dim,
            chunks: 1,
            locality: 0,
        }
    }

    pub fn data_dim(&self) -> usize {
        self.data_dim
    }

    pub fn chunks(&self) -> usize {
        self.chunks
    }

    pub fn locality(&self) -> usize {
        self.locality
    }

    pub fn chunk_size(&self) -> usize {
        self.data_dim / self.chunks
    }

    /// Width of each chunk's input window.
    pub fn window_dim(&self) -> usize {
        self.chunk_size() + 2 * self.locality
    }

    /// Signal index of window position `k` for chunk `c`.
    pub fn window_index(&self, c: usize, k: usize) -> usize {
        let n = self.data_dim as isize;
        let start = (c * self.chunk_size()) as isize - self.locality as isize;
        (start + k as isize).rem_euclid(n) as usize
    }

    /// Range of the signal predicted by chunk `c` (its non-overlapping centre).
    pub fn center(&self, c: usize) -> std::ops::Range<usize> {
        let cs = self.chunk_size();
        c * cs..(c + 1) * cs
    }

    pub(crate) fn is_identity(&self) -> bool {
        self.chunks == 1 && self.locality == 0
    }

    /// Fills `out` (`chunks * window_dim`) with the periodic windows of `u`.
    pub fn window_into(&self, u: &[f64], out: &mut [f64]) -> Result<()> {
        check_dim("window_input", self.data_dim, u.len())?;
        let w = self.window_dim();
        check_dim("window_input output", self.chunks * w, out.len())?;
        for c in 0..self.chunks {
            for k in 0..w {
                out[c * w + k] = u[self.window_index(c, k)];
            }
        }
        Ok(())
    }
}

/// Returns the `chunks x window_dim` matrix of input windows, row-major.
pub fn window_input(layout: &ChunkLayout, u: &[f64]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; layout.chunks * layout.window_dim()];
    layout.window_into(u, &mut out)?;
    Ok(out)
}

/// Dense random linear embedding, one `res_dim x window_dim` matrix per chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEmbedding {
    layout: ChunkLayout,
    res_dim: usize,
    scaling: f64,
    weights: Vec<f64>,
}

/// Draws a linear embedding with entries uniform on `[-scaling, scaling]`.
///
/// Each chunk's matrix comes from its own child stream of the embedding
/// substream, so chunk weights are independent.
pub fn make_linear_embedding(
    in_dim: usize,
    res_dim: usize,
    chunks: usize,
    locality: usize,
    scaling: f64,
    rng: &SeededRng,
) -> Result<LinearEmbedding> {
    let layout = ChunkLayout::new(in_dim, chunks, locality)?;
    LinearEmbedding::random(layout, res_dim, scaling, rng)
}

impl LinearEmbedding {
    pub fn random(layout: ChunkLayout, res_dim: usize, scaling: f64, rng: &SeededRng) -> Result<Self> {
        if !(scaling > 0.0 && scaling.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "embedding_scaling",
                reason: format!("must be positive, got {scaling}"),
            });
        }
        if res_dim == 0 {
            return Err(Error::InvalidParameter {
                name: "res_dim",
                reason: "must be positive".into(),
            });
        }
        let per = res_dim * layout.window_dim();
        let stream = rng.substream(tags::EMBEDDING);
        let mut weights = vec![0.0; layout.chunks() * per];
        for (c, block) in weights.chunks_exact_mut(per).enumerate() {
            let mut r = stream.child(c as u64);
            r.fill_uniform(block, -1.0, 1.0);
            block.iter_mut().for_each(|w| *w *= scaling);
        }
        Ok(Self {
            layout,
            res_dim,
            scaling,
            weights,
        })
    }

    /// Embedding with explicit weights (`chunks * res_dim * window_dim`).
    pub fn from_weights(layout: ChunkLayout, res_dim: usize, scaling: f64, weights: Vec<f64>) -> Result<Self> {
        check_dim(
            "LinearEmbedding weights",
            layout.chunks() * res_dim * layout.window_dim(),
            weights.len(),
        )?;
        Ok(Self {
            layout,
            res_dim,
            scaling,
            weights,
        })
    }

    pub fn layout(&self) -> &ChunkLayout {
        &self.layout
    }

    pub fn res_dim(&self) -> usize {
        self.res_dim
    }

    pub fn scaling(&self) -> f64 {
        self.scaling
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Row-major `res_dim x window_dim` block of chunk `c`.
    pub fn chunk_weights(&self, c: usize) -> &[f64] {
        let per = self.res_dim * self.layout.window_dim();
        &self.weights[c * per..(c + 1) * per]
    }

    /// `out[c] = W_E[c] * window_c(u)`; `window` is scratch space.
    pub fn embed_into(&self, u: &[f64], window: &mut Vec<f64>, out: &mut [f64]) -> Result<()> {
        check_dim("embed output", self.layout.chunks() * self.res_dim, out.len())?;
        let wd = self.layout.window_dim();
        let input: &[f64] = if self.layout.is_identity() {
            check_dim("embed", self.layout.data_dim(), u.len())?;
            u
        } else {
            window.resize(self.layout.chunks() * wd, 0.0);
            self.layout.window_into(u, window)?;
            window
        };
        for c in 0..self.layout.chunks() {
            let x = &input[c * wd..(c + 1) * wd];
            let w = self.chunk_weights(c);
            for (i, o) in out[c * self.res_dim..(c + 1) * self.res_dim].iter_mut().enumerate() {
                *o = dot(&w[i * wd..(i + 1) * wd], x);
            }
        }
        Ok(())
    }

    pub fn embed(&self, u: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.layout.chunks() * self.res_dim];
        self.embed_into(u, &mut Vec::new(), &mut out)?;
        Ok(out)
    }
}

/// Fixed two-layer ELU network embedding (single chunk).
///
/// Weights are standard normal scaled by `1/sqrt(fan)` where `fan` is the
/// product of the layer's dimensions; biases by `1/sqrt(width)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EluEmbedding {
    in_dim: usize,
    res_dim: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

impl EluEmbedding {
    pub fn random(in_dim: usize, res_dim: usize, rng: &SeededRng) -> Result<Self> {
        if in_dim == 0 || res_dim < 2 {
            return Err(Error::InvalidParameter {
                name: "res_dim",
                reason: "ELU embedding needs in_dim >= 1 and res_dim >= 2".into(),
            });
        }
        let hidden = res_dim / 2;
        let s = rng.substream(tags::EMBEDDING);
        let draw = |idx: u64, n: usize, scale: f64| {
            let mut v = vec![0.0; n];
            s.child(idx).fill_normal(&mut v);
            v.iter_mut().for_each(|x| *x *= scale);
            v
        };
        Ok(Self {
            in_dim,
            res_dim,
            w1: draw(0, hidden * in_dim, 1.0 / ((hidden * in_dim) as f64).sqrt()),
            w2: draw(1, res_dim * hidden, 1.0 / ((res_dim * hidden) as f64).sqrt()),
            b1: draw(2, hidden, 1.0 / (hidden as f64).sqrt()),
            b2: draw(3, res_dim, 1.0 / (res_dim as f64).sqrt()),
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn res_dim(&self) -> usize {
        self.res_dim
    }

    pub(crate) fn parts(&self) -> [&[f64]; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub(crate) fn from_parts(in_dim: usize, res_dim: usize, parts: [Vec<f64>; 4]) -> Result<Self> {
        let hidden = res_dim / 2;
        let [w1, b1, w2, b2] = parts;
        check_dim("ELU w1", hidden * in_dim, w1.len())?;
        check_dim("ELU b1", hidden, b1.len())?;
        check_dim("ELU w2", res_dim * hidden, w2.len())?;
        check_dim("ELU b2", res_dim, b2.len())?;
        Ok(Self {
            in_dim,
            res_dim,
            w1,
            b1,
            w2,
            b2,
        })
    }

    pub fn embed_into(&self, u: &[f64], hidden: &mut Vec<f64>, out: &mut [f64]) -> Result<()> {
        check_dim("ELU embed", self.in_dim, u.len())?;
        check_dim("ELU embed output", self.res_dim, out.len())?;
        let h = self.res_dim / 2;
        hidden.resize(h, 0.0);
        for i in 0..h {
            hidden[i] = elu(dot(&self.w1[i * self.in_dim..(i + 1) * self.in_dim], u) + self.b1[i]);
        }
        for (i, o) in out.iter_mut().enumerate() {
            *o = elu(dot(&self.w2[i * h..(i + 1) * h], hidden) + self.b2[i]);
        }
        Ok(())
    }
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

/// Any supported embedding.
#[derive(Debug, Clone, PartialEq)]
pub enum Embedding {
    Linear(LinearEmbedding),
    Elu(EluEmbedding),
}

impl Embedding {
    pub fn layout(&self) -> ChunkLayout {
        match self {
            Embedding::Linear(e) => e.layout,
            Embedding::Elu(e) => ChunkLayout::single(e.in_dim),
        }
    }

    pub fn res_dim(&self) -> usize {
        match self {
            Embedding::Linear(e) => e.res_dim,
            Embedding::Elu(e) => e.res_dim,
        }
    }

    pub fn chunks(&self) -> usize {
        self.layout().chunks()
    }

    pub fn in_dim(&self) -> usize {
        self.layout().data_dim()
    }

    /// Embeds `u` into `out` (`chunks * res_dim`) using `scratch` as work space.
    pub fn embed_into(&self, u: &[f64], scratch: &mut Vec<f64>, out: &mut [f64]) -> Result<()> {
        match self {
            Embedding::Linear(e) => e.embed_into(u, scratch, out),
            Embedding::Elu(e) => e.embed_into(u, scratch, out),
        }
    }

    pub fn embed(&self, u: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.chunks() * self.res_dim()];
        self.embed_into(u, &mut Vec::new(), &mut out)?;
        Ok(out)
    }
}

impl From<LinearEmbedding> for Embedding {
    fn from(e: LinearEmbedding) -> Self {
        Embedding::Linear(e)
    }
}

impl From<EluEmbedding> for Embedding {
    fn from(e: EluEmbedding) -> Self {
        Embedding::Elu(e)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
