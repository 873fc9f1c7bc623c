//! Reservoir drivers: discrete leaky-tanh ESN, GRU cell, and the
//! continuous-time reservoir ODE.

use crate::embed::{dot, Embedding};
use crate::error::{check_dim, Error, Result};
use crate::ode::{CubicHermite, Integrator, Solver};
use crate::parallel::for_each_block;
use crate::rng::{tags, SeededRng};
use crate::series::ReservoirState;
use crate::sparse::{spectral_radius, SparseMatrix, POWER_ITERATION_MAX_ITER, POWER_ITERATION_TOL};

/// Average number of nonzeros per reservoir row.
pub const DEFAULT_MEAN_DEGREE: f64 = 3.0;

/// Sparse recurrent weights and bias vectors, one set per chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct ReservoirWeights {
    chunks: usize,
    res_dim: usize,
    w_r: Vec<SparseMatrix>,
    bias: Vec<f64>,
    spectral_radius: f64,
    bias_magnitude: f64,
}

impl ReservoirWeights {
    /// Draws Erdos-Renyi reservoirs (mean degree 3, values uniform on
    /// `[-1, 1]`) rescaled to `spectral_radius`, and biases uniform on
    /// `[-bias_magnitude, bias_magnitude]`.
    pub fn random(
        chunks: usize,
        res_dim: usize,
        spectral_radius: f64,
        bias_magnitude: f64,
        rng: &SeededRng,
    ) -> Result<Self> {
        Self::random_with_degree(chunks, res_dim, spectral_radius, bias_magnitude, DEFAULT_MEAN_DEGREE, rng)
    }

    pub fn random_with_degree(
        chunks: usize,
        res_dim: usize,
        target_radius: f64,
        bias_magnitude: f64,
        mean_degree: f64,
        rng: &SeededRng,
    ) -> Result<Self> {
        if chunks == 0 || res_dim == 0 {
            return Err(Error::InvalidParameter {
                name: "res_dim",
                reason: "chunks and res_dim must be positive".into(),
            });
        }
        if !(target_radius > 0.0 && target_radius.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "spectral_radius",
                reason: format!("must be positive, got {target_radius}"),
            });
        }
        if !(bias_magnitude >= 0.0 && bias_magnitude.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "bias",
                reason: format!("must be non-negative, got {bias_magnitude}"),
            });
        }
        let density = (mean_degree / res_dim as f64).min(1.0);
        let w_stream = rng.substream(tags::RESERVOIR);
        let mut w_r = Vec::with_capacity(chunks);
        for c in 0..chunks {
            let mut chosen = None;
            for attempt in 0..16u64 {
                let mut r = w_stream.child(c as u64 | (attempt << 32));
                let mut triplets = Vec::new();
                for i in 0..res_dim {
                    for j in 0..res_dim {
                        if r.uniform() < density {
                            triplets.push((i, j, r.uniform_range(-1.0, 1.0)));
                        }
                    }
                }
                let mut m = SparseMatrix::from_triplets(res_dim, res_dim, triplets)?;
                let est = spectral_radius(&m, POWER_ITERATION_TOL, POWER_ITERATION_MAX_ITER)?;
                if est.value > 1e-10 {
                    m.scale(target_radius / est.value);
                    chosen = Some(m);
                    break;
                }
            }
            w_r.push(chosen.ok_or_else(|| Error::InvalidParameter {
                name: "res_dim",
                reason: format!("could not draw a reservoir with nonzero spectral radius at res_dim {res_dim}"),
            })?);
        }
        let b_stream = rng.substream(tags::BIAS);
        let mut bias = vec![0.0; chunks * res_dim];
        for (c, block) in bias.chunks_exact_mut(res_dim).enumerate() {
            b_stream.child(c as u64).fill_uniform(block, -bias_magnitude, bias_magnitude);
        }
        Ok(Self {
            chunks,
            res_dim,
            w_r,
            bias,
            spectral_radius: target_radius,
            bias_magnitude,
        })
    }

    pub fn from_parts(w_r: Vec<SparseMatrix>, bias: Vec<f64>, spectral_radius: f64, bias_magnitude: f64) -> Result<Self> {
        let chunks = w_r.len();
        let res_dim = w_r.first().map_or(0, SparseMatrix::rows);
        if chunks == 0 || res_dim == 0 {
            return Err(Error::InvalidParameter {
                name: "w_r",
                reason: "need at least one non-empty reservoir".into(),
            });
        }
        for m in &w_r {
            check_dim("reservoir rows", res_dim, m.rows())?;
            check_dim("reservoir cols", res_dim, m.cols())?;
        }
        check_dim("bias", chunks * res_dim, bias.len())?;
        Ok(Self {
            chunks,
            res_dim,
            w_r,
            bias,
            spectral_radius,
            bias_magnitude,
        })
    }

    pub fn chunks(&self) -> usize {
        self.chunks
    }

    pub fn res_dim(&self) -> usize {
        self.res_dim
    }

    pub fn reservoir(&self, c: usize) -> &SparseMatrix {
        &self.w_r[c]
    }

    pub fn reservoirs(&self) -> &[SparseMatrix] {
        &self.w_r
    }

    pub fn bias(&self, c: usize) -> &[f64] {
        &self.bias[c * self.res_dim..(c + 1) * self.res_dim]
    }

    pub fn bias_all(&self) -> &[f64] {
        &self.bias
    }

    pub fn target_spectral_radius(&self) -> f64 {
        self.spectral_radius
    }

    pub fn bias_magnitude(&self) -> f64 {
        self.bias_magnitude
    }

    /// `out = tanh(W_r r + u + b)` for chunk `c`, row by row.
    fn activation(&self, c: usize, r: &[f64], u: &[f64], mut emit: impl FnMut(usize, f64)) {
        let m = &self.w_r[c];
        let b = self.bias(c);
        for (i, (row_c, row_v)) in m.row_slices().enumerate() {
            let mut acc = u[i] + b[i];
            for (j, v) in row_c.iter().zip(row_v) {
                acc += v * r[*j];
            }
            emit(i, acc.tanh());
        }
    }
}

/// Discrete leaky-tanh echo state update,
/// `r' = (1 - a) r + a tanh(W_r r + u + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LeakyEsnDriver {
    weights: ReservoirWeights,
    leak_rate: f64,
}

impl LeakyEsnDriver {
    pub fn new(weights: ReservoirWeights, leak_rate: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&leak_rate) {
            return Err(Error::InvalidParameter {
                name: "leak_rate",
                reason: format!("must lie in [0, 1], got {leak_rate}"),
            });
        }
        Ok(Self { weights, leak_rate })
    }

    pub fn random(
        chunks: usize,
        res_dim: usize,
        leak_rate: f64,
        spectral_radius: f64,
        bias: f64,
        rng: &SeededRng,
    ) -> Result<Self> {
        Self::new(ReservoirWeights::random(chunks, res_dim, spectral_radius, bias, rng)?, leak_rate)
    }

    pub fn weights(&self) -> &ReservoirWeights {
        &self.weights
    }

    pub fn leak_rate(&self) -> f64 {
        self.leak_rate
    }

    pub fn chunks(&self) -> usize {
        self.weights.chunks
    }

    pub fn res_dim(&self) -> usize {
        self.weights.res_dim
    }

    pub fn advance_into(&self, r: &ReservoirState, u: &[f64], out: &mut ReservoirState) -> Result<()> {
        let (chunks, n) = (self.chunks(), self.res_dim());
        r.check_shape("advance_discrete", chunks, n)?;
        out.check_shape("advance_discrete output", chunks, n)?;
        check_dim("advance_discrete input", chunks * n, u.len())?;
        let a = self.leak_rate;
        let rs = r.as_slice();
        for_each_block(out.as_mut_slice(), n, |c, o| {
            let rc = &rs[c * n..(c + 1) * n];
            self.weights
                .activation(c, rc, &u[c * n..(c + 1) * n], |i, h| o[i] = (1.0 - a) * rc[i] + a * h);
        });
        Ok(())
    }

    /// Single chunk step that also stores `tanh(...)` in `cache`.
    pub(crate) fn advance_cached(&self, r: &[f64], u: &[f64], out: &mut [f64], cache: &mut [f64]) {
        let a = self.leak_rate;
        self.weights.activation(0, r, u, |i, h| {
            cache[i] = h;
            out[i] = (1.0 - a) * r[i] + a * h;
        });
    }

    /// Vector-Jacobian product of a cached single-chunk step.
    ///
    /// Given `lambda = dL/dr'`, accumulates `dL/dr` into `d_r` and writes
    /// `dL/du` into `d_u`.
    pub(crate) fn vjp(&self, cache: &[f64], lambda: &[f64], d_r: &mut [f64], d_u: &mut [f64]) {
        let a = self.leak_rate;
        for i in 0..lambda.len() {
            d_u[i] = a * (1.0 - cache[i] * cache[i]) * lambda[i];
            d_r[i] += (1.0 - a) * lambda[i];
        }
        self.weights.w_r[0].matvec_transpose_add(d_u, d_r);
    }
}

/// Convenience wrapper returning a fresh state.
pub fn advance_discrete(d: &LeakyEsnDriver, r: &ReservoirState, u: &[f64]) -> Result<ReservoirState> {
    let mut out = ReservoirState::zeros(d.chunks(), d.res_dim());
    d.advance_into(r, u, &mut out)?;
    Ok(out)
}

/// Fixed random GRU cell used as a reservoir update.
///
/// With update gate `z`, reset gate `s` and candidate `h`:
/// `r' = (1 - z) r + z h`, `h = tanh(W_h u + U_h (s * r) + b_h)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruDriver {
    chunks: usize,
    res_dim: usize,
    /// Per chunk: `[W_z, W_s, W_h, U_z, U_s, U_h]` row-major then `[b_z, b_s, b_h]`.
    mats: Vec<[Vec<f64>; 6]>,
    biases: Vec<[Vec<f64>; 3]>,
}

impl GruDriver {
    /// Weights and biases uniform on `[-1/sqrt(res_dim), 1/sqrt(res_dim)]`.
    pub fn random(chunks: usize, res_dim: usize, rng: &SeededRng) -> Result<Self> {
        if chunks == 0 || res_dim == 0 {
            return Err(Error::InvalidParameter {
                name: "res_dim",
                reason: "chunks and res_dim must be positive".into(),
            });
        }
        let k = 1.0 / (res_dim as f64).sqrt();
        let stream = rng.substream(tags::GRU);
        let mut mats = Vec::with_capacity(chunks);
        let mut biases = Vec::with_capacity(chunks);
        for c in 0..chunks {
            let mut r = stream.child(c as u64);
            let mut draw = |n: usize| {
                let mut v = vec![0.0; n];
                r.fill_uniform(&mut v, -k, k);
                v
            };
            let nn = res_dim * res_dim;
            mats.push([draw(nn), draw(nn), draw(nn), draw(nn), draw(nn), draw(nn)]);
            biases.push([draw(res_dim), draw(res_dim), draw(res_dim)]);
        }
        Ok(Self {
            chunks,
            res_dim,
            mats,
            biases,
        })
    }

    pub fn from_parts(res_dim: usize, mats: Vec<[Vec<f64>; 6]>, biases: Vec<[Vec<f64>; 3]>) -> Result<Self> {
        let chunks = mats.len();
        check_dim("GRU biases", chunks, biases.len())?;
        for m in mats.iter().flatten() {
            check_dim("GRU weight", res_dim * res_dim, m.len())?;
        }
        for b in biases.iter().flatten() {
            check_dim("GRU bias", res_dim, b.len())?;
        }
        Ok(Self {
            chunks,
            res_dim,
            mats,
            biases,
        })
    }

    pub fn chunks(&self) -> usize {
        self.chunks
    }

    pub fn res_dim(&self) -> usize {
        self.res_dim
    }

    pub(crate) fn parts(&self) -> (&[[Vec<f64>; 6]], &[[Vec<f64>; 3]]) {
        (&self.mats, &self.biases)
    }

    fn step_chunk(&self, c: usize, r: &[f64], u: &[f64], out: &mut [f64], cache: &mut [f64]) {
        let n = self.res_dim;
        let [wz, ws, wh, uz, us, uh] = &self.mats[c];
        let [bz, bs, bh] = &self.biases[c];
        let (z, rest) = cache.split_at_mut(n);
        let (s, rest) = rest.split_at_mut(n);
        let (h, q) = rest.split_at_mut(n);
        for i in 0..n {
            let row = i * n..(i + 1) * n;
            z[i] = sigmoid(dot(&wz[row.clone()], u) + dot(&uz[row.clone()], r) + bz[i]);
            s[i] = sigmoid(dot(&ws[row.clone()], u) + dot(&us[row], r) + bs[i]);
        }
        for i in 0..n {
            q[i] = s[i] * r[i];
        }
        for i in 0..n {
            let row = i * n..(i + 1) * n;
            h[i] = (dot(&wh[row.clone()], u) + dot(&uh[row], &q[..n]) + bh[i]).tanh();
            out[i] = (1.0 - z[i]) * r[i] + z[i] * h[i];
        }
    }

    /// Scratch length needed by [`GruDriver::advance_into`] per chunk.
    pub fn cache_len(&self) -> usize {
        4 * self.res_dim
    }

    pub fn advance_into(&self, r: &ReservoirState, u: &[f64], out: &mut ReservoirState) -> Result<()> {
        let n = self.res_dim;
        r.check_shape("advance_gru", self.chunks, n)?;
        out.check_shape("advance_gru output", self.chunks, n)?;
        check_dim("advance_gru input", self.chunks * n, u.len())?;
        let rs = r.as_slice();
        for_each_block(out.as_mut_slice(), n, |c, o| {
            let mut cache = vec![0.0; 4 * n];
            self.step_chunk(c, &rs[c * n..(c + 1) * n], &u[c * n..(c + 1) * n], o, &mut cache);
        });
        Ok(())
    }

    pub(crate) fn advance_cached(&self, r: &[f64], u: &[f64], out: &mut [f64], cache: &mut [f64]) {
        self.step_chunk(0, r, u, out, cache);
    }

    pub(crate) fn vjp(&self, r: &[f64], cache: &[f64], lambda: &[f64], d_r: &mut [f64], d_u: &mut [f64]) {
        let n = self.res_dim;
        let [wz, ws, wh, uz, us, uh] = &self.mats[0];
        let (z, rest) = cache.split_at(n);
        let (s, rest) = rest.split_at(n);
        let h = &rest[..n];
        let mut g_z = vec![0.0; n];
        let mut g_h = vec![0.0; n];
        for i in 0..n {
            d_r[i] += (1.0 - z[i]) * lambda[i];
            g_z[i] = lambda[i] * (h[i] - r[i]) * z[i] * (1.0 - z[i]);
            g_h[i] = lambda[i] * z[i] * (1.0 - h[i] * h[i]);
        }
        let mut g_q = vec![0.0; n];
        transpose_add(uh, n, &g_h, &mut g_q);
        let mut g_s = vec![0.0; n];
        for i in 0..n {
            d_r[i] += g_q[i] * s[i];
            g_s[i] = g_q[i] * r[i] * s[i] * (1.0 - s[i]);
        }
        transpose_add(uz, n, &g_z, d_r);
        transpose_add(us, n, &g_s, d_r);
        d_u.iter_mut().for_each(|v| *v = 0.0);
        transpose_add(wz, n, &g_z, d_u);
        transpose_add(ws, n, &g_s, d_u);
        transpose_add(wh, n, &g_h, d_u);
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `y += W^T x` for a row-major `n x n` matrix.
fn transpose_add(w: &[f64], n: usize, x: &[f64], y: &mut [f64]) {
    for (i, xi) in x.iter().enumerate() {
        if *xi != 0.0 {
            for (yj, wij) in y.iter_mut().zip(&w[i * n..(i + 1) * n]) {
                *yj += wij * xi;
            }
        }
    }
}

pub fn advance_gru(d: &GruDriver, r: &ReservoirState, u: &[f64]) -> Result<ReservoirState> {
    let mut out = ReservoirState::zeros(d.chunks(), d.res_dim());
    d.advance_into(r, u, &mut out)?;
    Ok(out)
}

/// Discrete-time drivers usable inside forecasters, classifiers and controllers.
#[derive(Debug, Clone, PartialEq)]
pub enum Driver {
    Esn(LeakyEsnDriver),
    Gru(GruDriver),
}

impl Driver {
    pub fn chunks(&self) -> usize {
        match self {
            Driver::Esn(d) => d.chunks(),
            Driver::Gru(d) => d.chunks(),
        }
    }

    pub fn res_dim(&self) -> usize {
        match self {
            Driver::Esn(d) => d.res_dim(),
            Driver::Gru(d) => d.res_dim(),
        }
    }

    pub fn advance_into(&self, r: &ReservoirState, u: &[f64], out: &mut ReservoirState) -> Result<()> {
        match self {
            Driver::Esn(d) => d.advance_into(r, u, out),
            Driver::Gru(d) => d.advance_into(r, u, out),
        }
    }

    pub fn advance(&self, r: &ReservoirState, u: &[f64]) -> Result<ReservoirState> {
        let mut out = ReservoirState::zeros(self.chunks(), self.res_dim());
        self.advance_into(r, u, &mut out)?;
        Ok(out)
    }

    pub(crate) fn cache_len(&self) -> usize {
        match self {
            Driver::Esn(d) => d.res_dim(),
            Driver::Gru(d) => d.cache_len(),
        }
    }

    pub(crate) fn advance_cached(&self, r: &[f64], u: &[f64], out: &mut [f64], cache: &mut [f64]) {
        match self {
            Driver::Esn(d) => d.advance_cached(r, u, out, cache),
            Driver::Gru(d) => d.advance_cached(r, u, out, cache),
        }
    }

    pub(crate) fn vjp(&self, r: &[f64], cache: &[f64], lambda: &[f64], d_r: &mut [f64], d_u: &mut [f64]) {
        match self {
            Driver::Esn(d) => d.vjp(cache, lambda, d_r, d_u),
            Driver::Gru(d) => d.vjp(r, cache, lambda, d_r, d_u),
        }
    }
}

impl From<LeakyEsnDriver> for Driver {
    fn from(d: LeakyEsnDriver) -> Self {
        Driver::Esn(d)
    }
}

impl From<GruDriver> for Driver {
    fn from(d: GruDriver) -> Self {
        Driver::Gru(d)
    }
}

/// Default relative tolerance of the continuous driver.
pub const CONTINUOUS_RTOL: f64 = 1e-6;
/// Default absolute tolerance of the continuous driver.
pub const CONTINUOUS_ATOL: f64 = 1e-8;

/// Continuous-time reservoir, `dr/dt = tau (-r + tanh(W_r r + W_in u(t) + b))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousEsnDriver {
    weights: ReservoirWeights,
    time_const: f64,
    solver: Solver,
}

impl ContinuousEsnDriver {
    pub fn new(weights: ReservoirWeights, time_const: f64, solver: Solver) -> Result<Self> {
        if !(time_const > 0.0 && time_const.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "time_const",
                reason: format!("must be positive, got {time_const}"),
            });
        }
        Ok(Self {
            weights,
            time_const,
            solver,
        })
    }

    pub fn weights(&self) -> &ReservoirWeights {
        &self.weights
    }

    pub fn time_const(&self) -> f64 {
        self.time_const
    }

    pub fn solver(&self) -> Solver {
        self.solver
    }

    pub fn with_solver(mut self, solver: Solver) -> Self {
        self.solver = solver;
        self
    }

    pub fn chunks(&self) -> usize {
        self.weights.chunks
    }

    pub fn res_dim(&self) -> usize {
        self.weights.res_dim
    }

    /// Evaluates `dr/dt` for all chunks given the embedded input `u`.
    pub fn rhs(&self, r: &[f64], u: &[f64], dr: &mut [f64]) {
        let n = self.res_dim();
        let tau = self.time_const;
        for c in 0..self.chunks() {
            let rc = &r[c * n..(c + 1) * n];
            let dc = &mut dr[c * n..(c + 1) * n];
            self.weights
                .activation(c, rc, &u[c * n..(c + 1) * n], |i, h| dc[i] = tau * (h - rc[i]));
        }
    }
}

/// A time-dependent input signal in data space.
pub trait InputSignal {
    fn dim(&self) -> usize;
    fn value_into(&self, t: f64, out: &mut [f64]);
    fn check_span(&self, _t0: f64, _t1: f64) -> Result<()> {
        Ok(())
    }
}

impl InputSignal for CubicHermite {
    fn dim(&self) -> usize {
        CubicHermite::dim(self)
    }

    fn value_into(&self, t: f64, out: &mut [f64]) {
        self.eval_into(t, out);
    }

    fn check_span(&self, t0: f64, t1: f64) -> Result<()> {
        self.check_range(t0)?;
        self.check_range(t1)
    }
}

/// Input held constant in time.
#[derive(Debug, Clone, PartialEq)]
pub struct HeldInput(pub Vec<f64>);

impl InputSignal for HeldInput {
    fn dim(&self) -> usize {
        self.0.len()
    }

    fn value_into(&self, _t: f64, out: &mut [f64]) {
        out.copy_from_slice(&self.0);
    }
}

/// Integrates the continuous reservoir from `r0` at `t_start`, driven by
/// `input` embedded through `embedding`, returning the state at each of the
/// increasing `eval_times`.
pub fn integrate_continuous<S: InputSignal>(
    d: &ContinuousEsnDriver,
    embedding: &Embedding,
    r0: &ReservoirState,
    input: &S,
    t_start: f64,
    eval_times: &[f64],
) -> Result<Vec<ReservoirState>> {
    let mut integ = Integrator::new(d.solver, d.chunks() * d.res_dim());
    let mut r = r0.clone();
    let flat = integrate_continuous_with(&mut integ, d, embedding, &mut r, input, t_start, eval_times)?;
    flat.chunks_exact(d.chunks() * d.res_dim())
        .map(|s| ReservoirState::from_vec(s.to_vec(), d.chunks(), d.res_dim()))
        .collect()
}

/// As [`integrate_continuous`], reusing `integ` and leaving the final state in
/// `r`. Returns the flat `eval_times.len() x (chunks * res_dim)` buffer.
pub(crate) fn integrate_continuous_with<S: InputSignal>(
    integ: &mut Integrator,
    d: &ContinuousEsnDriver,
    embedding: &Embedding,
    r: &mut ReservoirState,
    input: &S,
    t_start: f64,
    eval_times: &[f64],
) -> Result<Vec<f64>> {
    let (chunks, n) = (d.chunks(), d.res_dim());
    r.check_shape("integrate_continuous", chunks, n)?;
    check_dim("integrate_continuous embedding chunks", chunks, embedding.chunks())?;
    check_dim("integrate_continuous embedding res_dim", n, embedding.res_dim())?;
    check_dim("integrate_continuous input", embedding.in_dim(), input.dim())?;
    if let Some(&t_last) = eval_times.last() {
        input.check_span(t_start, t_last)?;
    }
    let mut u = vec![0.0; input.dim()];
    let mut emb = vec![0.0; chunks * n];
    let mut scratch = Vec::new();
    let mut out = vec![0.0; eval_times.len() * chunks * n];
    integ.integrate(
        |t, y, dy| {
            input.value_into(t, &mut u);
            embedding
                .embed_into(&u, &mut scratch, &mut emb)
                .expect("embedding shape checked above");
            d.rhs(y, &emb, dy);
        },
        t_start,
        r.as_mut_slice(),
        eval_times,
        &mut out,
    )?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{make_linear_embedding, ChunkLayout, LinearEmbedding};
    use crate::rng::{seeded_rng, RngSpec};

    fn zero_weights(chunks: usize, n: usize) -> ReservoirWeights {
        ReservoirWeights::from_parts(vec![SparseMatrix::zeros(n, n); chunks], vec![0.0; chunks * n], 1.0, 0.0).unwrap()
    }

    #[test]
    fn spectral_radius_imposed_per_chunk() {
        let rng = seeded_rng(RngSpec::new(0));
        let w = ReservoirWeights::random(3, 200, 0.7, 0.5, &rng).unwrap();
        for c in 0..3 {
            let est = spectral_radius(w.reservoir(c), POWER_ITERATION_TOL, POWER_ITERATION_MAX_ITER).unwrap();
            assert!((est.value - 0.7).abs() < 1e-6, "chunk {c}: {}", est.value);
        }
        assert!(w.bias_all().iter().all(|b| b.abs() <= 0.5));
        assert_ne!(w.reservoir(0), w.reservoir(1));
    }

    #[test]
    fn leak_zero_is_identity() {
        let rng = seeded_rng(RngSpec::new(1));
        let d = LeakyEsnDriver::random(1, 16, 0.0, 0.9, 1.0, &rng).unwrap();
        let mut r = ReservoirState::zeros(1, 16);
        r.as_mut_slice().iter_mut().enumerate().for_each(|(i, v)| *v = (i as f64 * 0.37).sin());
        let u: Vec<f64> = (0..16).map(|i| i as f64 * 0.1).collect();
        assert_eq!(advance_discrete(&d, &r, &u).unwrap(), r);
    }

    #[test]
    fn zero_everything_gives_zero() {
        let d = LeakyEsnDriver::new(zero_weights(1, 4), 1.0).unwrap();
        let r = ReservoirState::from_vec(vec![0.3, -0.2, 0.9, 0.1], 1, 4).unwrap();
        let next = advance_discrete(&d, &r, &[0.0; 4]).unwrap();
        assert!(next.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn dense_formula_oracle() {
        let rng = seeded_rng(RngSpec::new(2));
        let d = LeakyEsnDriver::random(2, 8, 0.3, 0.8, 0.7, &rng).unwrap();
        let mut src = seeded_rng(RngSpec::new(99));
        let mut r = ReservoirState::zeros(2, 8);
        src.fill_uniform(r.as_mut_slice(), -1.0, 1.0);
        let mut u = vec![0.0; 16];
        src.fill_uniform(&mut u, -1.0, 1.0);
        let got = advance_discrete(&d, &r, &u).unwrap();
        for c in 0..2 {
            let dense = d.weights().reservoir(c).to_dense();
            for i in 0..8 {
                let pre: f64 = (0..8).map(|j| dense[i * 8 + j] * r.chunk(c)[j]).sum::<f64>()
                    + u[c * 8 + i]
                    + d.weights().bias(c)[i];
                let expect = 0.7 * r.chunk(c)[i] + 0.3 * pre.tanh();
                assert!((got.chunk(c)[i] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gru_zero_weights_halves_state() {
        let n = 4;
        let zeros = || vec![0.0; n * n];
        let d = GruDriver::from_parts(
            n,
            vec![[zeros(), zeros(), zeros(), zeros(), zeros(), zeros()]],
            vec![[vec![0.0; n], vec![0.0; n], vec![0.0; n]]],
        )
        .unwrap();
        let r = ReservoirState::from_vec(vec![0.8, -0.4, 0.2, 1.0], 1, n).unwrap();
        let next = advance_gru(&d, &r, &[0.5; 4]).unwrap();
        for (a, b) in next.as_slice().iter().zip(r.as_slice()) {
            assert!((a - 0.5 * b).abs() < 1e-15);
        }
    }

    #[test]
    fn gru_matches_hand_rolled_cell() {
        let n = 4;
        let d = GruDriver::random(1, n, &seeded_rng(RngSpec::new(5))).unwrap();
        let mut src = seeded_rng(RngSpec::new(6));
        let mut r = vec![0.0; n];
        let mut u = vec![0.0; n];
        src.fill_uniform(&mut r, -1.0, 1.0);
        src.fill_uniform(&mut u, -2.0, 2.0);
        let (mats, biases) = d.parts();
        let [wz, ws, wh, uz, us, uh] = &mats[0];
        let [bz, bs, bh] = &biases[0];
        let mv = |m: &[f64], x: &[f64], i: usize| (0..n).map(|j| m[i * n + j] * x[j]).sum::<f64>();
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let z: Vec<f64> = (0..n).map(|i| sig(mv(wz, &u, i) + mv(uz, &r, i) + bz[i])).collect();
        let s: Vec<f64> = (0..n).map(|i| sig(mv(ws, &u, i) + mv(us, &r, i) + bs[i])).collect();
        let sr: Vec<f64> = (0..n).map(|i| s[i] * r[i]).collect();
        let h: Vec<f64> = (0..n).map(|i| (mv(wh, &u, i) + mv(uh, &sr, i) + bh[i]).tanh()).collect();
        let state = ReservoirState::from_vec(r.clone(), 1, n).unwrap();
        let got = advance_gru(&d, &state, &u).unwrap();
        for i in 0..n {
            let expect = (1.0 - z[i]) * r[i] + z[i] * h[i];
            assert!((got.as_slice()[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn gru_state_stays_bounded() {
        let n = 12;
        let d = GruDriver::random(1, n, &seeded_rng(RngSpec::new(7))).unwrap();
        let mut src = seeded_rng(RngSpec::new(8));
        let mut r = ReservoirState::zeros(1, n);
        src.fill_uniform(r.as_mut_slice(), -1.0, 1.0);
        let mut u = vec![0.0; n];
        for _ in 0..1000 {
            src.fill_uniform(&mut u, -5.0, 5.0);
            r = advance_gru(&d, &r, &u).unwrap();
            assert!(r.as_slice().iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let rng = seeded_rng(RngSpec::new(10));
        let n = 6;
        let drivers = [
            Driver::Esn(LeakyEsnDriver::random(1, n, 0.6, 0.9, 0.5, &rng).unwrap()),
            Driver::Gru(GruDriver::random(1, n, &rng).unwrap()),
        ];
        let mut src = seeded_rng(RngSpec::new(11));
        for d in &drivers {
            let mut r = vec![0.0; n];
            let mut u = vec![0.0; n];
            let mut lambda = vec![0.0; n];
            src.fill_uniform(&mut r, -0.8, 0.8);
            src.fill_uniform(&mut u, -1.0, 1.0);
            src.fill_uniform(&mut lambda, -1.0, 1.0);
            let f = |r: &[f64], u: &[f64]| {
                let mut out = vec![0.0; n];
                let mut cache = vec![0.0; d.cache_len()];
                d.advance_cached(r, u, &mut out, &mut cache);
                out.iter().zip(&lambda).map(|(a, b)| a * b).sum::<f64>()
            };
            let mut out = vec![0.0; n];
            let mut cache = vec![0.0; d.cache_len()];
            d.advance_cached(&r, &u, &mut out, &mut cache);
            let mut d_r = vec![0.0; n];
            let mut d_u = vec![0.0; n];
            d.vjp(&r, &cache, &lambda, &mut d_r, &mut d_u);
            let h = 1e-6;
            for i in 0..n {
                let (mut rp, mut rm) = (r.clone(), r.clone());
                rp[i] += h;
                rm[i] -= h;
                let fd = (f(&rp, &u) - f(&rm, &u)) / (2.0 * h);
                assert!((fd - d_r[i]).abs() < 1e-8, "dr[{i}] {fd} vs {}", d_r[i]);
                let (mut up, mut um) = (u.clone(), u.clone());
                up[i] += h;
                um[i] -= h;
                let fd = (f(&r, &up) - f(&r, &um)) / (2.0 * h);
                assert!((fd - d_u[i]).abs() < 1e-8);
            }
        }
    }

    fn zero_input_embedding(n: usize, in_dim: usize) -> Embedding {
        LinearEmbedding::from_weights(ChunkLayout::single(in_dim), n, 1.0, vec![0.0; n * in_dim])
            .unwrap()
            .into()
    }

    #[test]
    fn continuous_equilibrium_stays_at_zero() {
        let d = ContinuousEsnDriver::new(zero_weights(1, 5), 40.0, Solver::dopri5(1e-6, 1e-8)).unwrap();
        let emb = zero_input_embedding(5, 2);
        let times: Vec<f64> = (1..=20).map(|i| i as f64 * 0.1).collect();
        let states = integrate_continuous(&d, &emb, &ReservoirState::zeros(1, 5), &HeldInput(vec![1.0, 2.0]), 0.0, &times).unwrap();
        assert!(states.iter().all(|s| s.as_slice().iter().all(|v| *v == 0.0)));
    }

    /// Tiny-step forward Euler reference for a scalar reservoir.
    fn euler_reference(tau: f64, beta: f64, r0: f64, t_end: f64, dt: f64) -> f64 {
        let steps = (t_end / dt).round() as usize;
        let mut r = r0;
        for _ in 0..steps {
            r += dt * tau * (-r + beta.tanh());
        }
        r
    }

    #[test]
    fn scalar_relaxation_matches_reference() {
        let (tau, beta) = (2.0, 0.05);
        let w = ReservoirWeights::from_parts(vec![SparseMatrix::zeros(1, 1)], vec![beta], 1.0, beta).unwrap();
        let d = ContinuousEsnDriver::new(w, tau, Solver::dopri5(1e-10, 1e-12)).unwrap();
        let emb = zero_input_embedding(1, 1);
        let times = [0.25, 0.5, 1.0];
        let states = integrate_continuous(&d, &emb, &ReservoirState::zeros(1, 1), &HeldInput(vec![0.0]), 0.0, &times).unwrap();
        for (s, t) in states.iter().zip(times) {
            let reference = euler_reference(tau, beta, 0.0, t, 1e-5);
            assert!((s.as_slice()[0] - reference).abs() < 1e-6);
        }
    }

    #[test]
    fn continuous_tolerance_refinement() {
        let rng = seeded_rng(RngSpec::new(3));
        let w = ReservoirWeights::random(1, 40, 0.8, 0.5, &rng).unwrap();
        let emb: Embedding = make_linear_embedding(2, 40, 1, 0, 0.5, &rng).unwrap().into();
        let times: Vec<f64> = (0..=50).map(|i| i as f64 * 0.02).collect();
        let vals: Vec<f64> = times.iter().flat_map(|t| [(3.0 * t).sin(), (2.0 * t).cos()]).collect();
        let input = CubicHermite::new(times.clone(), vals, 2).unwrap();
        let run = |rtol: f64| {
            let d = ContinuousEsnDriver::new(w.clone(), 10.0, Solver::dopri5(rtol, rtol * 1e-2)).unwrap();
            integrate_continuous(&d, &emb, &ReservoirState::zeros(1, 40), &input, 0.0, &times[1..]).unwrap()
        };
        let reference = run(1e-12);
        let err = |states: &[ReservoirState]| {
            states
                .iter()
                .zip(&reference)
                .flat_map(|(a, b)| a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).abs()))
                .fold(0.0, f64::max)
        };
        let coarse = err(&run(1e-5));
        let fine = err(&run(1e-7));
        assert!(fine < coarse, "fine {fine} coarse {coarse}");
        assert!(coarse < 1e-3);
        assert!(matches!(
            integrate_continuous(
                &ContinuousEsnDriver::new(w.clone(), 10.0, Solver::dopri5(1e-6, 1e-8)).unwrap(),
                &emb,
                &ReservoirState::zeros(1, 40),
                &input,
                0.0,
                &[2.0]
            ),
            Err(Error::InterpolantOutOfRange { .. })
        ));
    }
}
