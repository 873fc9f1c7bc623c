//! Closed-loop forecasting with discrete and continuous-time reservoirs.

use crate::driver::{integrate_continuous_with, ContinuousEsnDriver, Driver, InputSignal};
use crate::driver::{LeakyEsnDriver, ReservoirWeights, CONTINUOUS_ATOL, CONTINUOUS_RTOL};
use crate::embed::{make_linear_embedding, Embedding};
use crate::error::{check_dim, Error, Result};
use crate::ode::{CubicHermite, Integrator, Solver};
use crate::rng::{seeded_rng, RngSpec};
use crate::readout::LinearReadout;
use crate::series::{ForcedStates, ReservoirState, TimeSeries};
use crate::train::force;

/// Default normalized-error threshold for [`valid_time`].
pub const DEFAULT_VALID_THRESHOLD: f64 = 0.4;

/// Hyperparameters for a seeded leaky-ESN forecaster.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EsnParams {
    pub res_dim: usize,
    pub chunks: usize,
    pub locality: usize,
    pub leak_rate: f64,
    pub embedding_scaling: f64,
    pub bias: f64,
    pub spectral_radius: f64,
    pub seed: u64,
}

impl Default for EsnParams {
    fn default() -> Self {
        Self {
            res_dim: 1000,
            chunks: 1,
            locality: 0,
            leak_rate: 0.6,
            embedding_scaling: 0.08,
            bias: 1.6,
            spectral_radius: 0.8,
            seed: 0,
        }
    }
}

/// Hyperparameters for a seeded continuous-time forecaster.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuousParams {
    pub res_dim: usize,
    pub time_const: f64,
    pub embedding_scaling: f64,
    pub bias: f64,
    pub spectral_radius: f64,
    pub solver: Solver,
    pub feedback: Feedback,
    pub seed: u64,
}

impl Default for ContinuousParams {
    fn default() -> Self {
        Self {
            res_dim: 1000,
            time_const: 40.0,
            embedding_scaling: 0.08,
            bias: 1.6,
            spectral_radius: 0.8,
            solver: Solver::dopri5(CONTINUOUS_RTOL, CONTINUOUS_ATOL),
            feedback: Feedback::default(),
            seed: 0,
        }
    }
}

fn check_parts(embedding: &Embedding, chunks: usize, res_dim: usize, readout: &LinearReadout) -> Result<()> {
    check_dim("model embedding chunks", chunks, embedding.chunks())?;
    check_dim("model embedding res_dim", res_dim, embedding.res_dim())?;
    check_dim("model readout chunks", chunks, readout.chunks())?;
    check_dim("model readout res_dim", res_dim, readout.res_dim())?;
    check_dim("model readout out_dim", embedding.in_dim(), readout.out_dim())
}

/// Discrete-time forecaster: embedding, driver and readout predicting its
/// own input one step ahead.
#[derive(Debug, Clone, PartialEq)]
pub struct EsnForecaster {
    embedding: Embedding,
    driver: Driver,
    readout: LinearReadout,
}

impl EsnForecaster {
    pub fn new(embedding: Embedding, driver: Driver, readout: LinearReadout) -> Result<Self> {
        check_parts(&embedding, driver.chunks(), driver.res_dim(), &readout)?;
        Ok(Self {
            embedding,
            driver,
            readout,
        })
    }

    /// Untrained model with weights drawn from `params.seed`.
    pub fn random(data_dim: usize, params: &EsnParams) -> Result<Self> {
        let rng = seeded_rng(RngSpec::new(params.seed));
        let emb = make_linear_embedding(
            data_dim,
            params.res_dim,
            params.chunks,
            params.locality,
            params.embedding_scaling,
            &rng,
        )?;
        let driver = LeakyEsnDriver::random(
            params.chunks,
            params.res_dim,
            params.leak_rate,
            params.spectral_radius,
            params.bias,
            &rng,
        )?;
        Self::untrained(emb.into(), driver.into())
    }

    /// Model with an all-zero readout.
    pub fn untrained(embedding: Embedding, driver: Driver) -> Result<Self> {
        let readout = LinearReadout::zeros(embedding.in_dim(), driver.res_dim(), driver.chunks())?;
        Self::new(embedding, driver, readout)
    }

    pub fn embedding(&self) -> &Embedding {
        &self.embedding
    }

    pub fn driver(&self) -> &Driver {
        &self.driver
    }

    pub fn readout(&self) -> &LinearReadout {
        &self.readout
    }

    pub fn with_readout(&self, readout: LinearReadout) -> Result<Self> {
        Self::new(self.embedding.clone(), self.driver.clone(), readout)
    }

    pub fn data_dim(&self) -> usize {
        self.embedding.in_dim()
    }

    pub fn chunks(&self) -> usize {
        self.driver.chunks()
    }

    pub fn res_dim(&self) -> usize {
        self.driver.res_dim()
    }

    pub fn force(&self, inputs: &TimeSeries, r0: &ReservoirState) -> Result<ForcedStates> {
        force(&self.embedding, &self.driver, inputs, r0)
    }

    /// Autoregressive forecast from state `r`: each step emits the readout
    /// of the current state and feeds it back as the next input.
    pub fn forecast(&self, fcast_len: usize, r: &ReservoirState) -> Result<TimeSeries> {
        if fcast_len == 0 {
            return Err(Error::InvalidParameter {
                name: "fcast_len",
                reason: "must be at least 1".into(),
            });
        }
        let (chunks, n, d) = (self.chunks(), self.res_dim(), self.data_dim());
        r.check_shape("forecast", chunks, n)?;
        let mut out = vec![0.0; fcast_len * d];
        let mut state = r.clone();
        let mut next = ReservoirState::zeros(chunks, n);
        let mut emb = vec![0.0; chunks * n];
        let mut scratch = Vec::new();
        for t in 0..fcast_len {
            let y = &mut out[t * d..(t + 1) * d];
            self.readout.read_into(state.as_slice(), y);
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteState { step: t });
            }
            if t + 1 == fcast_len {
                break;
            }
            self.embedding.embed_into(y, &mut scratch, &mut emb)?;
            self.driver.advance_into(&state, &emb, &mut next)?;
            std::mem::swap(&mut state, &mut next);
        }
        TimeSeries::new(out, d, None, 0.0)
    }

    /// Forces from the zero state through `spinup_data`, then forecasts.
    pub fn forecast_from_ic(&self, fcast_len: usize, spinup_data: &TimeSeries) -> Result<TimeSeries> {
        let r = self.spin_up(spinup_data)?;
        self.forecast(fcast_len, &r)
    }

    /// Final state after forcing from zero through `spinup_data`.
    pub fn spin_up(&self, spinup_data: &TimeSeries) -> Result<ReservoirState> {
        check_dim("spinup input", self.data_dim(), spinup_data.dim())?;
        let mut r = ReservoirState::zeros(self.chunks(), self.res_dim());
        let mut next = r.clone();
        let mut emb = vec![0.0; self.chunks() * self.res_dim()];
        let mut scratch = Vec::new();
        for (t, u) in spinup_data.rows().enumerate() {
            self.embedding.embed_into(u, &mut scratch, &mut emb)?;
            self.driver.advance_into(&r, &emb, &mut next)?;
            if !next.is_finite() {
                return Err(Error::NonFiniteState { step: t });
            }
            std::mem::swap(&mut r, &mut next);
        }
        Ok(r)
    }
}

/// How the fed-back prediction is presented to the reservoir ODE between
/// output times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Feedback {
    /// Held at the readout of the state at the interval start.
    PiecewiseConstant,
    /// Linear between the previous and current readouts.
    LinearRamp,
    /// Cubic Hermite through the previous and current readouts, with slopes
    /// estimated from the last three readouts.
    #[default]
    CubicHermite,
}

/// Continuous-time forecaster driven by the reservoir ODE.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousForecaster {
    embedding: Embedding,
    driver: ContinuousEsnDriver,
    readout: LinearReadout,
    feedback: Feedback,
}

impl ContinuousForecaster {
    pub fn new(embedding: Embedding, driver: ContinuousEsnDriver, readout: LinearReadout) -> Result<Self> {
        check_parts(&embedding, driver.chunks(), driver.res_dim(), &readout)?;
        Ok(Self {
            embedding,
            driver,
            readout,
            feedback: Feedback::default(),
        })
    }

    /// Untrained single-reservoir model with weights drawn from `params.seed`.
    pub fn random(data_dim: usize, params: &ContinuousParams) -> Result<Self> {
        let rng = seeded_rng(RngSpec::new(params.seed));
        let emb = make_linear_embedding(data_dim, params.res_dim, 1, 0, params.embedding_scaling, &rng)?;
        let weights = ReservoirWeights::random(1, params.res_dim, params.spectral_radius, params.bias, &rng)?;
        let driver = ContinuousEsnDriver::new(weights, params.time_const, params.solver)?;
        Ok(Self::untrained(emb.into(), driver)?.with_feedback(params.feedback))
    }

    pub fn untrained(embedding: Embedding, driver: ContinuousEsnDriver) -> Result<Self> {
        let readout = LinearReadout::zeros(embedding.in_dim(), driver.res_dim(), driver.chunks())?;
        Self::new(embedding, driver, readout)
    }

    pub fn with_feedback(mut self, feedback: Feedback) -> Self {
        self.feedback = feedback;
        self
    }

    pub fn feedback(&self) -> Feedback {
        self.feedback
    }

    pub fn embedding(&self) -> &Embedding {
        &self.embedding
    }

    pub fn driver(&self) -> &ContinuousEsnDriver {
        &self.driver
    }

    pub fn readout(&self) -> &LinearReadout {
        &self.readout
    }

    pub fn with_readout(&self, readout: LinearReadout) -> Result<Self> {
        Ok(Self::new(self.embedding.clone(), self.driver.clone(), readout)?.with_feedback(self.feedback))
    }

    pub fn with_driver(&self, driver: ContinuousEsnDriver) -> Result<Self> {
        Ok(Self::new(self.embedding.clone(), driver, self.readout.clone())?.with_feedback(self.feedback))
    }

    pub fn data_dim(&self) -> usize {
        self.embedding.in_dim()
    }

    pub fn chunks(&self) -> usize {
        self.driver.chunks()
    }

    pub fn res_dim(&self) -> usize {
        self.driver.res_dim()
    }

    /// Integrates the reservoir driven by a cubic Hermite interpolant of
    /// `inputs`. `states[0] = r0` sits at the first sample time and
    /// `states[k]` at sample `k`. `inputs` must carry a sampling interval.
    pub fn force(&self, inputs: &TimeSeries, r0: &ReservoirState) -> Result<ForcedStates> {
        check_dim("continuous force input", self.data_dim(), inputs.dim())?;
        if inputs.dt().is_none() {
            return Err(Error::InvalidParameter {
                name: "dt",
                reason: "continuous forcing needs sample times".into(),
            });
        }
        let (chunks, n) = (self.chunks(), self.res_dim());
        r0.check_shape("continuous force", chunks, n)?;
        let times = inputs.times();
        let mut states = ForcedStates::with_capacity(inputs.len(), chunks, n);
        states.push(r0);
        if inputs.len() == 1 {
            return Ok(states);
        }
        let interp = CubicHermite::new(times.clone(), inputs.values().to_vec(), inputs.dim())?;
        let mut integ = Integrator::new(self.driver.solver(), chunks * n);
        let mut r = r0.clone();
        let flat = integrate_continuous_with(&mut integ, &self.driver, &self.embedding, &mut r, &interp, times[0], &times[1..])?;
        for row in flat.chunks_exact(chunks * n) {
            states.push_slice(row);
        }
        if !states.is_finite() {
            return Err(Error::NonFiniteState { step: inputs.len() - 1 });
        }
        Ok(states)
    }

    /// Closed-loop continuous forecast emitting the readout at each of the
    /// strictly increasing times `ts`, starting from state `r` at `ts[0]`.
    pub fn forecast_continuous(&self, ts: &[f64], r: &ReservoirState) -> Result<TimeSeries> {
        if ts.is_empty() {
            return Err(Error::InvalidParameter {
                name: "ts",
                reason: "need at least one output time".into(),
            });
        }
        if ts.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter {
                name: "ts",
                reason: "times must be strictly increasing".into(),
            });
        }
        let (chunks, n, d) = (self.chunks(), self.res_dim(), self.data_dim());
        r.check_shape("forecast_continuous", chunks, n)?;
        let mut out = vec![0.0; ts.len() * d];
        let mut state = r.clone();
        let mut integ = Integrator::new(self.driver.solver(), chunks * n);
        let mut seg = Segment::new(d);
        for k in 0..ts.len() {
            let (done, rest) = out.split_at_mut(k * d);
            let y = &mut rest[..d];
            self.readout.read_into(state.as_slice(), y);
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteState { step: k });
            }
            if k + 1 == ts.len() {
                break;
            }
            seg.t0 = ts[k];
            seg.t1 = ts[k + 1];
            seg.p1.copy_from_slice(y);
            let prev = k.checked_sub(1).map(|j| &done[j * d..(j + 1) * d]);
            let before = k.checked_sub(2).map(|j| &done[j * d..(j + 1) * d]);
            match (self.feedback, prev, before) {
                (Feedback::PiecewiseConstant, _, _) | (_, None, _) => seg.hold(),
                (Feedback::LinearRamp, Some(p0), _) | (Feedback::CubicHermite, Some(p0), None) => seg.ramp(p0),
                (Feedback::CubicHermite, Some(p0), Some(pm)) => seg.cubic(pm, p0, ts[k] - ts[k - 1]),
            }
            integrate_continuous_with(&mut integ, &self.driver, &self.embedding, &mut state, &seg, ts[k], &[ts[k + 1]])?;
        }
        let dt = if ts.len() > 1 { Some(ts[1] - ts[0]) } else { None };
        TimeSeries::new(out, d, dt, ts[0])
    }
}

/// Cubic Hermite input on `[t0, t1]` from `p0` to `p1` with end slopes
/// `m0`, `m1`.
struct Segment {
    t0: f64,
    t1: f64,
    p0: Vec<f64>,
    p1: Vec<f64>,
    m0: Vec<f64>,
    m1: Vec<f64>,
}

impl Segment {
    fn new(d: usize) -> Self {
        Self {
            t0: 0.0,
            t1: 1.0,
            p0: vec![0.0; d],
            p1: vec![0.0; d],
            m0: vec![0.0; d],
            m1: vec![0.0; d],
        }
    }

    /// Constant at `p1`.
    fn hold(&mut self) {
        self.p0.copy_from_slice(&self.p1);
        self.m0.fill(0.0);
        self.m1.fill(0.0);
    }

    /// Straight line from `p0` to `p1`.
    fn ramp(&mut self, p0: &[f64]) {
        let h = self.t1 - self.t0;
        self.p0.copy_from_slice(p0);
        for i in 0..p0.len() {
            let slope = (self.p1[i] - p0[i]) / h;
            self.m0[i] = slope;
            self.m1[i] = slope;
        }
    }

    /// Slopes of the quadratic through `pm`, `p0`, `p1`, with `pm` sampled
    /// `hp` before `p0`.
    fn cubic(&mut self, pm: &[f64], p0: &[f64], hp: f64) {
        let h = self.t1 - self.t0;
        self.p0.copy_from_slice(p0);
        for i in 0..p0.len() {
            let p1 = self.p1[i];
            self.m0[i] = -pm[i] * h / (hp * (hp + h)) + p0[i] * (h - hp) / (hp * h) + p1 * hp / (h * (hp + h));
            self.m1[i] = pm[i] * h / (hp * (hp + h)) - p0[i] * (hp + h) / (hp * h) + p1 * (2.0 * h + hp) / (h * (hp + h));
        }
    }
}

impl InputSignal for Segment {
    fn dim(&self) -> usize {
        self.p1.len()
    }

    fn value_into(&self, t: f64, out: &mut [f64]) {
        let h = self.t1 - self.t0;
        let s = ((t - self.t0) / h).clamp(0.0, 1.0);
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        for (i, o) in out.iter_mut().enumerate() {
            *o = h00 * self.p0[i] + h10 * h * self.m0[i] + h01 * self.p1[i] + h11 * h * self.m1[i];
        }
    }
}

/// Time, in Lyapunov times, until the normalized forecast error first
/// exceeds `threshold`.
///
/// The error at step `t` is `|pred_t - truth_t| / RMS(truth)`; the first
/// offending step index `t` maps to `t * dt * lyap`. If the threshold is
/// never crossed the full horizon `len * dt * lyap` is returned. The sampling
/// interval `dt` is taken from `truth`, falling back to `pred`.
pub fn valid_time(pred: &TimeSeries, truth: &TimeSeries, threshold: f64, lyap: f64) -> Result<f64> {
    let dt = truth.dt().or(pred.dt()).ok_or_else(|| Error::InvalidParameter {
        name: "dt",
        reason: "valid_time needs a sampling interval".into(),
    })?;
    check_dim("valid_time length", truth.len(), pred.len())?;
    check_dim("valid_time dim", truth.dim(), pred.dim())?;
    if !(threshold > 0.0) {
        return Err(Error::InvalidParameter {
            name: "threshold",
            reason: format!("must be positive, got {threshold}"),
        });
    }
    let errors = normalized_errors(pred, truth)?;
    let steps = errors.iter().position(|e| *e > threshold).unwrap_or(errors.len());
    Ok(steps as f64 * dt * lyap)
}

/// Per-step error norms divided by the RMS of `truth`.
pub fn normalized_errors(pred: &TimeSeries, truth: &TimeSeries) -> Result<Vec<f64>> {
    check_dim("normalized_errors length", truth.len(), pred.len())?;
    check_dim("normalized_errors dim", truth.dim(), pred.dim())?;
    let rms = truth.rms();
    let scale = if rms > 0.0 { rms } else { 1.0 };
    Ok(pred
        .rows()
        .zip(truth.rows())
        .map(|(p, q)| p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() / scale)
        .collect())
}

/// Root-mean-square error over all entries divided by the RMS of `truth`.
pub fn nrmse(pred: &TimeSeries, truth: &TimeSeries) -> Result<f64> {
    check_dim("nrmse length", truth.len(), pred.len())?;
    check_dim("nrmse dim", truth.dim(), pred.dim())?;
    let n = truth.values().len() as f64;
    let mse = pred.values().iter().zip(truth.values()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
    let rms = truth.rms();
    Ok(mse.sqrt() / if rms > 0.0 { rms } else { 1.0 })
}
