//! Model-predictive control with a reservoir surrogate.

use crate::driver::{Driver, LeakyEsnDriver};
use crate::embed::{ChunkLayout, Embedding, LinearEmbedding};
use crate::error::{check_dim, Error, Result};
use crate::forecast::EsnParams;
use crate::readout::LinearReadout;
use crate::rng::{seeded_rng, RngSpec, SeededRng};
use crate::series::{ForcedStates, ReservoirState, TimeSeries};
use crate::train::{fit_dense_readout, RidgeConfig};

/// Reservoir surrogate of a controlled system: it is driven by the
/// concatenated `[y; u]` and reads out the next output.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerModel {
    embedding: LinearEmbedding,
    driver: Driver,
    readout: LinearReadout,
    control_dim: usize,
}

impl ControllerModel {
    pub fn new(embedding: LinearEmbedding, driver: Driver, readout: LinearReadout, control_dim: usize) -> Result<Self> {
        if driver.chunks() != 1 || embedding.layout().chunks() != 1 || readout.chunks() != 1 {
            return Err(Error::InvalidParameter {
                name: "chunks",
                reason: "controllers use a single reservoir".into(),
            });
        }
        if control_dim == 0 {
            return Err(Error::InvalidParameter {
                name: "control_dim",
                reason: "must be positive".into(),
            });
        }
        check_dim("controller embedding res_dim", driver.res_dim(), embedding.res_dim())?;
        check_dim("controller readout res_dim", driver.res_dim(), readout.res_dim())?;
        check_dim(
            "controller embedding input",
            readout.out_dim() + control_dim,
            embedding.layout().data_dim(),
        )?;
        Ok(Self {
            embedding,
            driver,
            readout,
            control_dim,
        })
    }

    pub fn untrained(embedding: LinearEmbedding, driver: Driver, data_dim: usize, control_dim: usize) -> Result<Self> {
        let readout = LinearReadout::zeros(data_dim, driver.res_dim(), 1)?;
        Self::new(embedding, driver, readout, control_dim)
    }

    /// Untrained single-reservoir leaky-ESN surrogate drawn from
    /// `params.seed`; `chunks` and `locality` are ignored.
    pub fn random(data_dim: usize, control_dim: usize, params: &EsnParams) -> Result<Self> {
        let rng = seeded_rng(RngSpec::new(params.seed));
        let emb = Self::random_embedding(data_dim, control_dim, params.res_dim, params.embedding_scaling, &rng)?;
        let driver = LeakyEsnDriver::random(1, params.res_dim, params.leak_rate, params.spectral_radius, params.bias, &rng)?;
        Self::untrained(emb, driver.into(), data_dim, control_dim)
    }

    /// Random linear embedding over `data_dim + control_dim` inputs.
    pub fn random_embedding(data_dim: usize, control_dim: usize, res_dim: usize, scaling: f64, rng: &SeededRng) -> Result<LinearEmbedding> {
        LinearEmbedding::random(ChunkLayout::single(data_dim + control_dim), res_dim, scaling, rng)
    }

    pub fn embedding(&self) -> &LinearEmbedding {
        &self.embedding
    }

    pub fn driver(&self) -> &Driver {
        &self.driver
    }

    pub fn readout(&self) -> &LinearReadout {
        &self.readout
    }

    pub fn data_dim(&self) -> usize {
        self.readout.out_dim()
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    pub fn res_dim(&self) -> usize {
        self.driver.res_dim()
    }

    pub fn with_readout(&self, readout: LinearReadout) -> Result<Self> {
        Self::new(self.embedding.clone(), self.driver.clone(), readout, self.control_dim)
    }

    /// Advances `r` by one step driven by output `y` and control `u`.
    pub fn step(&self, r: &ReservoirState, y: &[f64], u: &[f64]) -> Result<ReservoirState> {
        check_dim("controller output", self.data_dim(), y.len())?;
        check_dim("controller control", self.control_dim, u.len())?;
        let z: Vec<f64> = y.iter().chain(u).copied().collect();
        let emb = self.embedding.embed(&z)?;
        let next = self.driver.advance(r, &emb)?;
        if !next.is_finite() {
            return Err(Error::NonFiniteState { step: 0 });
        }
        Ok(next)
    }

    /// Forces with rows `[outputs_t; controls_t]`.
    pub fn force(&self, outputs: &TimeSeries, controls: &TimeSeries, r0: &ReservoirState) -> Result<ForcedStates> {
        check_dim("controller force length", outputs.len(), controls.len())?;
        let joined = concat_series(outputs, controls)?;
        let emb: Embedding = self.embedding.clone().into();
        crate::train::force(&emb, &self.driver, &joined, r0)
    }
}

fn concat_series(a: &TimeSeries, b: &TimeSeries) -> Result<TimeSeries> {
    let mut values = Vec::with_capacity(a.len() * (a.dim() + b.dim()));
    for (x, y) in a.rows().zip(b.rows()) {
        values.extend_from_slice(x);
        values.extend_from_slice(y);
    }
    TimeSeries::new(values, a.dim() + b.dim(), a.dt(), a.t0())
}

/// Trains the surrogate to map `(y_t, u_{t+1})` to `y_{t+1}`.
///
/// `control_seq[t]` is the control that produced `output_seq[t]`. The
/// reservoir is forced from zero with `[y_t; u_{t+1}]` for `t < T - 1`, and
/// states from `cfg.spinup` on are regressed onto `y_{t+1}`.
pub fn train_controller(
    model: &ControllerModel,
    output_seq: &TimeSeries,
    control_seq: &TimeSeries,
    cfg: RidgeConfig,
) -> Result<(ControllerModel, ForcedStates)> {
    check_dim("train_controller length", output_seq.len(), control_seq.len())?;
    check_dim("train_controller output", model.data_dim(), output_seq.dim())?;
    check_dim("train_controller control", model.control_dim, control_seq.dim())?;
    let t = output_seq.len();
    if t < cfg.spinup + 2 {
        return Err(Error::TooShort {
            needed: cfg.spinup + 2,
            got: t,
        });
    }
    let outputs = output_seq.slice(0, t - 1)?;
    let controls = control_seq.slice(1, t)?;
    let r0 = ReservoirState::zeros(1, model.res_dim());
    let states = model.force(&outputs, &controls, &r0)?;
    let rows = t - 1 - cfg.spinup;
    let x = &states.as_slice()[cfg.spinup * model.res_dim()..];
    let y = &output_seq.values()[(cfg.spinup + 1) * model.data_dim()..];
    let readout = fit_dense_readout(x, y, rows, model.res_dim(), model.data_dim(), cfg.beta)?;
    Ok((model.with_readout(readout)?, states))
}

/// Horizon cost weights and optimizer settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpcConfig {
    pub horizon: usize,
    /// Tracking weight.
    pub alpha_track: f64,
    /// Control effort weight.
    pub alpha_effort: f64,
    /// Control smoothness weight.
    pub alpha_smooth: f64,
    pub max_iter: usize,
    pub grad_tol: f64,
    /// Start each receding-horizon solve from the shifted previous solution
    /// instead of zeros.
    pub warm_start: bool,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 20,
            alpha_track: 1.0,
            alpha_effort: 1e-3,
            alpha_smooth: 1e-3,
            max_iter: 100,
            grad_tol: 1e-8,
            warm_start: false,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidParameter {
                name: "horizon",
                reason: "must be at least 1".into(),
            });
        }
        for (name, v) in [
            ("alpha_track", self.alpha_track),
            ("alpha_effort", self.alpha_effort),
            ("alpha_smooth", self.alpha_smooth),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be non-negative, got {v}"),
                });
            }
        }
        Ok(())
    }
}

/// The three cost terms, `alpha`-weighted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostTerms {
    pub tracking: f64,
    pub effort: f64,
    pub smoothness: f64,
}

impl CostTerms {
    pub fn total(&self) -> f64 {
        self.tracking + self.effort + self.smoothness
    }
}

struct Rollout {
    /// `H + 1` states.
    states: Vec<f64>,
    /// `H` driver caches.
    caches: Vec<f64>,
    /// `H + 1` outputs.
    outputs: Vec<f64>,
}

fn check_horizon(model: &ControllerModel, u_seq: &[f64], r0: &ReservoirState, y_ref: &[f64]) -> Result<usize> {
    r0.check_shape("mpc initial state", 1, model.res_dim())?;
    let du = model.control_dim;
    if u_seq.is_empty() || u_seq.len() % du != 0 {
        return Err(Error::DimensionMismatch {
            context: "mpc controls",
            expected: du,
            got: u_seq.len(),
        });
    }
    let h = u_seq.len() / du;
    check_dim("mpc reference", h * model.data_dim(), y_ref.len())?;
    Ok(h)
}

/// Surrogate rollout: `y_k = read(r_k)`, `r_{k+1} = advance(r_k, E [y_k; u_k])`.
fn rollout(model: &ControllerModel, u_seq: &[f64], r0: &ReservoirState, h: usize) -> Rollout {
    let (n, dy, du) = (model.res_dim(), model.data_dim(), model.control_dim);
    let cl = model.driver.cache_len();
    let mut states = vec![0.0; (h + 1) * n];
    let mut caches = vec![0.0; h * cl];
    let mut outputs = vec![0.0; (h + 1) * dy];
    states[..n].copy_from_slice(r0.as_slice());
    let mut z = vec![0.0; dy + du];
    let mut emb = vec![0.0; n];
    let mut scratch = Vec::new();
    for k in 0..=h {
        let (done, rest) = states.split_at_mut((k + 1) * n);
        let r = &done[k * n..];
        let y = &mut outputs[k * dy..(k + 1) * dy];
        model.readout.read_into(r, y);
        if k == h {
            break;
        }
        z[..dy].copy_from_slice(y);
        z[dy..].copy_from_slice(&u_seq[k * du..(k + 1) * du]);
        model
            .embedding
            .embed_into(&z, &mut scratch, &mut emb)
            .expect("controller embedding shape");
        model
            .driver
            .advance_cached(r, &emb, &mut rest[..n], &mut caches[k * cl..(k + 1) * cl]);
    }
    Rollout { states, caches, outputs }
}

fn cost_terms_from(model: &ControllerModel, roll: &Rollout, u_seq: &[f64], y_ref: &[f64], h: usize, cfg: &MpcConfig) -> CostTerms {
    let (dy, du) = (model.data_dim(), model.control_dim);
    let mut tracking = 0.0;
    for k in 1..=h {
        let y = &roll.outputs[k * dy..(k + 1) * dy];
        let r = &y_ref[(k - 1) * dy..k * dy];
        tracking += y.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    let effort: f64 = u_seq.iter().map(|u| u * u).sum();
    let mut smoothness = 0.0;
    for k in 1..h {
        for j in 0..du {
            let d = u_seq[k * du + j] - u_seq[(k - 1) * du + j];
            smoothness += d * d;
        }
    }
    CostTerms {
        tracking: cfg.alpha_track * tracking,
        effort: cfg.alpha_effort * effort,
        smoothness: cfg.alpha_smooth * smoothness,
    }
}

/// Weighted cost terms of the control sequence `u_seq` (`H x control_dim`
/// row-major) against `y_ref` (`H x data_dim`), starting from `r0`.
pub fn mpc_cost_terms(model: &ControllerModel, u_seq: &[f64], r0: &ReservoirState, y_ref: &[f64], cfg: &MpcConfig) -> Result<CostTerms> {
    let h = check_horizon(model, u_seq, r0, y_ref)?;
    let roll = rollout(model, u_seq, r0, h);
    Ok(cost_terms_from(model, &roll, u_seq, y_ref, h, cfg))
}

/// `a1 sum_k |y_k - ref_{k-1}|^2 + a2 sum_k |u_k|^2 + a3 sum_k |u_k - u_{k-1}|^2`
/// with `y_k` the surrogate outputs for `k = 1..=H`.
pub fn mpc_cost(model: &ControllerModel, u_seq: &[f64], r0: &ReservoirState, y_ref: &[f64], cfg: &MpcConfig) -> Result<f64> {
    Ok(mpc_cost_terms(model, u_seq, r0, y_ref, cfg)?.total())
}

/// Cost and its exact gradient with respect to `u_seq`, by reverse
/// accumulation through the unrolled rollout.
pub fn mpc_cost_and_gradient(
    model: &ControllerModel,
    u_seq: &[f64],
    r0: &ReservoirState,
    y_ref: &[f64],
    cfg: &MpcConfig,
) -> Result<(f64, Vec<f64>)> {
    let h = check_horizon(model, u_seq, r0, y_ref)?;
    let (n, dy, du) = (model.res_dim(), model.data_dim(), model.control_dim);
    let cl = model.driver.cache_len();
    let roll = rollout(model, u_seq, r0, h);
    let cost = cost_terms_from(model, &roll, u_seq, y_ref, h, cfg).total();

    let w_o = model.readout.weights();
    let w_e = model.embedding.weights();
    let dz_dim = dy + du;
    // dL/dy_k for the tracking term
    let dy_track = |k: usize, out: &mut [f64]| {
        let y = &roll.outputs[k * dy..(k + 1) * dy];
        let r = &y_ref[(k - 1) * dy..k * dy];
        for j in 0..dy {
            out[j] = 2.0 * cfg.alpha_track * (y[j] - r[j]);
        }
    };
    let add_wo_t = |g: &[f64], lambda: &mut [f64]| {
        for (j, gj) in g.iter().enumerate() {
            for (l, w) in lambda.iter_mut().zip(&w_o[j * n..(j + 1) * n]) {
                *l += w * gj;
            }
        }
    };
    let mut lambda = vec![0.0; n];
    let mut g_y = vec![0.0; dy];
    dy_track(h, &mut g_y);
    add_wo_t(&g_y, &mut lambda);

    let mut grad = vec![0.0; h * du];
    let mut d_r = vec![0.0; n];
    let mut d_emb = vec![0.0; n];
    let mut d_z = vec![0.0; dz_dim];
    for k in (0..h).rev() {
        let r = &roll.states[k * n..(k + 1) * n];
        d_r.iter_mut().for_each(|v| *v = 0.0);
        model
            .driver
            .vjp(r, &roll.caches[k * cl..(k + 1) * cl], &lambda, &mut d_r, &mut d_emb);
        d_z.iter_mut().for_each(|v| *v = 0.0);
        for (i, de) in d_emb.iter().enumerate() {
            for (dz, w) in d_z.iter_mut().zip(&w_e[i * dz_dim..(i + 1) * dz_dim]) {
                *dz += w * de;
            }
        }
        grad[k * du..(k + 1) * du].copy_from_slice(&d_z[dy..]);
        g_y.copy_from_slice(&d_z[..dy]);
        if k >= 1 {
            let mut tr = vec![0.0; dy];
            dy_track(k, &mut tr);
            g_y.iter_mut().zip(tr).for_each(|(a, b)| *a += b);
        }
        lambda.copy_from_slice(&d_r);
        add_wo_t(&g_y, &mut lambda);
    }
    for k in 0..h {
        for j in 0..du {
            let i = k * du + j;
            grad[i] += 2.0 * cfg.alpha_effort * u_seq[i];
            if k >= 1 {
                grad[i] += 2.0 * cfg.alpha_smooth * (u_seq[i] - u_seq[i - du]);
            }
            if k + 1 < h {
                grad[i] -= 2.0 * cfg.alpha_smooth * (u_seq[i + du] - u_seq[i]);
            }
        }
    }
    Ok((cost, grad))
}

pub fn mpc_gradient(model: &ControllerModel, u_seq: &[f64], r0: &ReservoirState, y_ref: &[f64], cfg: &MpcConfig) -> Result<Vec<f64>> {
    Ok(mpc_cost_and_gradient(model, u_seq, r0, y_ref, cfg)?.1)
}

/// Why BFGS stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BfgsStatus {
    Converged,
    MaxIterations,
    /// No step satisfying the sufficient-decrease condition was found; the
    /// best iterate is returned.
    LineSearchFailed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub armijo_c1: f64,
    pub max_halvings: usize,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            grad_tol: 1e-8,
            armijo_c1: 1e-4,
            max_halvings: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub cost: f64,
    pub iterations: usize,
    pub status: BfgsStatus,
    /// Cost of every accepted iterate, starting with the initial point.
    pub history: Vec<f64>,
}

/// Dense BFGS with identity initial inverse Hessian and Armijo backtracking
/// by halving. `f` returns the cost and gradient.
pub fn bfgs<F>(mut f: F, x0: &[f64], opts: BfgsOptions) -> Result<BfgsResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut fx, mut g) = f(&x)?;
    let mut hinv = vec![0.0; n * n];
    for i in 0..n {
        hinv[i * n + i] = 1.0;
    }
    let mut history = vec![fx];
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let mut status = BfgsStatus::MaxIterations;
    let mut iterations = 0;
    let mut p = vec![0.0; n];
    let mut hy = vec![0.0; n];
    while iterations < opts.max_iter {
        if norm(&g) < opts.grad_tol {
            status = BfgsStatus::Converged;
            break;
        }
        for i in 0..n {
            p[i] = -(0..n).map(|j| hinv[i * n + j] * g[j]).sum::<f64>();
        }
        let mut slope: f64 = p.iter().zip(&g).map(|(a, b)| a * b).sum();
        if slope >= 0.0 {
            // lost descent: restart from steepest descent
            for i in 0..n {
                for j in 0..n {
                    hinv[i * n + j] = if i == j { 1.0 } else { 0.0 };
                }
                p[i] = -g[i];
            }
            slope = -g.iter().map(|a| a * a).sum::<f64>();
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let trial: Vec<f64> = x.iter().zip(&p).map(|(a, b)| a + step * b).collect();
            let (ft, gt) = f(&trial)?;
            if ft.is_finite() && ft <= fx + opts.armijo_c1 * step * slope {
                accepted = Some((trial, ft, gt));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            status = BfgsStatus::LineSearchFailed;
            break;
        };
        iterations += 1;
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        if sy > 1e-300 {
            for i in 0..n {
                hy[i] = (0..n).map(|j| hinv[i * n + j] * y[j]).sum();
            }
            let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
            let rho = 1.0 / sy;
            let coef = (1.0 + rho * yhy) * rho;
            for i in 0..n {
                for j in 0..n {
                    hinv[i * n + j] += coef * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
                }
            }
        }
        x = x_new;
        fx = f_new;
        g = g_new;
        history.push(fx);
        if norm(&g) < opts.grad_tol {
            status = BfgsStatus::Converged;
            break;
        }
    }
    Ok(BfgsResult {
        x,
        cost: fx,
        iterations,
        status,
        history,
    })
}

/// Optimizes a horizon of controls from `u_init` with BFGS.
pub fn compute_control(
    model: &ControllerModel,
    u_init: &[f64],
    r0: &ReservoirState,
    y_ref: &[f64],
    cfg: &MpcConfig,
) -> Result<BfgsResult> {
    cfg.validate()?;
    check_horizon(model, u_init, r0, y_ref)?;
    let opts = BfgsOptions {
        max_iter: cfg.max_iter,
        grad_tol: cfg.grad_tol,
        ..BfgsOptions::default()
    };
    bfgs(|u| mpc_cost_and_gradient(model, u, r0, y_ref, cfg), u_init, opts)
}

/// Two masses in series on springs and dampers, the first attached to a
/// wall, with the control force acting on the first mass. State
/// `[x1, x2, v1, v2]`, outputs the two positions, forward-Euler discretized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoMassPlant {
    pub masses: [f64; 2],
    pub springs: [f64; 2],
    pub dampers: [f64; 2],
    pub dt: f64,
    a: [[f64; 4]; 4],
    b: [f64; 4],
}

impl Default for TwoMassPlant {
    fn default() -> Self {
        Self::new([1.0, 1.0], [2.0, 1.0], [0.4, 0.4], 0.1).expect("default plant parameters are valid")
    }
}

impl TwoMassPlant {
    pub fn new(masses: [f64; 2], springs: [f64; 2], dampers: [f64; 2], dt: f64) -> Result<Self> {
        if masses.iter().any(|m| !(*m > 0.0)) || !(dt > 0.0) {
            return Err(Error::InvalidParameter {
                name: "plant",
                reason: "masses and dt must be positive".into(),
            });
        }
        let [m1, m2] = masses;
        let [k1, k2] = springs;
        let [c1, c2] = dampers;
        let a_cont = [
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
            [-(k1 + k2) / m1, k2 / m1, -(c1 + c2) / m1, c2 / m1],
            [k2 / m2, -k2 / m2, c2 / m2, -c2 / m2],
        ];
        let b_cont = [0.0, 0.0, 1.0 / m1, 0.0];
        let mut a = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                a[i][j] = if i == j { 1.0 } else { 0.0 } + dt * a_cont[i][j];
            }
        }
        let b = b_cont.map(|v| dt * v);
        Ok(Self {
            masses,
            springs,
            dampers,
            dt,
            a,
            b,
        })
    }

    pub fn a(&self) -> &[[f64; 4]; 4] {
        &self.a
    }

    pub fn b(&self) -> &[f64; 4] {
        &self.b
    }

    /// `y = C x`: the two positions.
    pub fn output(x: &[f64; 4]) -> [f64; 2] {
        [x[0], x[1]]
    }

    /// `x' = A x + B u`, `y = C x'`.
    pub fn step(&self, x: &[f64; 4], u: f64) -> ([f64; 4], [f64; 2]) {
        let mut next = [0.0; 4];
        for i in 0..4 {
            next[i] = (0..4).map(|j| self.a[i][j] * x[j]).sum::<f64>() + self.b[i] * u;
        }
        (next, Self::output(&next))
    }
}

pub fn plant_step(p: &TwoMassPlant, x: &[f64; 4], u: f64) -> ([f64; 4], [f64; 2]) {
    p.step(x, u)
}

/// Excitation record for training a surrogate of the plant.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantRecord {
    /// `y_t`, the output after applying `controls[t]`.
    pub outputs: TimeSeries,
    pub controls: TimeSeries,
    /// Plant state after the last control.
    pub final_state: [f64; 4],
}

/// Drives the plant from rest with `segments` forces uniform on `[-1, 1]`,
/// each held for `hold` steps.
pub fn excite_plant(plant: &TwoMassPlant, segments: usize, hold: usize, rng: &mut SeededRng) -> Result<PlantRecord> {
    let t = segments * hold;
    if t == 0 {
        return Err(Error::TooShort { needed: 1, got: 0 });
    }
    let mut x = [0.0; 4];
    let mut outputs = Vec::with_capacity(2 * t);
    let mut controls = Vec::with_capacity(t);
    for _ in 0..segments {
        let u = rng.uniform_range(-1.0, 1.0);
        for _ in 0..hold {
            let (next, y) = plant.step(&x, u);
            x = next;
            outputs.extend_from_slice(&y);
            controls.push(u);
        }
    }
    Ok(PlantRecord {
        outputs: TimeSeries::new(outputs, 2, Some(plant.dt), plant.dt)?,
        controls: TimeSeries::new(controls, 1, Some(plant.dt), plant.dt)?,
        final_state: x,
    })
}

/// Closed-loop record of a receding-horizon run.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoop {
    /// Observed outputs after each applied control (`steps x 2`).
    pub outputs: Vec<[f64; 2]>,
    pub controls: Vec<f64>,
    pub plant_states: Vec<[f64; 4]>,
    /// Solver status of every horizon solve.
    pub statuses: Vec<BfgsStatus>,
}

impl ClosedLoop {
    pub fn final_output_norm(&self) -> f64 {
        self.outputs.last().map_or(0.0, |y| (y[0] * y[0] + y[1] * y[1]).sqrt())
    }
}

/// Receding-horizon loop on the two-mass plant.
///
/// `r0` must be the surrogate state whose readout estimates the current
/// output `C x0`. Each step optimizes a horizon truncated at the end of
/// `y_ref_full` (rows `n..n+H` at step `n`), applies the first control, and
/// forces the surrogate with the previously observed output and the applied
/// control.
pub fn receding_horizon(
    model: &ControllerModel,
    plant: &TwoMassPlant,
    x0: [f64; 4],
    r0: &ReservoirState,
    y_ref_full: &[[f64; 2]],
    steps: usize,
    cfg: &MpcConfig,
) -> Result<ClosedLoop> {
    cfg.validate()?;
    check_dim("receding_horizon data_dim", 2, model.data_dim())?;
    check_dim("receding_horizon control_dim", 1, model.control_dim())?;
    if steps == 0 {
        return Err(Error::InvalidParameter {
            name: "steps",
            reason: "must be at least 1".into(),
        });
    }
    if y_ref_full.len() < steps {
        return Err(Error::TooShort {
            needed: steps,
            got: y_ref_full.len(),
        });
    }
    let mut x = x0;
    let mut y_obs = TwoMassPlant::output(&x);
    let mut r = r0.clone();
    let mut run = ClosedLoop {
        outputs: Vec::with_capacity(steps),
        controls: Vec::with_capacity(steps),
        plant_states: Vec::with_capacity(steps),
        statuses: Vec::with_capacity(steps),
    };
    let mut previous: Vec<f64> = Vec::new();
    for n in 0..steps {
        let h = cfg.horizon.min(y_ref_full.len() - n);
        let y_ref: Vec<f64> = y_ref_full[n..n + h].iter().flatten().copied().collect();
        let mut u_init = vec![0.0; h];
        if cfg.warm_start && !previous.is_empty() {
            for (k, u) in u_init.iter_mut().enumerate() {
                *u = previous.get(k + 1).copied().unwrap_or(0.0);
            }
        }
        let sol = compute_control(model, &u_init, &r, &y_ref, cfg)?;
        let u0 = sol.x[0];
        r = model.step(&r, &y_obs, &[u0])?;
        let (next, y) = plant.step(&x, u0);
        x = next;
        y_obs = y;
        run.outputs.push(y);
        run.controls.push(u0);
        run.plant_states.push(x);
        run.statuses.push(sol.status);
        previous = sol.x;
    }
    Ok(run)
}

/// Free response of the plant from `x0` under zero input.
pub fn uncontrolled(plant: &TwoMassPlant, x0: [f64; 4], steps: usize) -> Vec<[f64; 2]> {
    let mut x = x0;
    (0..steps)
        .map(|_| {
            let (next, y) = plant.step(&x, 0.0);
            x = next;
            y
        })
        .collect()
}
