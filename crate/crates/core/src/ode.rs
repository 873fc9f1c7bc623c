//! Explicit ODE integration: adaptive Dormand-Prince 5(4) with dense output,
//! fixed-step Dormand-Prince and forward Euler, plus cubic Hermite
//! interpolation of sampled signals.

use crate::error::{check_dim, Error, Result};

/// Integration method and step control.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Solver {
    /// Adaptive Dormand-Prince 5(4) with a PI step-size controller.
    Dopri5 {
        rtol: f64,
        atol: f64,
        max_steps: usize,
    },
    /// Dormand-Prince 5th-order solution with constant step `h`.
    Dopri5Fixed { h: f64 },
    /// Forward Euler with constant step `h`.
    Euler { h: f64 },
}

impl Solver {
    pub fn dopri5(rtol: f64, atol: f64) -> Self {
        Solver::Dopri5 {
            rtol,
            atol,
            max_steps: 10_000_000,
        }
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Reusable integrator holding stage buffers and the last accepted step size.
#[derive(Debug, Clone)]
pub struct Integrator {
    solver: Solver,
    dim: usize,
    k: [Vec<f64>; 7],
    y_stage: Vec<f64>,
    y_new: Vec<f64>,
    err: Vec<f64>,
    dense: [Vec<f64>; 5],
    h_next: Option<f64>,
    fac_old: f64,
    /// Accepted steps over the integrator's lifetime.
    pub accepted_steps: usize,
    /// Rejected steps over the integrator's lifetime.
    pub rejected_steps: usize,
}

impl Integrator {
    pub fn new(solver: Solver, dim: usize) -> Self {
        let v = || vec![0.0; dim];
        Self {
            solver,
            dim,
            k: [v(), v(), v(), v(), v(), v(), v()],
            y_stage: v(),
            y_new: v(),
            err: v(),
            dense: [v(), v(), v(), v(), v()],
            h_next: None,
            fac_old: 1e-4,
            accepted_steps: 0,
            rejected_steps: 0,
        }
    }

    pub fn solver(&self) -> Solver {
        self.solver
    }

    /// Advances `y` from `t0` through the increasing `eval_times`, writing the
    /// solution at each into consecutive `dim`-sized rows of `out`. On return
    /// `y` holds the state at the last evaluation time.
    pub fn integrate<F>(&mut self, mut rhs: F, t0: f64, y: &mut [f64], eval_times: &[f64], out: &mut [f64]) -> Result<()>
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        check_dim("Integrator state", self.dim, y.len())?;
        check_dim("Integrator output", self.dim * eval_times.len(), out.len())?;
        let mut prev = t0;
        for &te in eval_times {
            if !(te >= prev) {
                return Err(Error::InvalidParameter {
                    name: "eval_times",
                    reason: format!("must be non-decreasing from t0 = {t0}, got {te} after {prev}"),
                });
            }
            prev = te;
        }
        match self.solver {
            Solver::Dopri5 { rtol, atol, max_steps } => {
                self.integrate_adaptive(&mut rhs, t0, y, eval_times, out, rtol, atol, max_steps)
            }
            Solver::Dopri5Fixed { h } | Solver::Euler { h } => {
                if !(h > 0.0 && h.is_finite()) {
                    return Err(Error::InvalidParameter {
                        name: "h",
                        reason: format!("fixed step must be positive, got {h}"),
                    });
                }
                let mut t = t0;
                for (i, &te) in eval_times.iter().enumerate() {
                    let span = te - t;
                    if span > 0.0 {
                        let n = ((span / h) - 1e-9).ceil().max(1.0) as usize;
                        let step = span / n as f64;
                        for j in 0..n {
                            let ts = t + j as f64 * step;
                            self.fixed_step(&mut rhs, ts, y, step);
                            if y.iter().any(|v| !v.is_finite()) {
                                return Err(Error::SolverDiverged { t: ts + step });
                            }
                        }
                        t = te;
                    }
                    out[i * self.dim..(i + 1) * self.dim].copy_from_slice(y);
                }
                Ok(())
            }
        }
    }

    fn fixed_step<F>(&mut self, rhs: &mut F, t: f64, y: &mut [f64], h: f64)
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        match self.solver {
            Solver::Euler { .. } => {
                rhs(t, y, &mut self.k[0]);
                for (yi, ki) in y.iter_mut().zip(&self.k[0]) {
                    *yi += h * ki;
                }
            }
            _ => {
                rhs(t, y, &mut self.k[0]);
                self.stages(rhs, t, y, h);
                y.copy_from_slice(&self.y_new);
            }
        }
        self.accepted_steps += 1;
    }

    /// Computes stages 2..7 given `k[0] = f(t, y)`; leaves the 5th-order
    /// solution in `y_new` and `k[6] = f(t + h, y_new)`.
    fn stages<F>(&mut self, rhs: &mut F, t: f64, y: &[f64], h: f64)
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        let n = self.dim;
        let [k1, k2, k3, k4, k5, k6, k7] = &mut self.k;
        let ys = &mut self.y_stage;
        for i in 0..n {
            ys[i] = y[i] + h * A21 * k1[i];
        }
        rhs(t + C2 * h, ys, k2);
        for i in 0..n {
            ys[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        rhs(t + C3 * h, ys, k3);
        for i in 0..n {
            ys[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        rhs(t + C4 * h, ys, k4);
        for i in 0..n {
            ys[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        rhs(t + C5 * h, ys, k5);
        for i in 0..n {
            ys[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        rhs(t + h, ys, k6);
        let yn = &mut self.y_new;
        for i in 0..n {
            yn[i] = y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        rhs(t + h, yn, k7);
    }

    #[allow(clippy::too_many_arguments)]
    fn integrate_adaptive<F>(
        &mut self,
        rhs: &mut F,
        t0: f64,
        y: &mut [f64],
        eval_times: &[f64],
        out: &mut [f64],
        rtol: f64,
        atol: f64,
        max_steps: usize,
    ) -> Result<()>
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        let n = self.dim;
        let Some(&t_end) = eval_times.last() else {
            return Ok(());
        };
        let mut next_out = 0;
        while next_out < eval_times.len() && eval_times[next_out] <= t0 {
            out[next_out * n..(next_out + 1) * n].copy_from_slice(y);
            next_out += 1;
        }
        if next_out == eval_times.len() {
            return Ok(());
        }

        let mut t = t0;
        rhs(t, y, &mut self.k[0]);
        let mut h = match self.h_next {
            Some(h) => h,
            None => self.initial_step(rhs, t, y, rtol, atol),
        };
        let h_min = 1e-14 * (t_end - t0).abs().max(1.0);
        let mut steps = 0usize;
        const BETA: f64 = 0.04;
        const EXPO1: f64 = 0.2 - BETA * 0.75;
        const SAFE: f64 = 0.9;

        while t < t_end {
            if steps >= max_steps {
                return Err(Error::SolverDiverged { t });
            }
            steps += 1;
            // don't let rounding leave a sliver of an interval
            if t + 1.01 * h >= t_end {
                h = t_end - t;
            }
            if h < h_min || !h.is_finite() {
                return Err(Error::SolverDiverged { t });
            }
            self.stages(rhs, t, y, h);
            let mut err_sq = 0.0;
            for i in 0..n {
                let e = h
                    * (E1 * self.k[0][i]
                        + E3 * self.k[2][i]
                        + E4 * self.k[3][i]
                        + E5 * self.k[4][i]
                        + E6 * self.k[5][i]
                        + E7 * self.k[6][i]);
                self.err[i] = e;
                let sk = atol + rtol * y[i].abs().max(self.y_new[i].abs());
                err_sq += (e / sk).powi(2);
            }
            let err = (err_sq / n as f64).sqrt();
            if !err.is_finite() {
                self.rejected_steps += 1;
                h *= 0.1;
                continue;
            }
            let fac11 = err.powf(EXPO1);
            if err <= 1.0 {
                let fac = (fac11 / self.fac_old.powf(BETA) / SAFE).clamp(0.2, 10.0);
                let h_new = h / fac;
                self.fac_old = err.max(1e-4);
                let t_new = t + h;
                // dense output over [t, t_new]
                while next_out < eval_times.len() && eval_times[next_out] <= t_new {
                    let te = eval_times[next_out];
                    self.prepare_dense(y, h);
                    let theta = if h > 0.0 { (te - t) / h } else { 1.0 };
                    let row = &mut out[next_out * n..(next_out + 1) * n];
                    if te == t_new {
                        row.copy_from_slice(&self.y_new);
                    } else {
                        self.eval_dense(theta, row);
                    }
                    next_out += 1;
                }
                y.copy_from_slice(&self.y_new);
                let (k1, rest) = self.k.split_at_mut(1);
                k1[0].copy_from_slice(&rest[5]);
                t = t_new;
                self.accepted_steps += 1;
                if y.iter().any(|v| !v.is_finite()) {
                    return Err(Error::SolverDiverged { t });
                }
                h = h_new;
                self.h_next = Some(h_new);
            } else {
                self.rejected_steps += 1;
                h /= (fac11 / SAFE).min(5.0);
            }
        }
        while next_out < eval_times.len() {
            out[next_out * n..(next_out + 1) * n].copy_from_slice(y);
            next_out += 1;
        }
        Ok(())
    }

    fn prepare_dense(&mut self, y: &[f64], h: f64) {
        let [r1, r2, r3, r4, r5] = &mut self.dense;
        let k = &self.k;
        for i in 0..self.dim {
            let ydiff = self.y_new[i] - y[i];
            let bspl = h * k[0][i] - ydiff;
            r1[i] = y[i];
            r2[i] = ydiff;
            r3[i] = bspl;
            r4[i] = ydiff - h * k[6][i] - bspl;
            r5[i] = h
                * (D1 * k[0][i] + D3 * k[2][i] + D4 * k[3][i] + D5 * k[4][i] + D6 * k[5][i] + D7 * k[6][i]);
        }
    }

    fn eval_dense(&self, theta: f64, out: &mut [f64]) {
        let theta1 = 1.0 - theta;
        let [r1, r2, r3, r4, r5] = &self.dense;
        for i in 0..self.dim {
            out[i] = r1[i] + theta * (r2[i] + theta1 * (r3[i] + theta * (r4[i] + theta1 * r5[i])));
        }
    }

    fn initial_step<F>(&mut self, rhs: &mut F, t: f64, y: &[f64], rtol: f64, atol: f64) -> f64
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        let n = self.dim as f64;
        let sk = |yi: f64| atol + rtol * yi.abs();
        let d0 = (y.iter().map(|v| (v / sk(*v)).powi(2)).sum::<f64>() / n).sqrt();
        let d1 = (y
            .iter()
            .zip(&self.k[0])
            .map(|(v, f)| (f / sk(*v)).powi(2))
            .sum::<f64>()
            / n)
            .sqrt();
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        for i in 0..self.dim {
            self.y_stage[i] = y[i] + h0 * self.k[0][i];
        }
        let (k1, rest) = self.k.split_at_mut(1);
        rhs(t + h0, &self.y_stage, &mut rest[0]);
        let d2 = (y
            .iter()
            .zip(k1[0].iter().zip(&rest[0]))
            .map(|(v, (a, b))| ((b - a) / sk(*v)).powi(2))
            .sum::<f64>()
            / n)
            .sqrt()
            / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        (100.0 * h0).min(h1)
    }
}

/// Integrates `rhs` from `(t0, y0)` and samples the solution at `eval_times`.
///
/// Returns a row-major `eval_times.len() x dim` buffer.
pub fn solve<F>(rhs: F, t0: f64, y0: &[f64], eval_times: &[f64], solver: Solver) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let mut integ = Integrator::new(solver, y0.len());
    let mut y = y0.to_vec();
    let mut out = vec![0.0; y0.len() * eval_times.len()];
    integ.integrate(rhs, t0, &mut y, eval_times, &mut out)?;
    Ok(out)
}

/// Piecewise cubic Hermite interpolant with finite-difference tangents.
///
/// Interior tangents are centred differences over the neighbouring samples
/// (Catmull-Rom); the end tangents are one-sided differences.
#[derive(Debug, Clone)]
pub struct CubicHermite {
    times: Vec<f64>,
    values: Vec<f64>,
    slopes: Vec<f64>,
    dim: usize,
}

impl CubicHermite {
    pub fn new(times: Vec<f64>, values: Vec<f64>, dim: usize) -> Result<Self> {
        let n = times.len();
        if n == 0 || dim == 0 {
            return Err(Error::InvalidParameter {
                name: "times",
                reason: "interpolant needs at least one sample".into(),
            });
        }
        check_dim("CubicHermite values", n * dim, values.len())?;
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter {
                name: "times",
                reason: "sample times must be strictly increasing".into(),
            });
        }
        let mut slopes = vec![0.0; n * dim];
        if n >= 2 {
            for k in 0..n {
                let (lo, hi) = if k == 0 {
                    (0, 1)
                } else if k == n - 1 {
                    (n - 2, n - 1)
                } else {
                    (k - 1, k + 1)
                };
                let dt = times[hi] - times[lo];
                for d in 0..dim {
                    slopes[k * dim + d] = (values[hi * dim + d] - values[lo * dim + d]) / dt;
                }
            }
        }
        Ok(Self {
            times,
            values,
            slopes,
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    pub fn check_range(&self, t: f64) -> Result<()> {
        let (start, end) = (self.start(), self.end());
        let slack = 1e-12 * (end - start).abs().max(1.0);
        if t < start - slack || t > end + slack {
            Err(Error::InterpolantOutOfRange { t, start, end })
        } else {
            Ok(())
        }
    }

    /// Evaluates at `t`, clamping to the sampled range.
    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        let n = self.times.len();
        if n == 1 || t <= self.times[0] {
            out.copy_from_slice(&self.values[..self.dim]);
            return;
        }
        if t >= self.times[n - 1] {
            out.copy_from_slice(&self.values[(n - 1) * self.dim..]);
            return;
        }
        let k = self.times.partition_point(|&s| s <= t) - 1;
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        let d = self.dim;
        for i in 0..d {
            out[i] = h00 * self.values[k * d + i]
                + h10 * h * self.slopes[k * d + i]
                + h01 * self.values[(k + 1) * d + i]
                + h11 * h * self.slopes[(k + 1) * d + i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oscillator(_t: f64, y: &[f64], dy: &mut [f64]) {
        dy[0] = y[1];
        dy[1] = -y[0];
    }

    #[test]
    fn harmonic_oscillator_closed_form() {
        let times: Vec<f64> = (1..=1000).map(|i| i as f64 * 0.01).collect();
        let out = solve(oscillator, 0.0, &[1.0, 0.0], &times, Solver::dopri5(1e-10, 1e-12)).unwrap();
        for (i, t) in times.iter().enumerate() {
            assert!((out[2 * i] - t.cos()).abs() < 1e-8, "t = {t}");
            assert!((out[2 * i + 1] + t.sin()).abs() < 1e-8);
        }
    }

    #[test]
    fn dense_output_off_grid() {
        // sparse, irregular sample times force interpolation inside long steps
        let times = [0.123, 0.5, 1.777, 2.0, 7.3];
        let out = solve(oscillator, 0.0, &[1.0, 0.0], &times, Solver::dopri5(1e-9, 1e-12)).unwrap();
        for (i, t) in times.iter().enumerate() {
            assert!((out[2 * i] - t.cos()).abs() < 1e-7);
        }
    }

    fn forced(t: f64, y: &[f64], dy: &mut [f64]) {
        dy[0] = -y[0] + t.sin();
    }

    fn forced_exact(t: f64) -> f64 {
        // y(0) = 1
        1.5 * (-t).exp() + 0.5 * (t.sin() - t.cos())
    }

    #[test]
    fn fixed_step_fifth_order() {
        let t_end = 2.0;
        let err = |h: f64| {
            let y = solve(forced, 0.0, &[1.0], &[t_end], Solver::Dopri5Fixed { h }).unwrap();
            (y[0] - forced_exact(t_end)).abs()
        };
        let ratio = err(0.2) / err(0.1);
        assert!((16.0..=64.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn euler_first_order() {
        let err = |h: f64| {
            let y = solve(forced, 0.0, &[1.0], &[1.0], Solver::Euler { h }).unwrap();
            (y[0] - forced_exact(1.0)).abs()
        };
        let ratio = err(0.01) / err(0.005);
        assert!((1.8..=2.2).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn blowup_reported() {
        let r = solve(|_, y: &[f64], dy: &mut [f64]| dy[0] = y[0] * y[0], 0.0, &[1.0], &[2.0], Solver::dopri5(1e-8, 1e-10));
        assert!(matches!(r, Err(Error::SolverDiverged { .. })));
    }

    #[test]
    fn eval_at_start_returns_initial_state() {
        let out = solve(oscillator, 0.0, &[0.3, 0.4], &[0.0, 0.0], Solver::dopri5(1e-8, 1e-10)).unwrap();
        assert_eq!(out, vec![0.3, 0.4, 0.3, 0.4]);
    }

    #[test]
    fn hermite_reproduces_cubic_samples_and_clamps() {
        let times: Vec<f64> = (0..6).map(|i| i as f64 * 0.5).collect();
        let values: Vec<f64> = times.iter().map(|t| 2.0 * t + 1.0).collect();
        let h = CubicHermite::new(times, values, 1).unwrap();
        let mut out = [0.0];
        h.eval_into(1.3, &mut out);
        assert!((out[0] - 3.6).abs() < 1e-12, "linear data is reproduced exactly");
        h.eval_into(10.0, &mut out);
        assert_eq!(out[0], 6.0);
        assert!(h.check_range(2.6).is_err());
        assert!(h.check_range(2.5).is_ok());
    }

    #[test]
    fn hermite_converges_on_smooth_signal() {
        let err = |n: usize| {
            let times: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64 * 3.0).collect();
            let values: Vec<f64> = times.iter().map(|t| t.sin()).collect();
            let h = CubicHermite::new(times, values, 1).unwrap();
            let mut out = [0.0];
            let mut worst = 0.0_f64;
            for i in 0..300 {
                let t = 0.5 + i as f64 * 2.0 / 300.0;
                h.eval_into(t, &mut out);
                worst = worst.max((out[0] - t.sin()).abs());
            }
            worst
        };
        assert!(err(100) < err(50) / 4.0);
    }
}
