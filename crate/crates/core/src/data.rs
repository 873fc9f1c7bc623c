//! Benchmark trajectories: low-dimensional chaotic ODEs, Lorenz-96 and the
//! Kuramoto-Sivashinsky equation.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::ode::{solve, Solver};
use crate::rng::{seeded_rng, RngSpec};
use crate::series::TimeSeries;

/// Default relative tolerance for data generation.
pub const DATA_RTOL: f64 = 1e-10;
/// Default absolute tolerance for data generation.
pub const DATA_ATOL: f64 = 1e-12;

/// Autonomous ODE benchmark systems with their parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum OdeSystem {
    Lorenz63 { sigma: f64, rho: f64, beta: f64 },
    Rossler { a: f64, b: f64, c: f64 },
    /// `x' = -x + y + yz`, `y' = -x - y + a xz`, `z' = z - b xy`.
    Sakarya { a: f64, b: f64 },
    /// Normalized Colpitts oscillator with exponential transistor
    /// nonlinearity `n(x2) = exp(-x2) - 1`.
    Colpitts { g: f64, q: f64, k: f64 },
    /// Lorenz system with a fourth feedback variable.
    HyperLorenz { a: f64, b: f64, c: f64, d: f64 },
    HyperXu { a: f64, b: f64, c: f64, d: f64, e: f64 },
    /// State `[theta1, theta2, omega1, omega2]`, angles from the downward
    /// vertical, with linear viscous damping on each joint velocity.
    DoublePendulum { m1: f64, m2: f64, l1: f64, l2: f64, g: f64, damping: f64 },
    Lorenz96 { n: usize, forcing: f64 },
    /// `x'' = -omega^2 x`, as `[x, v]`.
    HarmonicOscillator { omega: f64 },
}

/// Names accepted by [`OdeSystem::from_name`].
pub const SYSTEM_NAMES: [&str; 9] = [
    "lorenz63",
    "rossler",
    "sakarya",
    "colpitts",
    "hyper_lorenz63",
    "hyper_xu",
    "double_pendulum",
    "lorenz96",
    "harmonic_oscillator",
];

impl OdeSystem {
    pub fn lorenz63() -> Self {
        OdeSystem::Lorenz63 {
            sigma: 10.0,
            rho: 28.0,
            beta: 8.0 / 3.0,
        }
    }

    pub fn rossler() -> Self {
        OdeSystem::Rossler { a: 0.2, b: 0.2, c: 5.7 }
    }

    pub fn sakarya() -> Self {
        OdeSystem::Sakarya { a: 0.4, b: 0.3 }
    }

    pub fn colpitts() -> Self {
        OdeSystem::Colpitts { g: 4.46, q: 1.5, k: 0.5 }
    }

    pub fn hyper_lorenz63() -> Self {
        OdeSystem::HyperLorenz {
            a: 10.0,
            b: 8.0 / 3.0,
            c: 28.0,
            d: 1.1,
        }
    }

    pub fn hyper_xu() -> Self {
        OdeSystem::HyperXu {
            a: 10.0,
            b: 40.0,
            c: 2.5,
            d: 2.0,
            e: 16.0,
        }
    }

    pub fn double_pendulum(damping: f64) -> Self {
        OdeSystem::DoublePendulum {
            m1: 1.0,
            m2: 1.0,
            l1: 1.0,
            l2: 1.0,
            g: 9.81,
            damping,
        }
    }

    pub fn lorenz96(n: usize) -> Self {
        OdeSystem::Lorenz96 { n, forcing: 8.0 }
    }

    /// System with default parameters. `n` sets the Lorenz-96 dimension.
    pub fn from_name(name: &str, n: Option<usize>) -> Result<Self> {
        Ok(match name {
            "lorenz63" => Self::lorenz63(),
            "rossler" => Self::rossler(),
            "sakarya" | "sakaraya" => Self::sakarya(),
            "colpitts" => Self::colpitts(),
            "hyper_lorenz63" => Self::hyper_lorenz63(),
            "hyper_xu" => Self::hyper_xu(),
            "double_pendulum" => Self::double_pendulum(0.0),
            "lorenz96" => Self::lorenz96(n.unwrap_or(40)),
            "harmonic_oscillator" => OdeSystem::HarmonicOscillator { omega: 1.0 },
            other => return Err(Error::UnknownSystem(other.to_string())),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            OdeSystem::Lorenz63 { .. } => "lorenz63",
            OdeSystem::Rossler { .. } => "rossler",
            OdeSystem::Sakarya { .. } => "sakarya",
            OdeSystem::Colpitts { .. } => "colpitts",
            OdeSystem::HyperLorenz { .. } => "hyper_lorenz63",
            OdeSystem::HyperXu { .. } => "hyper_xu",
            OdeSystem::DoublePendulum { .. } => "double_pendulum",
            OdeSystem::Lorenz96 { .. } => "lorenz96",
            OdeSystem::HarmonicOscillator { .. } => "harmonic_oscillator",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            OdeSystem::Lorenz63 { .. } | OdeSystem::Rossler { .. } | OdeSystem::Sakarya { .. } | OdeSystem::Colpitts { .. } => 3,
            OdeSystem::HyperLorenz { .. } | OdeSystem::HyperXu { .. } | OdeSystem::DoublePendulum { .. } => 4,
            OdeSystem::Lorenz96 { n, .. } => *n,
            OdeSystem::HarmonicOscillator { .. } => 2,
        }
    }

    pub fn default_initial_condition(&self) -> Vec<f64> {
        match self {
            OdeSystem::Lorenz63 { .. } => vec![-10.0, 1.0, 10.0],
            OdeSystem::Rossler { .. } => vec![-10.0, 2.0, 1.0],
            OdeSystem::Sakarya { .. } => vec![1.0, -1.0, 1.0],
            OdeSystem::Colpitts { .. } => vec![0.1, 0.1, 0.1],
            OdeSystem::HyperLorenz { .. } => vec![-10.0, 1.0, 10.0, 1.0],
            OdeSystem::HyperXu { .. } => vec![1.0, 1.0, 1.0, 1.0],
            OdeSystem::DoublePendulum { .. } => vec![PI / 2.0, PI / 2.0, 0.0, 0.0],
            OdeSystem::Lorenz96 { n, forcing } => {
                let mut u = vec![*forcing; *n];
                if let Some(first) = u.first_mut() {
                    *first += 0.01;
                }
                u
            }
            OdeSystem::HarmonicOscillator { .. } => vec![1.0, 0.0],
        }
    }

    /// Evaluates the vector field at `y`.
    pub fn rhs(&self, y: &[f64], dy: &mut [f64]) {
        match *self {
            OdeSystem::Lorenz63 { sigma, rho, beta } => {
                dy[0] = sigma * (y[1] - y[0]);
                dy[1] = y[0] * (rho - y[2]) - y[1];
                dy[2] = y[0] * y[1] - beta * y[2];
            }
            OdeSystem::Rossler { a, b, c } => {
                dy[0] = -y[1] - y[2];
                dy[1] = y[0] + a * y[1];
                dy[2] = b + y[2] * (y[0] - c);
            }
            OdeSystem::Sakarya { a, b } => {
                dy[0] = -y[0] + y[1] + y[1] * y[2];
                dy[1] = -y[0] - y[1] + a * y[0] * y[2];
                dy[2] = y[2] - b * y[0] * y[1];
            }
            OdeSystem::Colpitts { g, q, k } => {
                let n = (-y[1]).exp() - 1.0;
                dy[0] = g / (q * (1.0 - k)) * (-n + y[2]);
                dy[1] = g / (q * k) * y[2];
                dy[2] = -q * k * (1.0 - k) / g * (y[0] + y[1]) - y[2] / q;
            }
            OdeSystem::HyperLorenz { a, b, c, d } => {
                let (x, v, z, w) = (y[0], y[1], y[2], y[3]);
                dy[0] = a * (v - x) + w;
                dy[1] = -x * z + c * x - v;
                dy[2] = -b * z + x * v;
                dy[3] = d * w - x * z;
            }
            OdeSystem::HyperXu { a, b, c, d, e } => {
                let (x, v, z, w) = (y[0], y[1], y[2], y[3]);
                dy[0] = a * (v - x) + w;
                dy[1] = b * x + e * x * z;
                dy[2] = -c * z - x * v;
                dy[3] = x * z - d * v;
            }
            OdeSystem::DoublePendulum { m1, m2, l1, l2, g, damping } => {
                let (t1, t2, w1, w2) = (y[0], y[1], y[2], y[3]);
                let delta = t1 - t2;
                let den = 2.0 * m1 + m2 - m2 * (2.0 * delta).cos();
                dy[0] = w1;
                dy[1] = w2;
                dy[2] = (-g * (2.0 * m1 + m2) * t1.sin()
                    - m2 * g * (t1 - 2.0 * t2).sin()
                    - 2.0 * delta.sin() * m2 * (w2 * w2 * l2 + w1 * w1 * l1 * delta.cos()))
                    / (l1 * den)
                    - damping * w1;
                dy[3] = (2.0 * delta.sin()
                    * (w1 * w1 * l1 * (m1 + m2) + g * (m1 + m2) * t1.cos() + w2 * w2 * l2 * m2 * delta.cos()))
                    / (l2 * den)
                    - damping * w2;
            }
            OdeSystem::Lorenz96 { n, forcing } => {
                for i in 0..n {
                    let ip1 = y[(i + 1) % n];
                    let im1 = y[(i + n - 1) % n];
                    let im2 = y[(i + n - 2) % n];
                    dy[i] = (ip1 - im2) * im1 - y[i] + forcing;
                }
            }
            OdeSystem::HarmonicOscillator { omega } => {
                dy[0] = y[1];
                dy[1] = -omega * omega * y[0];
            }
        }
    }

    /// Total mechanical energy of the double pendulum, `None` for other
    /// systems. Zero potential is at the pivot height.
    pub fn energy(&self, y: &[f64]) -> Option<f64> {
        match *self {
            OdeSystem::DoublePendulum { m1, m2, l1, l2, g, .. } => {
                let (t1, t2, w1, w2) = (y[0], y[1], y[2], y[3]);
                let kinetic = 0.5 * m1 * (l1 * w1).powi(2)
                    + 0.5 * m2 * ((l1 * w1).powi(2) + (l2 * w2).powi(2) + 2.0 * l1 * l2 * w1 * w2 * (t1 - t2).cos());
                let potential = -(m1 + m2) * g * l1 * t1.cos() - m2 * g * l2 * t2.cos();
                Some(kinetic + potential)
            }
            _ => None,
        }
    }

    /// Natural energy unit of the double pendulum, the potential energy
    /// span `(m1 + m2) g l1 + m2 g l2`; `None` for other systems.
    pub fn energy_scale(&self) -> Option<f64> {
        match *self {
            OdeSystem::DoublePendulum { m1, m2, l1, l2, g, .. } => Some((m1 + m2) * g * l1 + m2 * g * l2),
            _ => None,
        }
    }
}

/// Number of samples `floor(t_n / dt)`, guarding against round-off just
/// below an integer.
pub fn sample_count(t_n: f64, dt: f64) -> usize {
    let ratio = t_n / dt;
    let nearest = ratio.round();
    if (ratio - nearest).abs() < 1e-9 * nearest.max(1.0) {
        nearest as usize
    } else {
        ratio.floor() as usize
    }
}

fn check_grid(t_n: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "dt",
            reason: format!("must be positive, got {dt}"),
        });
    }
    if !(t_n > 0.0 && t_n.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "tN",
            reason: format!("must be positive, got {t_n}"),
        });
    }
    let count = sample_count(t_n, dt);
    if count == 0 {
        return Err(Error::InvalidParameter {
            name: "tN",
            reason: format!("tN = {t_n} is shorter than one step of {dt}"),
        });
    }
    Ok(count)
}

/// Integrates `sys` from `u0` (default initial condition if `None`) and
/// samples at `t = dt, 2 dt, ...`, `floor(tN / dt)` rows.
pub fn integrate_ode(sys: &OdeSystem, t_n: f64, dt: f64, u0: Option<&[f64]>) -> Result<TimeSeries> {
    integrate_ode_with(sys, t_n, dt, u0, Solver::dopri5(DATA_RTOL, DATA_ATOL))
}

pub fn integrate_ode_with(sys: &OdeSystem, t_n: f64, dt: f64, u0: Option<&[f64]>, solver: Solver) -> Result<TimeSeries> {
    let count = check_grid(t_n, dt)?;
    let y0 = match u0 {
        Some(u) => {
            crate::error::check_dim("initial condition", sys.dim(), u.len())?;
            u.to_vec()
        }
        None => sys.default_initial_condition(),
    };
    let times: Vec<f64> = (1..=count).map(|k| k as f64 * dt).collect();
    let values = solve(|_, y, dy| sys.rhs(y, dy), 0.0, &y0, &times, solver)?;
    TimeSeries::new(values, sys.dim(), Some(dt), dt)
}

/// Periodic 1-D Kuramoto-Sivashinsky setup, `u_t = -u u_x - u_xx - u_xxxx`.
#[derive(Debug, Clone, PartialEq)]
pub struct KsConfig {
    pub nx: usize,
    pub domain: (f64, f64),
    pub dt: f64,
    pub t_n: f64,
    /// Initial field on the `nx` grid points; the default is
    /// `cos(2 pi x / L) (1 + sin(2 pi x / L))`.
    pub u0: Option<Vec<f64>>,
}

impl Default for KsConfig {
    fn default() -> Self {
        Self {
            nx: 128,
            domain: (0.0, 48.0),
            dt: 0.25,
            t_n: 1000.0,
            u0: None,
        }
    }
}

impl KsConfig {
    pub fn length(&self) -> f64 {
        self.domain.1 - self.domain.0
    }

    /// Periodic grid `a + L j / nx`.
    pub fn grid(&self) -> Vec<f64> {
        let l = self.length();
        (0..self.nx).map(|j| self.domain.0 + l * j as f64 / self.nx as f64).collect()
    }

    pub fn default_initial_condition(&self) -> Vec<f64> {
        let l = self.length();
        self.grid()
            .iter()
            .map(|x| {
                let phase = 2.0 * PI * (x - self.domain.0) / l;
                phase.cos() * (1.0 + phase.sin())
            })
            .collect()
    }
}

/// `sin(halfwaves pi (x - a) / (b - a)) + N(0, 1)` on `nx` points of
/// `linspace(a, b)` with both ends included; noise drawn from `seed`.
pub fn noisy_sine_field(nx: usize, domain: (f64, f64), halfwaves: f64, seed: u64) -> Vec<f64> {
    let mut rng = seeded_rng(RngSpec::new(seed));
    let (a, b) = domain;
    let step = if nx > 1 { (b - a) / (nx - 1) as f64 } else { 0.0 };
    (0..nx)
        .map(|j| {
            let x = a + step * j as f64;
            (halfwaves * PI * (x - a) / (b - a)).sin() + rng.normal()
        })
        .collect()
}

/// Exponential time-differencing RK4 coefficients for a diagonal linear
/// operator, evaluated by contour averaging.
struct Etdrk4 {
    e: Vec<f64>,
    e2: Vec<f64>,
    q: Vec<f64>,
    f1: Vec<f64>,
    f2: Vec<f64>,
    f3: Vec<f64>,
}

const CONTOUR_POINTS: usize = 16;

impl Etdrk4 {
    fn new(linear: &[f64], h: f64) -> Self {
        let roots: Vec<Complex64> = (1..=CONTOUR_POINTS)
            .map(|j| Complex64::from_polar(1.0, PI * (j as f64 - 0.5) / CONTOUR_POINTS as f64))
            .collect();
        let m = CONTOUR_POINTS as f64;
        let mut s = Self {
            e: Vec::with_capacity(linear.len()),
            e2: Vec::with_capacity(linear.len()),
            q: Vec::with_capacity(linear.len()),
            f1: Vec::with_capacity(linear.len()),
            f2: Vec::with_capacity(linear.len()),
            f3: Vec::with_capacity(linear.len()),
        };
        for &l in linear {
            let hl = h * l;
            s.e.push(hl.exp());
            s.e2.push((hl / 2.0).exp());
            let (mut q, mut f1, mut f2, mut f3) = (0.0, 0.0, 0.0, 0.0);
            for r in &roots {
                let z = hl + r;
                let ez = z.exp();
                let z3 = z * z * z;
                q += (((z / 2.0).exp() - 1.0) / z).re;
                f1 += ((-4.0 - z + ez * (4.0 - 3.0 * z + z * z)) / z3).re;
                f2 += ((2.0 + z + ez * (z - 2.0)) / z3).re;
                f3 += ((-4.0 - 3.0 * z - z * z + ez * (4.0 - z)) / z3).re;
            }
            s.q.push(h * q / m);
            s.f1.push(h * f1 / m);
            s.f2.push(h * f2 / m);
            s.f3.push(h * f3 / m);
        }
        s
    }
}

/// Pseudo-spectral ETDRK4 integration of Kuramoto-Sivashinsky with 2/3-rule
/// dealiasing. Returns `floor(tN / dt)` snapshots at `t = dt, 2 dt, ...`.
pub fn integrate_ks(cfg: &KsConfig) -> Result<TimeSeries> {
    let n = cfg.nx;
    if n < 4 {
        return Err(Error::InvalidParameter {
            name: "Nx",
            reason: format!("need at least 4 grid points, got {n}"),
        });
    }
    if !(cfg.domain.1 > cfg.domain.0) {
        return Err(Error::InvalidParameter {
            name: "domain",
            reason: "upper bound must exceed lower bound".into(),
        });
    }
    let count = check_grid(cfg.t_n, cfg.dt)?;
    let u0 = match &cfg.u0 {
        Some(u) => {
            crate::error::check_dim("KS initial condition", n, u.len())?;
            u.clone()
        }
        None => cfg.default_initial_condition(),
    };
    let l = cfg.length();
    // wavenumbers with the Nyquist mode's derivative zeroed
    let wave: Vec<f64> = (0..n)
        .map(|j| {
            let m = if j < n / 2 {
                j as f64
            } else if j == n / 2 {
                0.0
            } else {
                j as f64 - n as f64
            };
            2.0 * PI * m / l
        })
        .collect();
    let linear: Vec<f64> = wave.iter().map(|k| k * k - k.powi(4)).collect();
    let coef = Etdrk4::new(&linear, cfg.dt);
    let cutoff = n / 3;
    let keep: Vec<bool> = (0..n)
        .map(|j| {
            let m = if j <= n / 2 { j } else { n - j };
            m <= cutoff
        })
        .collect();
    let g: Vec<Complex64> = wave.iter().map(|k| Complex64::new(0.0, -0.5 * k)).collect();

    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut scratch = vec![Complex64::default(); fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len())];
    let inv_n = 1.0 / n as f64;

    let nonlinear = |v: &[Complex64], out: &mut [Complex64], buf: &mut Vec<Complex64>, scratch: &mut [Complex64]| {
        buf.clear();
        buf.extend_from_slice(v);
        inv.process_with_scratch(buf, scratch);
        for z in buf.iter_mut() {
            let u = z.re * inv_n;
            *z = Complex64::new(u * u, 0.0);
        }
        fwd.process_with_scratch(buf, scratch);
        for j in 0..n {
            out[j] = if keep[j] { g[j] * buf[j] } else { Complex64::default() };
        }
    };

    let mut v: Vec<Complex64> = u0.iter().map(|x| Complex64::new(*x, 0.0)).collect();
    fwd.process(&mut v);
    let zero = vec![Complex64::default(); n];
    let (mut nv, mut na, mut nb, mut nc) = (zero.clone(), zero.clone(), zero.clone(), zero.clone());
    let (mut a, mut b, mut c) = (zero.clone(), zero.clone(), zero);
    let mut buf = Vec::with_capacity(n);
    let mut out = Vec::with_capacity(count * n);
    for step in 0..count {
        nonlinear(&v, &mut nv, &mut buf, &mut scratch);
        for j in 0..n {
            a[j] = coef.e2[j] * v[j] + coef.q[j] * nv[j];
        }
        nonlinear(&a, &mut na, &mut buf, &mut scratch);
        for j in 0..n {
            b[j] = coef.e2[j] * v[j] + coef.q[j] * na[j];
        }
        nonlinear(&b, &mut nb, &mut buf, &mut scratch);
        for j in 0..n {
            c[j] = coef.e2[j] * a[j] + coef.q[j] * (2.0 * nb[j] - nv[j]);
        }
        nonlinear(&c, &mut nc, &mut buf, &mut scratch);
        for j in 0..n {
            v[j] = coef.e[j] * v[j] + nv[j] * coef.f1[j] + 2.0 * (na[j] + nb[j]) * coef.f2[j] + nc[j] * coef.f3[j];
        }
        buf.clear();
        buf.extend_from_slice(&v);
        inv.process_with_scratch(&mut buf, &mut scratch);
        for z in buf.iter_mut() {
            let u = z.re * inv_n;
            if !u.is_finite() {
                return Err(Error::SolverDiverged {
                    t: (step + 1) as f64 * cfg.dt,
                });
            }
            out.push(u);
            *z = Complex64::new(u, 0.0);
        }
        // re-project onto a real field
        fwd.process_with_scratch(&mut buf, &mut scratch);
        v.copy_from_slice(&buf);
    }
    TimeSeries::new(out, n, Some(cfg.dt), cfg.dt)
}

/// Reference largest Lyapunov exponents used to express times in Lyapunov
/// units.
pub fn largest_lyapunov_reference(name: &str) -> Result<f64> {
    match name {
        "lorenz63" => Ok(0.9),
        "ks_L48" => Ok(0.081),
        other => Err(Error::UnknownSystem(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generator_shapes() {
        let u = integrate_ode(&OdeSystem::lorenz63(), 100.0, 0.01, Some(&[-10.0, 1.0, 10.0])).unwrap();
        assert_eq!((u.len(), u.dim()), (10000, 3));
        let r = integrate_ode(&OdeSystem::rossler(), 200.0, 0.01, Some(&[-10.0, 2.0, 1.0])).unwrap();
        assert_eq!((r.len(), r.dim()), (20000, 3));
        assert_eq!(sample_count(20.0, 0.01), 2000);
        assert_eq!(sample_count(0.3, 0.1), 3);
    }

    #[test]
    fn harmonic_oscillator_closed_form() {
        let sys = OdeSystem::HarmonicOscillator { omega: 1.0 };
        let u = integrate_ode(&sys, 20.0, 0.1, None).unwrap();
        for (k, row) in u.rows().enumerate() {
            let t = (k + 1) as f64 * 0.1;
            assert!((row[0] - t.cos()).abs() < 1e-8);
            assert!((row[1] + t.sin()).abs() < 1e-8);
        }
    }

    #[test]
    fn lorenz96_fixed_point() {
        let sys = OdeSystem::Lorenz96 { n: 12, forcing: 8.0 };
        let mut dy = vec![1.0; 12];
        sys.rhs(&[8.0; 12], &mut dy);
        assert!(dy.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn undamped_pendulum_conserves_energy() {
        let sys = OdeSystem::double_pendulum(0.0);
        let y0 = sys.default_initial_condition();
        let e0 = sys.energy(&y0).unwrap();
        let u = integrate_ode(&sys, 40.0, 0.05, None).unwrap();
        let drift = u.rows().map(|r| (sys.energy(r).unwrap() - e0).abs()).fold(0.0, f64::max);
        let scale = e0.abs().max(sys.energy_scale().unwrap());
        assert!(drift / scale < 1e-5, "drift {drift}");
    }

    #[test]
    fn damped_pendulum_loses_energy() {
        let sys = OdeSystem::double_pendulum(0.2);
        let u = integrate_ode(&sys, 20.0, 0.1, None).unwrap();
        let e0 = sys.energy(&sys.default_initial_condition()).unwrap();
        assert!(sys.energy(u.row(u.len() - 1)).unwrap() < e0);
    }

    #[test]
    fn all_systems_stay_bounded() {
        for name in SYSTEM_NAMES {
            let sys = OdeSystem::from_name(name, Some(10)).unwrap();
            let u = integrate_ode_with(&sys, 200.0, 0.05, None, Solver::dopri5(1e-8, 1e-10)).unwrap();
            let max = u.values().iter().fold(0.0f64, |a, b| a.max(b.abs()));
            assert!(max < 1e3, "{name} reached {max}");
            assert_eq!(sys.name(), if name == "sakaraya" { "sakarya" } else { name });
        }
    }

    #[test]
    fn tolerance_refinement_converges() {
        for name in SYSTEM_NAMES {
            let sys = OdeSystem::from_name(name, Some(10)).unwrap();
            let at = |rtol: f64| {
                integrate_ode_with(&sys, 1.0, 1.0, None, Solver::dopri5(rtol, rtol * 1e-2))
                    .unwrap()
                    .row(0)
                    .to_vec()
            };
            let reference = at(1e-13);
            let diff = |a: &[f64]| a.iter().zip(&reference).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            let coarse = diff(&at(1e-6));
            let fine = diff(&at(1e-9));
            assert!(fine <= coarse, "{name}: {fine} > {coarse}");
        }
    }

    #[test]
    fn unknown_names() {
        assert!(matches!(OdeSystem::from_name("duffing", None), Err(Error::UnknownSystem(_))));
        assert_eq!(largest_lyapunov_reference("lorenz63").unwrap(), 0.9);
        assert_eq!(largest_lyapunov_reference("ks_L48").unwrap(), 0.081);
        assert!(matches!(largest_lyapunov_reference("rossler"), Err(Error::UnknownSystem(_))));
    }

    #[test]
    fn ks_zero_is_fixed_point() {
        let cfg = KsConfig {
            nx: 32,
            t_n: 10.0,
            u0: Some(vec![0.0; 32]),
            ..KsConfig::default()
        };
        let u = integrate_ks(&cfg).unwrap();
        assert_eq!(u.len(), 40);
        assert!(u.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn ks_preserves_zero_mean_and_stays_bounded() {
        let cfg = KsConfig {
            t_n: 200.0,
            ..KsConfig::default()
        };
        let u = integrate_ks(&cfg).unwrap();
        for row in u.rows() {
            assert!(row.iter().sum::<f64>().abs() / (row.len() as f64) < 1e-8);
        }
        assert!(u.values().iter().all(|v| v.abs() < 10.0));
    }

    #[test]
    fn ks_rough_initial_field_stays_bounded() {
        let mut rng = crate::rng::seeded_rng(crate::rng::RngSpec::new(3));
        let mut u0 = vec![0.0; 128];
        rng.fill_normal(&mut u0);
        let cfg = KsConfig {
            t_n: 1500.0,
            u0: Some(u0),
            ..KsConfig::default()
        };
        let u = integrate_ks(&cfg).unwrap();
        assert!(u.values().iter().all(|v| v.abs() < 10.0));
    }

    #[test]
    fn ks_dt_refinement() {
        let base = KsConfig {
            t_n: 10.0,
            ..KsConfig::default()
        };
        let coarse = integrate_ks(&base).unwrap();
        let fine = integrate_ks(&KsConfig { dt: 0.125, ..base.clone() }).unwrap();
        let a = coarse.row(coarse.len() - 1);
        let b = fine.row(fine.len() - 1);
        let rms = (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt();
        assert!(rms < 1e-3, "rms {rms}");
    }
}
