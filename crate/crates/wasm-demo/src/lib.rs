//! Browser bindings: a Lorenz-63 forecast, a Kuramoto-Sivashinsky field and a
//! closed-loop control run, each returning flat `Float64Array`s for plotting.
//!
//! The plain functions (`lorenz`, `ks`, `control`) hold the logic and are
//! what the native tests exercise; the `#[wasm_bindgen]` wrappers only convert
//! errors.

use rescomp::control::{excite_plant, receding_horizon, train_controller, uncontrolled, ControllerModel, MpcConfig, TwoMassPlant};
use rescomp::data::{integrate_ks, integrate_ode, noisy_sine_field, KsConfig, OdeSystem};
use rescomp::forecast::{valid_time, EsnForecaster, EsnParams, DEFAULT_VALID_THRESHOLD};
use rescomp::train::{train_forecaster, RidgeConfig};
use rescomp::{seeded_rng, RngSpec};
use wasm_bindgen::prelude::*;

const LORENZ_DT: f64 = 0.01;
const LORENZ_LYAPUNOV: f64 = 0.9;
const SPINUP: usize = 200;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn check_range(name: &str, v: usize, lo: usize, hi: usize) -> Result<(), String> {
    if (lo..=hi).contains(&v) {
        Ok(())
    } else {
        Err(format!("{name} must lie in {lo}..={hi}, got {v}"))
    }
}

#[wasm_bindgen]
pub struct ForecastDemo {
    truth: Vec<f64>,
    prediction: Vec<f64>,
    dt: f64,
    valid_time_lt: f64,
}

#[wasm_bindgen]
impl ForecastDemo {
    /// Held-out trajectory, `steps x 3` row-major.
    #[wasm_bindgen(getter)]
    pub fn truth(&self) -> Vec<f64> {
        self.truth.clone()
    }

    /// Closed-loop forecast, same layout as `truth`.
    #[wasm_bindgen(getter)]
    pub fn prediction(&self) -> Vec<f64> {
        self.prediction.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn dt(&self) -> f64 {
        self.dt
    }

    #[wasm_bindgen(getter, js_name = validTimeLT)]
    pub fn valid_time_lt(&self) -> f64 {
        self.valid_time_lt
    }
}

pub fn lorenz(res_dim: usize, seed: u64, train_steps: usize, forecast_steps: usize) -> Result<ForecastDemo, String> {
    check_range("res_dim", res_dim, 10, 2000)?;
    check_range("train_steps", train_steps, SPINUP + 2, 20_000)?;
    check_range("forecast_steps", forecast_steps, 1, 5000)?;
    let total = train_steps + forecast_steps;
    let u = integrate_ode(&OdeSystem::lorenz63(), total as f64 * LORENZ_DT, LORENZ_DT, Some(&[-10.0, 1.0, 10.0])).map_err(err)?;
    let (train, test) = u.split_at(train_steps).map_err(err)?;
    let params = EsnParams {
        res_dim,
        seed,
        ..EsnParams::default()
    };
    let model = EsnForecaster::random(3, &params).map_err(err)?;
    let (model, states) = train_forecaster(&model, &train, RidgeConfig::default(), None).map_err(err)?;
    let r = states.last().ok_or("no training states")?;
    drop(states);
    let pred = model.forecast(test.len(), &r).map_err(err)?;
    let vt = valid_time(&pred, &test, DEFAULT_VALID_THRESHOLD, LORENZ_LYAPUNOV).map_err(err)?;
    Ok(ForecastDemo {
        truth: test.values().to_vec(),
        prediction: pred.values().to_vec(),
        dt: LORENZ_DT,
        valid_time_lt: vt,
    })
}

/// Trains a leaky ESN on Lorenz-63 and forecasts the following steps.
#[wasm_bindgen(js_name = lorenzForecast)]
pub fn lorenz_forecast(res_dim: usize, seed: u64, train_steps: usize, forecast_steps: usize) -> Result<ForecastDemo, JsError> {
    lorenz(res_dim, seed, train_steps, forecast_steps).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub struct Field {
    values: Vec<f64>,
    rows: usize,
    cols: usize,
    min: f64,
    max: f64,
}

#[wasm_bindgen]
impl Field {
    /// `rows x cols` row-major; one row per time sample.
    #[wasm_bindgen(getter)]
    pub fn values(&self) -> Vec<f64> {
        self.values.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[wasm_bindgen(getter)]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[wasm_bindgen(getter)]
    pub fn min(&self) -> f64 {
        self.min
    }

    #[wasm_bindgen(getter)]
    pub fn max(&self) -> f64 {
        self.max
    }
}

pub fn ks(nx: usize, t_n: f64, halfwaves: f64, seed: u64) -> Result<Field, String> {
    check_range("nx", nx, 16, 512)?;
    if !(t_n > 0.0 && t_n <= 5000.0) {
        return Err(format!("t_n must lie in (0, 5000], got {t_n}"));
    }
    let domain = (0.0, 48.0);
    let cfg = KsConfig {
        nx,
        domain,
        t_n,
        u0: Some(noisy_sine_field(nx, domain, halfwaves, seed)),
        ..KsConfig::default()
    };
    let u = integrate_ks(&cfg).map_err(err)?;
    let (min, max) = u.values().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    Ok(Field {
        values: u.values().to_vec(),
        rows: u.len(),
        cols: nx,
        min,
        max,
    })
}

/// Integrates Kuramoto-Sivashinsky on `[0, 48]` from a noisy sine.
#[wasm_bindgen(js_name = ksField)]
pub fn ks_field(nx: usize, t_n: f64, halfwaves: f64, seed: u64) -> Result<Field, JsError> {
    ks(nx, t_n, halfwaves, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub struct ControlDemo {
    controlled: Vec<f64>,
    free: Vec<f64>,
    controls: Vec<f64>,
    dt: f64,
}

#[wasm_bindgen]
impl ControlDemo {
    /// Controlled outputs, `steps x 2` row-major.
    #[wasm_bindgen(getter)]
    pub fn controlled(&self) -> Vec<f64> {
        self.controlled.clone()
    }

    /// Zero-input outputs from the same initial state.
    #[wasm_bindgen(getter)]
    pub fn free(&self) -> Vec<f64> {
        self.free.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn controls(&self) -> Vec<f64> {
        self.controls.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn dt(&self) -> f64 {
        self.dt
    }

    #[wasm_bindgen(getter, js_name = controlledFinalNorm)]
    pub fn controlled_final_norm(&self) -> f64 {
        final_norm(&self.controlled)
    }

    #[wasm_bindgen(getter, js_name = uncontrolledFinalNorm)]
    pub fn uncontrolled_final_norm(&self) -> f64 {
        final_norm(&self.free)
    }
}

fn final_norm(flat: &[f64]) -> f64 {
    match flat {
        [.., a, b] => a.hypot(*b),
        _ => 0.0,
    }
}

pub fn control(res_dim: usize, horizon: usize, steps: usize, alpha_effort: f64) -> Result<ControlDemo, String> {
    check_range("res_dim", res_dim, 10, 1000)?;
    check_range("horizon", horizon, 1, 50)?;
    check_range("steps", steps, 1, 500)?;
    if !(alpha_effort >= 0.0 && alpha_effort.is_finite()) {
        return Err(format!("alpha_effort must be non-negative, got {alpha_effort}"));
    }
    let plant = TwoMassPlant::default();
    let record = excite_plant(&plant, 100, 10, &mut seeded_rng(RngSpec::new(0))).map_err(err)?;
    let params = EsnParams {
        res_dim,
        ..EsnParams::default()
    };
    let model = ControllerModel::random(2, 1, &params).map_err(err)?;
    let (model, states) = train_controller(&model, &record.outputs, &record.controls, RidgeConfig::default()).map_err(err)?;
    let r0 = states.last().ok_or("no training states")?;
    drop(states);
    let cfg = MpcConfig {
        horizon,
        alpha_effort,
        ..MpcConfig::default()
    };
    let reference = vec![[0.0; 2]; steps + horizon];
    let run = receding_horizon(&model, &plant, record.final_state, &r0, &reference, steps, &cfg).map_err(err)?;
    let free = uncontrolled(&plant, record.final_state, steps);
    Ok(ControlDemo {
        controlled: run.outputs.iter().flatten().copied().collect(),
        free: free.iter().flatten().copied().collect(),
        controls: run.controls,
        dt: plant.dt,
    })
}

/// Trains a reservoir surrogate of the two-mass plant and drives it to rest.
#[wasm_bindgen(js_name = controlDemo)]
pub fn control_demo(res_dim: usize, horizon: usize, steps: usize, alpha_effort: f64) -> Result<ControlDemo, JsError> {
    control(res_dim, horizon, steps, alpha_effort).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lorenz_shapes() {
        let d = lorenz(200, 1, 3000, 400).unwrap();
        assert_eq!(d.truth.len(), 1200);
        assert_eq!(d.prediction.len(), 1200);
        assert!(d.valid_time_lt > 0.0);
    }

    #[test]
    fn ks_shapes() {
        let f = ks(64, 50.0, 3.0, 1).unwrap();
        assert_eq!((f.rows, f.cols), (200, 64));
        assert_eq!(f.values.len(), 200 * 64);
        assert!(f.min < f.max && f.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn out_of_range_inputs_are_rejected() {
        assert!(lorenz(5, 0, 3000, 10).is_err());
        assert!(ks(8, 10.0, 3.0, 0).is_err());
        assert!(control(100, 0, 10, 1e-3).is_err());
    }

    #[test]
    fn control_beats_free_response() {
        let d = control(300, 10, 150, 1e-3).unwrap();
        assert_eq!(d.controlled.len(), 300);
        assert_eq!(d.controls.len(), 150);
        assert!(d.controlled_final_norm() < d.uncontrolled_final_norm());
    }

    #[test]
    fn final_norm_of_short_slices() {
        assert_eq!(final_norm(&[]), 0.0);
        assert_eq!(final_norm(&[9.0, 3.0, 4.0]), 5.0);
    }
}
