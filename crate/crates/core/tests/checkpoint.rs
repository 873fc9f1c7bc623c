use rescomp::checkpoint::{load, save, Checkpoint};
use rescomp::data::{integrate_ode, OdeSystem};
use rescomp::forecast::{ContinuousForecaster, ContinuousParams, EsnForecaster, EsnParams};
use rescomp::ode::Solver;
use rescomp::train::{train_continuous_forecaster, train_forecaster, RidgeConfig};

#[test]
fn reloaded_model_forecasts_identically() {
    let u = integrate_ode(&OdeSystem::lorenz96(8), 30.0, 0.05, None).unwrap();
    let params = EsnParams {
        res_dim: 80,
        chunks: 4,
        locality: 1,
        seed: 11,
        ..EsnParams::default()
    };
    let model = EsnForecaster::random(8, &params).unwrap();
    let (model, states) = train_forecaster(&model, &u, RidgeConfig::new(1e-6, 50).unwrap(), None).unwrap();
    let r = states.last().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.orcm");
    save(&Checkpoint::from(model.clone()), &path).unwrap();
    let Checkpoint::Discrete(back) = load(&path).unwrap() else {
        panic!("wrong variant");
    };
    assert_eq!(back, model);
    assert_eq!(back.forecast(100, &r).unwrap(), model.forecast(100, &r).unwrap());
}

#[test]
fn reloaded_continuous_model_keeps_solver_and_feedback() {
    let u = integrate_ode(&OdeSystem::lorenz63(), 12.0, 0.02, None).unwrap();
    let params = ContinuousParams {
        res_dim: 60,
        solver: Solver::Euler { h: 0.01 },
        ..ContinuousParams::default()
    };
    let model = ContinuousForecaster::random(3, &params).unwrap();
    let (model, states) = train_continuous_forecaster(&model, &u, RidgeConfig::new(1e-6, 100).unwrap(), None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.orcm");
    save(&Checkpoint::from(model.clone()), &path).unwrap();
    let Checkpoint::Continuous(back) = load(&path).unwrap() else {
        panic!("wrong variant");
    };
    assert_eq!(back.feedback(), model.feedback());
    let ts: Vec<f64> = (0..50).map(|i| i as f64 * 0.02).collect();
    let r = states.last().unwrap();
    assert_eq!(back.forecast_continuous(&ts, &r).unwrap(), model.forecast_continuous(&ts, &r).unwrap());
}

#[test]
fn truncated_file_is_rejected() {
    let model = EsnForecaster::random(3, &EsnParams { res_dim: 20, ..EsnParams::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.orcm");
    save(&Checkpoint::from(model), &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(load(&path).is_err());
}
