use std::fs::File;
use std::io::BufReader;
use std::path::Path;
use std::time::Instant;

use rescomp::checkpoint::{self, Checkpoint};
use rescomp::classify::{classify_batch, predicted_class, train_classifier, ClassifierModel, SinusoidTask, StateRepr};
use rescomp::data::{largest_lyapunov_reference, noisy_sine_field, OdeSystem};
use rescomp::forecast::{normalized_errors, nrmse, valid_time, ContinuousForecaster, ContinuousParams, EsnForecaster, EsnParams, Feedback};
use rescomp::ode::Solver;
use rescomp::train::{add_noise, train_continuous_forecaster, train_forecaster, RidgeConfig};
use rescomp::{seeded_rng, RngSpec, TimeSeries};
use serde::Serialize;

use crate::config::{self, DataConfig, ExperimentConfig, Head, ModelConfig};
use crate::{generate, output, CliError};

impl ModelConfig {
    pub fn esn_params(&self) -> EsnParams {
        EsnParams {
            res_dim: self.res_dim,
            chunks: self.chunks,
            locality: self.locality,
            leak_rate: self.leak_rate,
            embedding_scaling: self.embedding_scaling,
            bias: self.bias,
            spectral_radius: self.spectral_radius,
            seed: self.seed,
        }
    }

    pub fn continuous_params(&self) -> ContinuousParams {
        let solver = match self.solver.as_str() {
            "euler" => Solver::Euler { h: self.step.unwrap_or(0.01) },
            _ => Solver::dopri5(self.rtol, self.atol),
        };
        let feedback = match self.feedback.as_str() {
            "hold" => Feedback::PiecewiseConstant,
            "ramp" => Feedback::LinearRamp,
            _ => Feedback::CubicHermite,
        };
        ContinuousParams {
            res_dim: self.res_dim,
            time_const: self.time_const,
            embedding_scaling: self.embedding_scaling,
            bias: self.bias,
            spectral_radius: self.spectral_radius,
            solver,
            feedback,
            seed: self.seed,
        }
    }

    fn state_repr(&self) -> StateRepr {
        if self.state_repr == "mean" {
            StateRepr::Mean
        } else {
            StateRepr::Final
        }
    }
}

pub fn load_series(data: &DataConfig) -> Result<TimeSeries, CliError> {
    match data.system.as_str() {
        "csv" => {
            let path = data.path.as_ref().expect("validated");
            let file = File::open(path).map_err(|e| CliError::Validation(format!("data.path {}: {e}", path.display())))?;
            let series = TimeSeries::read_csv(BufReader::new(file))?;
            if series.dt().is_some() {
                Ok(series)
            } else {
                let t0 = series.t0();
                Ok(TimeSeries::new(series.values().to_vec(), series.dim(), Some(data.dt), t0)?)
            }
        }
        "ks" => {
            let domain = data.domain.map(|[a, b]| (a, b));
            let mut cfg = generate::ks_config(data.t_n, Some(data.dt), data.nx, domain, data.u0.clone());
            if let Some(init) = &data.ks_initial {
                if cfg.u0.is_some() {
                    return Err(CliError::Validation("data: give either u0 or ks_initial, not both".into()));
                }
                cfg.u0 = Some(noisy_sine_field(cfg.nx, cfg.domain, init.halfwaves, init.noise_seed));
            }
            Ok(rescomp::data::integrate_ks(&cfg)?)
        }
        name => {
            let sys = OdeSystem::from_name(name, data.n)?;
            Ok(rescomp::data::integrate_ode(&sys, data.t_n, data.dt, data.u0.as_deref())?)
        }
    }
}

fn lyapunov(cfg: &ExperimentConfig) -> Option<f64> {
    if let Some(l) = cfg.eval.lyapunov {
        return Some(l);
    }
    match cfg.data.system.as_str() {
        "ks" => {
            let [a, b] = cfg.data.domain.unwrap_or([0.0, 48.0]);
            ((b - a - 48.0).abs() < 1e-12).then(|| largest_lyapunov_reference("ks_L48").ok()).flatten()
        }
        name => largest_lyapunov_reference(name).ok(),
    }
}

#[derive(Debug, Serialize)]
struct ForecastMetrics {
    system: String,
    head: Head,
    train_samples: usize,
    test_samples: usize,
    /// Valid time in model time units.
    valid_time: f64,
    #[serde(rename = "valid_time_LT")]
    valid_time_lt: Option<f64>,
    lyapunov_exponent: Option<f64>,
    threshold: f64,
    nrmse: f64,
    rmse_curve_path: String,
    forecast_path: String,
    checkpoint_path: String,
    train_seconds: f64,
    forecast_seconds: f64,
}

#[derive(Debug, Serialize)]
struct Prediction {
    label: usize,
    predicted: usize,
    probs: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct ClassifyMetrics {
    head: Head,
    accuracy: f64,
    test_sequences: usize,
    predictions_path: String,
    empty_classes: Vec<usize>,
}

pub fn run(config_path: &Path, out: &Path) -> Result<(), CliError> {
    let cfg: ExperimentConfig = config::load(config_path)?;
    cfg.validate()?;
    output::create_dir(out)?;
    match cfg.model.head {
        Head::Classifier => run_classifier(&cfg, out),
        _ => run_forecast(&cfg, out),
    }
}

fn run_forecast(cfg: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let series = load_series(&cfg.data)?;
    cfg.model.validate(Some(series.dim()))?;
    let split = (cfg.train.split * series.len() as f64) as usize;
    if split <= cfg.train.spinup + 1 || split >= series.len() {
        return Err(CliError::Validation(format!(
            "train.split: {} of {} samples leaves no room for spinup {} and a test segment",
            split,
            series.len(),
            cfg.train.spinup
        )));
    }
    let (train, test) = series.split_at(split)?;
    let train = if cfg.train.noise > 0.0 {
        add_noise(&train, cfg.train.noise, &mut seeded_rng(RngSpec::new(cfg.train.noise_seed)))?
    } else {
        train
    };
    let ridge = RidgeConfig::new(cfg.train.beta, cfg.train.spinup)?;
    let checkpoint_path = out.join("model.orcm");

    let start = Instant::now();
    let (pred, train_seconds) = match cfg.model.head {
        Head::Continuous => {
            let model = ContinuousForecaster::random(series.dim(), &cfg.model.continuous_params())?;
            let (model, states) = train_continuous_forecaster(&model, &train, ridge, None)?;
            let train_seconds = start.elapsed().as_secs_f64();
            let dt = test.dt().expect("generated series carry dt");
            let ts: Vec<f64> = (0..test.len()).map(|i| i as f64 * dt).collect();
            let r = states.last().expect("training states are non-empty");
            drop(states);
            let pred = model.forecast_continuous(&ts, &r)?;
            checkpoint::save(&Checkpoint::from(model), &checkpoint_path)?;
            (pred, train_seconds)
        }
        _ => {
            let model = EsnForecaster::random(series.dim(), &cfg.model.esn_params())?;
            let (model, states) = train_forecaster(&model, &train, ridge, None)?;
            let train_seconds = start.elapsed().as_secs_f64();
            let r = states.last().expect("training states are non-empty");
            drop(states);
            let pred = model.forecast(test.len(), &r)?;
            checkpoint::save(&Checkpoint::from(model), &checkpoint_path)?;
            (pred, train_seconds)
        }
    };
    let forecast_seconds = start.elapsed().as_secs_f64() - train_seconds;
    let pred = TimeSeries::new(pred.values().to_vec(), pred.dim(), test.dt(), test.t0())?;

    let lyap = lyapunov(cfg);
    let vt = valid_time(&pred, &test, cfg.eval.threshold, 1.0)?;
    let errors = normalized_errors(&pred, &test)?;
    let curve: Vec<Vec<f64>> = errors.iter().enumerate().map(|(i, e)| vec![test.time(i), *e]).collect();
    output::write_table(&out.join("rmse_curve.csv"), "t,normalized_error", &curve)?;
    output::write_series(&out.join("forecast.csv"), &pred)?;
    output::write_series(&out.join("truth.csv"), &test)?;

    let metrics = ForecastMetrics {
        system: cfg.data.system.clone(),
        head: cfg.model.head,
        train_samples: train.len(),
        test_samples: test.len(),
        valid_time: vt,
        valid_time_lt: lyap.map(|l| vt * l),
        lyapunov_exponent: lyap,
        threshold: cfg.eval.threshold,
        nrmse: nrmse(&pred, &test)?,
        rmse_curve_path: "rmse_curve.csv".into(),
        forecast_path: "forecast.csv".into(),
        checkpoint_path: "model.orcm".into(),
        train_seconds,
        forecast_seconds,
    };
    output::write_json(&out.join("metrics.json"), &metrics)?;
    match metrics.valid_time_lt {
        Some(lt) => println!("valid time {vt:.3} ({lt:.2} Lyapunov times), NRMSE {:.4}", metrics.nrmse),
        None => println!("valid time {vt:.3}, NRMSE {:.4}", metrics.nrmse),
    }
    Ok(())
}

fn run_classifier(cfg: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let task = SinusoidTask::default();
    let data_rng = seeded_rng(RngSpec::new(cfg.data.data_seed.unwrap_or(0)));
    let (train, train_labels) = task.generate(cfg.data.train_per_class.unwrap_or(20), &data_rng, 0)?;
    let (test, test_labels) = task.generate(cfg.data.test_per_class.unwrap_or(10), &data_rng, 1)?;
    cfg.model.validate(Some(task.channels))?;
    let model = ClassifierModel::random(task.channels, task.n_classes, &cfg.model.esn_params(), cfg.model.state_repr())?;
    let trained = train_classifier(&model, &train, &train_labels, cfg.train.spinup, cfg.train.beta)?;
    let probs = classify_batch(&trained.model, &test, cfg.train.spinup)?;
    let predictions: Vec<Prediction> = probs
        .into_iter()
        .zip(&test_labels)
        .map(|(p, l)| Prediction {
            label: *l,
            predicted: predicted_class(&p),
            probs: p,
        })
        .collect();
    let hits = predictions.iter().filter(|p| p.predicted == p.label).count();
    let accuracy = hits as f64 / predictions.len().max(1) as f64;
    output::write_json(&out.join("predictions.json"), &predictions)?;
    output::write_json(
        &out.join("metrics.json"),
        &ClassifyMetrics {
            head: Head::Classifier,
            accuracy,
            test_sequences: predictions.len(),
            predictions_path: "predictions.json".into(),
            empty_classes: trained.empty_classes,
        },
    )?;
    println!("accuracy {:.1}% on {} sequences", 100.0 * accuracy, predictions.len());
    Ok(())
}
