//! Timing runs. Each measurement is preceded by one discarded warmup run and
//! reported as the median of `--repeats` runs. Without `RESCOMP_THREADS` the
//! worker pool is pinned to one thread.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use rescomp::data::{integrate_ode, OdeSystem};
use rescomp::forecast::{EsnForecaster, EsnParams};
use rescomp::train::{train_forecaster, RidgeConfig};

use crate::{output, svg, CliError};

#[derive(Debug, clap::Args)]
pub struct Args {
    #[arg(long, value_delimiter = ',', default_value = "250,500,1000,2000")]
    pub res_dims: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1000,10000")]
    pub train_lens: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    /// Forecast steps per timed run.
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    /// Reservoir size for the training-time sweep.
    #[arg(long, default_value_t = 2000)]
    pub train_res_dim: usize,
    /// Output directory for CSV and SVG files.
    #[arg(long)]
    pub out: PathBuf,
}

const SPINUP: usize = 200;
const DT: f64 = 0.01;
const TIMER_FLOOR: Duration = Duration::from_millis(1);

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn time_runs<F: FnMut() -> Result<(), CliError>>(repeats: usize, label: &str, mut f: F) -> Result<Vec<f64>, CliError> {
    f()?;
    let mut out = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        f()?;
        let el = start.elapsed();
        if el < TIMER_FLOOR {
            eprintln!("warning: {label} run took {el:?}; timer resolution may dominate");
        }
        out.push(el.as_secs_f64());
    }
    Ok(out)
}

fn params(res_dim: usize) -> EsnParams {
    EsnParams {
        res_dim,
        ..EsnParams::default()
    }
}

pub fn run(args: &Args) -> Result<(), CliError> {
    if args.repeats == 0 || args.steps == 0 {
        return Err(CliError::Validation("--repeats and --steps must be positive".into()));
    }
    if args.res_dims.iter().chain(&args.train_lens).any(|v| *v == 0) || args.train_res_dim == 0 {
        return Err(CliError::Validation("reservoir sizes and training lengths must be positive".into()));
    }
    if let Some(short) = args.train_lens.iter().find(|l| **l < SPINUP + 2) {
        return Err(CliError::Validation(format!("--train-lens: {short} is shorter than spinup {SPINUP} + 2")));
    }
    // no-op when RESCOMP_THREADS already sized the pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(1).build_global();
    let threads = rayon::current_num_threads();
    output::create_dir(&args.out)?;

    let lorenz = OdeSystem::lorenz63();
    let short = integrate_ode(&lorenz, 20.0, DT, None)?;
    let mut fc_rows = Vec::new();
    for &n in &args.res_dims {
        let model = EsnForecaster::random(3, &params(n))?;
        let (model, states) = train_forecaster(&model, &short, RidgeConfig::default(), None)?;
        let r = states.last().expect("training states are non-empty");
        let times = time_runs(args.repeats, "forecast", || model.forecast(args.steps, &r).map(|_| ()).map_err(Into::into))?;
        let per_step = median(times.clone()) / args.steps as f64;
        let min_step = times.iter().copied().fold(f64::INFINITY, f64::min) / args.steps as f64;
        println!("res_dim {n:>6}: {:.3} us per forecast step", per_step * 1e6);
        fc_rows.push(vec![n as f64, per_step, min_step, args.repeats as f64, threads as f64]);
    }

    let longest = args.train_lens.iter().copied().max().unwrap_or(0);
    let long = if longest > 0 {
        Some(integrate_ode(&lorenz, longest as f64 * DT, DT, None)?)
    } else {
        None
    };
    let mut tr_rows = Vec::new();
    for &len in &args.train_lens {
        let data = long.as_ref().expect("present when train_lens is non-empty").slice(0, len)?;
        let model = EsnForecaster::random(3, &params(args.train_res_dim))?;
        let times = time_runs(args.repeats, "training", || {
            train_forecaster(&model, &data, RidgeConfig::default(), None).map(|_| ()).map_err(Into::into)
        })?;
        let med = median(times);
        println!("train_len {len:>6}: {med:.3} s at res_dim {}", args.train_res_dim);
        tr_rows.push(vec![len as f64, args.train_res_dim as f64, med, args.repeats as f64, threads as f64]);
    }

    output::write_table(
        &args.out.join("bench_forecast.csv"),
        "res_dim,median_step_seconds,min_step_seconds,repeats,threads",
        &fc_rows,
    )?;
    output::write_table(
        &args.out.join("bench_train.csv"),
        "train_len,res_dim,median_train_seconds,repeats,threads",
        &tr_rows,
    )?;
    let fc_pts: Vec<(f64, f64)> = fc_rows.iter().map(|r| (r[0], r[1])).collect();
    output::write_text(
        &args.out.join("bench_forecast.svg"),
        &svg::log_log_chart("Time per forecast step", "reservoir dimension", "seconds", &fc_pts),
    )?;
    let tr_pts: Vec<(f64, f64)> = tr_rows.iter().map(|r| (r[0], r[2])).collect();
    output::write_text(
        &args.out.join("bench_train.svg"),
        &svg::log_log_chart(
            &format!("Training time, reservoir dimension {}", args.train_res_dim),
            "training samples",
            "seconds",
            &tr_pts,
        ),
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::median;

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 3.0, 2.0]), 2.5);
    }
}
