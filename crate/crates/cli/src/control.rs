use std::path::Path;

use rescomp::control::{excite_plant, receding_horizon, train_controller, uncontrolled, BfgsStatus, ControllerModel, TwoMassPlant};
use rescomp::train::RidgeConfig;
use rescomp::{seeded_rng, RngSpec};
use serde::Serialize;

use crate::config::{self, ControlConfig};
use crate::{output, CliError};

#[derive(Debug, Serialize)]
pub struct Summary {
    pub controlled_final_norm: f64,
    pub uncontrolled_final_norm: f64,
    pub steps: usize,
    pub max_abs_control: f64,
    pub solves_not_converged: usize,
    pub train_samples: usize,
}

pub fn simulate(cfg: &ControlConfig) -> Result<(Summary, Vec<Vec<f64>>, Vec<Vec<f64>>), CliError> {
    let p = &cfg.plant;
    let plant = TwoMassPlant::new(p.masses, p.springs, p.dampers, p.dt)?;
    let e = &cfg.excitation;
    let record = excite_plant(&plant, e.segments, e.hold, &mut seeded_rng(RngSpec::new(e.seed)))?;
    let model = ControllerModel::random(2, 1, &cfg.model.esn_params())?;
    let ridge = RidgeConfig::new(cfg.train.beta, cfg.train.spinup)?;
    let (model, states) = train_controller(&model, &record.outputs, &record.controls, ridge)?;
    let r0 = states.last().expect("training states are non-empty");
    drop(states);

    let reference = vec![[0.0; 2]; cfg.run.reference_len];
    let mpc = cfg.mpc.to_config();
    let run = receding_horizon(&model, &plant, record.final_state, &r0, &reference, cfg.run.steps, &mpc)?;
    let free = uncontrolled(&plant, record.final_state, cfg.run.steps);

    let t = |i: usize| (i + 1) as f64 * p.dt;
    let controlled: Vec<Vec<f64>> = run
        .outputs
        .iter()
        .zip(&run.controls)
        .enumerate()
        .map(|(i, (y, u))| vec![t(i), y[0], y[1], *u])
        .collect();
    let free_rows: Vec<Vec<f64>> = free.iter().enumerate().map(|(i, y)| vec![t(i), y[0], y[1]]).collect();
    let free_norm = free.last().map_or(0.0, |y| y[0].hypot(y[1]));
    let summary = Summary {
        controlled_final_norm: run.final_output_norm(),
        uncontrolled_final_norm: free_norm,
        steps: cfg.run.steps,
        max_abs_control: run.controls.iter().fold(0.0, |m, u| m.max(u.abs())),
        solves_not_converged: run.statuses.iter().filter(|s| **s != BfgsStatus::Converged).count(),
        train_samples: record.outputs.len(),
    };
    Ok((summary, controlled, free_rows))
}

pub fn run(config_path: &Path, out: &Path) -> Result<(), CliError> {
    let cfg: ControlConfig = config::load(config_path)?;
    cfg.validate()?;
    let (summary, controlled, free) = simulate(&cfg)?;
    output::create_dir(out)?;
    output::write_table(&out.join("controlled.csv"), "t,y0,y1,u", &controlled)?;
    output::write_table(&out.join("uncontrolled.csv"), "t,y0,y1", &free)?;
    output::write_json(&out.join("summary.json"), &summary)?;
    println!(
        "final output norm: controlled {:.3e}, uncontrolled {:.3e}",
        summary.controlled_final_norm, summary.uncontrolled_final_norm
    );
    Ok(())
}
