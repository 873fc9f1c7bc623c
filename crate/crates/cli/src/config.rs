//! TOML experiment configs. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// An ODE system name, `ks`, `csv` or `sinusoids`.
    pub system: String,
    #[serde(default = "default_t_n")]
    pub t_n: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub u0: Option<Vec<f64>>,
    /// Lorenz-96 dimension.
    pub n: Option<usize>,
    pub nx: Option<usize>,
    pub domain: Option<[f64; 2]>,
    /// KS initial field `sin(k pi x / L) + N(0, 1)` on an end-inclusive grid.
    pub ks_initial: Option<KsInitial>,
    /// Source file for `system = "csv"`.
    pub path: Option<PathBuf>,
    /// Sequence counts for `system = "sinusoids"`.
    pub train_per_class: Option<usize>,
    pub test_per_class: Option<usize>,
    pub data_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KsInitial {
    pub halfwaves: f64,
    pub noise_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Forecaster,
    Continuous,
    Classifier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub head: Head,
    pub res_dim: usize,
    pub chunks: usize,
    pub locality: usize,
    pub leak_rate: f64,
    pub embedding_scaling: f64,
    pub bias: f64,
    pub spectral_radius: f64,
    pub seed: u64,
    pub time_const: f64,
    /// `dopri5` or `euler`.
    pub solver: String,
    pub step: Option<f64>,
    pub rtol: f64,
    pub atol: f64,
    /// `cubic`, `ramp` or `hold`.
    pub feedback: String,
    /// `final` or `mean`.
    pub state_repr: String,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            head: Head::Forecaster,
            res_dim: 1000,
            chunks: 1,
            locality: 0,
            leak_rate: 0.6,
            embedding_scaling: 0.08,
            bias: 1.6,
            spectral_radius: 0.8,
            seed: 0,
            time_const: 40.0,
            solver: "dopri5".into(),
            step: None,
            rtol: 1e-6,
            atol: 1e-8,
            feedback: "cubic".into(),
            state_repr: "final".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub beta: f64,
    pub spinup: usize,
    pub noise: f64,
    pub noise_seed: u64,
    pub split: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            beta: 1e-7,
            spinup: 200,
            noise: 0.0,
            noise_seed: 0,
            split: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub threshold: f64,
    pub lyapunov: Option<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            threshold: 0.4,
            lyapunov: None,
        }
    }
}

fn default_t_n() -> f64 {
    100.0
}

fn default_dt() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    #[serde(default)]
    pub plant: PlantConfig,
    #[serde(default)]
    pub excitation: ExcitationConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub mpc: MpcSection,
    #[serde(default)]
    pub run: RunSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantConfig {
    pub masses: [f64; 2],
    pub springs: [f64; 2],
    pub dampers: [f64; 2],
    pub dt: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            masses: [1.0, 1.0],
            springs: [2.0, 1.0],
            dampers: [0.4, 0.4],
            dt: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExcitationConfig {
    pub segments: usize,
    pub hold: usize,
    pub seed: u64,
}

impl Default for ExcitationConfig {
    fn default() -> Self {
        Self {
            segments: 100,
            hold: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcSection {
    pub horizon: usize,
    pub alpha_track: f64,
    pub alpha_effort: f64,
    pub alpha_smooth: f64,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub warm_start: bool,
}

impl Default for MpcSection {
    fn default() -> Self {
        let d = rescomp::control::MpcConfig::default();
        Self {
            horizon: d.horizon,
            alpha_track: d.alpha_track,
            alpha_effort: d.alpha_effort,
            alpha_smooth: d.alpha_smooth,
            max_iter: d.max_iter,
            grad_tol: d.grad_tol,
            warm_start: d.warm_start,
        }
    }
}

impl MpcSection {
    pub fn to_config(&self) -> rescomp::control::MpcConfig {
        rescomp::control::MpcConfig {
            horizon: self.horizon,
            alpha_track: self.alpha_track,
            alpha_effort: self.alpha_effort,
            alpha_smooth: self.alpha_smooth,
            max_iter: self.max_iter,
            grad_tol: self.grad_tol,
            warm_start: self.warm_start,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub steps: usize,
    pub reference_len: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            steps: 250,
            reference_len: 500,
        }
    }
}

fn invalid(field: &str, reason: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("{field}: {reason}"))
}

fn positive(field: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("must be positive, got {v}")))
    }
}

fn unit_interval(field: &str, v: f64) -> Result<(), CliError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(invalid(field, format!("must lie in [0, 1], got {v}")))
    }
}

impl ModelConfig {
    pub fn validate(&self, data_dim: Option<usize>) -> Result<(), CliError> {
        if self.res_dim == 0 {
            return Err(invalid("model.res_dim", "must be positive"));
        }
        if self.chunks == 0 {
            return Err(invalid("model.chunks", "must be positive"));
        }
        if let Some(d) = data_dim {
            if d % self.chunks != 0 {
                return Err(invalid(
                    "model.chunks",
                    format!("{} does not divide data dimension {d}", self.chunks),
                ));
            }
            if self.chunks > 1 && 2 * self.locality >= d {
                return Err(invalid(
                    "model.locality",
                    format!("{} too large for data dimension {d}", self.locality),
                ));
            }
        }
        unit_interval("model.leak_rate", self.leak_rate)?;
        positive("model.embedding_scaling", self.embedding_scaling)?;
        if !(self.bias >= 0.0) {
            return Err(invalid("model.bias", "must be non-negative"));
        }
        if !(self.spectral_radius >= 0.0) {
            return Err(invalid("model.spectral_radius", "must be non-negative"));
        }
        positive("model.time_const", self.time_const)?;
        match self.solver.as_str() {
            "dopri5" => {
                positive("model.rtol", self.rtol)?;
                positive("model.atol", self.atol)?;
            }
            "euler" => positive("model.step", self.step.unwrap_or(f64::NAN))?,
            other => return Err(invalid("model.solver", format!("unknown solver `{other}` (dopri5 or euler)"))),
        }
        if !matches!(self.feedback.as_str(), "cubic" | "ramp" | "hold") {
            return Err(invalid("model.feedback", format!("unknown mode `{}` (cubic, ramp or hold)", self.feedback)));
        }
        if !matches!(self.state_repr.as_str(), "final" | "mean") {
            return Err(invalid("model.state_repr", format!("unknown mode `{}` (final or mean)", self.state_repr)));
        }
        Ok(())
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(invalid("train.beta", "must be non-negative"));
        }
        if !(self.noise >= 0.0) {
            return Err(invalid("train.noise", "must be non-negative"));
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(invalid("train.split", format!("must lie in (0, 1), got {}", self.split)));
        }
        Ok(())
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let d = &self.data;
        match d.system.as_str() {
            "csv" => {
                if d.path.is_none() {
                    return Err(invalid("data.path", "required when data.system = \"csv\""));
                }
            }
            "sinusoids" => {
                if self.model.head != Head::Classifier {
                    return Err(invalid("model.head", "sinusoids data needs head = \"classifier\""));
                }
            }
            _ => {
                positive("data.t_n", d.t_n)?;
                positive("data.dt", d.dt)?;
            }
        }
        if self.model.head == Head::Classifier && d.system != "sinusoids" {
            return Err(invalid("data.system", "classifier head needs data.system = \"sinusoids\""));
        }
        if self.model.head == Head::Continuous && self.model.chunks != 1 {
            return Err(invalid("model.chunks", "continuous head uses a single reservoir"));
        }
        self.model.validate(None)?;
        self.train.validate()?;
        positive("eval.threshold", self.eval.threshold)?;
        if let Some(l) = self.eval.lyapunov {
            positive("eval.lyapunov", l)?;
        }
        Ok(())
    }
}

impl ControlConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        for (i, m) in self.plant.masses.iter().enumerate() {
            positive(&format!("plant.masses[{i}]"), *m)?;
        }
        positive("plant.dt", self.plant.dt)?;
        if self.excitation.segments == 0 || self.excitation.hold == 0 {
            return Err(invalid("excitation", "segments and hold must be positive"));
        }
        if self.mpc.horizon == 0 {
            return Err(invalid("mpc.horizon", "must be at least 1"));
        }
        if self.mpc.horizon > self.run.reference_len {
            return Err(invalid(
                "mpc.horizon",
                format!("{} exceeds the reference length {}", self.mpc.horizon, self.run.reference_len),
            ));
        }
        if self.run.steps == 0 || self.run.steps > self.run.reference_len {
            return Err(invalid(
                "run.steps",
                format!("must lie in 1..={}, got {}", self.run.reference_len, self.run.steps),
            ));
        }
        for (name, a) in [
            ("mpc.alpha_track", self.mpc.alpha_track),
            ("mpc.alpha_effort", self.mpc.alpha_effort),
            ("mpc.alpha_smooth", self.mpc.alpha_smooth),
        ] {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(invalid(name, "must be non-negative"));
            }
        }
        if self.excitation.segments * self.excitation.hold < self.train.spinup + 2 {
            return Err(invalid("train.spinup", "excitation record is shorter than spinup + 2"));
        }
        if self.model.chunks != 1 {
            return Err(invalid("model.chunks", "the controller uses a single reservoir"));
        }
        self.model.validate(None)?;
        self.train.validate()
    }
}

pub fn load<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<ExperimentConfig>("[data]\nsystem = \"lorenz63\"\n[model]\nres_dimm = 10\n").unwrap_err();
        assert!(err.to_string().contains("res_dimm"));
    }

    #[test]
    fn round_trip() {
        let cfg: ExperimentConfig = toml::from_str(
            "[data]\nsystem = \"ks\"\nt_n = 10.0\ndt = 0.25\nks_initial = { halfwaves = 3.0, noise_seed = 3 }\n[model]\nchunks = 4\n",
        )
        .unwrap();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(toml::from_str::<ExperimentConfig>(&text).unwrap(), cfg);
        let ctrl = ControlConfig {
            plant: PlantConfig::default(),
            excitation: ExcitationConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            mpc: MpcSection::default(),
            run: RunSection::default(),
        };
        assert_eq!(toml::from_str::<ControlConfig>(&toml::to_string(&ctrl).unwrap()).unwrap(), ctrl);
    }

    #[test]
    fn indivisible_chunks_name_the_field() {
        let m = ModelConfig {
            chunks: 5,
            ..ModelConfig::default()
        };
        let err = m.validate(Some(128)).unwrap_err().to_string();
        assert!(err.contains("model.chunks"), "{err}");
    }

    #[test]
    fn horizon_longer_than_reference_is_rejected() {
        let mut c: ControlConfig = toml::from_str("").unwrap();
        c.mpc.horizon = 600;
        assert!(c.validate().unwrap_err().to_string().contains("mpc.horizon"));
    }
}
