use std::path::PathBuf;

use rescomp::data::{integrate_ks, integrate_ode, KsConfig, OdeSystem};
use rescomp::TimeSeries;

use crate::{output, CliError};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Benchmark system, e.g. lorenz63, rossler, lorenz96 or ks.
    #[arg(long)]
    pub system: String,
    /// Final integration time.
    #[arg(long = "tN")]
    pub t_n: f64,
    /// Sampling interval; 0.01 for ODEs and 0.25 for ks when omitted.
    #[arg(long)]
    pub dt: Option<f64>,
    /// Comma-separated initial condition.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub u0: Option<Vec<f64>>,
    /// Lorenz-96 dimension.
    #[arg(long = "N")]
    pub n: Option<usize>,
    /// KS grid points.
    #[arg(long = "Nx")]
    pub nx: Option<usize>,
    /// KS domain as `a,b`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub domain: Option<Vec<f64>>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn ks_config(t_n: f64, dt: Option<f64>, nx: Option<usize>, domain: Option<(f64, f64)>, u0: Option<Vec<f64>>) -> KsConfig {
    let d = KsConfig::default();
    KsConfig {
        nx: nx.unwrap_or(d.nx),
        domain: domain.unwrap_or(d.domain),
        dt: dt.unwrap_or(d.dt),
        t_n,
        u0,
    }
}

pub fn generate(args: &Args) -> Result<TimeSeries, CliError> {
    if !(args.t_n > 0.0) {
        return Err(CliError::Validation(format!("--tN must be positive, got {}", args.t_n)));
    }
    if let Some(dt) = args.dt {
        if !(dt > 0.0) {
            return Err(CliError::Validation(format!("--dt must be positive, got {dt}")));
        }
    }
    if args.system == "ks" {
        let domain = match args.domain.as_deref() {
            None => None,
            Some([a, b]) if b > a => Some((*a, *b)),
            Some(other) => {
                return Err(CliError::Validation(format!("--domain: expected `a,b` with a < b, got {other:?}")));
            }
        };
        let cfg = ks_config(args.t_n, args.dt, args.nx, domain, args.u0.clone());
        if let Some(u0) = &cfg.u0 {
            if u0.len() != cfg.nx {
                return Err(CliError::Validation(format!("--u0: expected {} values, got {}", cfg.nx, u0.len())));
            }
        }
        return Ok(integrate_ks(&cfg)?);
    }
    let sys = OdeSystem::from_name(&args.system, args.n)?;
    if let Some(u0) = &args.u0 {
        if u0.len() != sys.dim() {
            return Err(CliError::Validation(format!("--u0: expected {} values, got {}", sys.dim(), u0.len())));
        }
    }
    Ok(integrate_ode(&sys, args.t_n, args.dt.unwrap_or(0.01), args.u0.as_deref())?)
}

pub fn run(args: &Args) -> Result<(), CliError> {
    let series = generate(args)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        output::create_dir(parent)?;
    }
    output::write_series(&args.out, &series)?;
    println!("{} x {}", series.len(), series.dim());
    Ok(())
}
