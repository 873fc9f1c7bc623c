use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rescomp::TimeSeries;
use serde::Serialize;

use crate::CliError;

pub fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

pub fn write_series(path: &Path, series: &TimeSeries) -> Result<(), CliError> {
    let mut w = create(path)?;
    series.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Runtime(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn fmt_cell(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:e}")
    }
}

/// Writes `header` then one comma-separated line per row.
pub fn write_table(path: &Path, header: &str, rows: &[Vec<f64>]) -> Result<(), CliError> {
    let mut w = create(path)?;
    writeln!(w, "{header}")?;
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| fmt_cell(*v)).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}
