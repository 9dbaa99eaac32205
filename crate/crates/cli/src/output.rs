use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::{CliError, Ctx};

/// `out/<experiment>`, created on demand.
pub fn experiment_dir(ctx: &Ctx, default_name: &str) -> Result<PathBuf, CliError> {
    let name = ctx.config.experiment.as_deref().unwrap_or(default_name);
    if name.is_empty() || name.contains(['/', '\\']) || name == "." || name == ".." {
        return Err(CliError::Usage(format!("invalid experiment name {name:?}")));
    }
    let dir = ctx.out.join(name);
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

pub fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Writes a header line and one comma-joined line per row.
pub fn write_csv<I, R>(path: &Path, header: &str, rows: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = R>,
    R: AsRef<str>,
{
    let mut w = create(path)?;
    writeln!(w, "{header}")?;
    for r in rows {
        writeln!(w, "{}", r.as_ref())?;
    }
    w.flush()?;
    Ok(())
}

/// Float formatting shared by every CSV: 17 significant digits.
pub fn f(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
