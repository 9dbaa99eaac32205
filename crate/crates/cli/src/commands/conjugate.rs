use serde::Serialize;
use smallloss::{phi_star, ConjugatePoint, PhiSpec};

use crate::output::{experiment_dir, f, write_csv, write_json};
use crate::{CliError, Ctx};

#[derive(Serialize)]
struct Summary<'a> {
    config_digest: String,
    phi: &'a PhiSpec,
    points: usize,
}

/// `points` log-spaced values from `lo` to `hi`.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Result<Vec<f64>, CliError> {
    if !(lo > 0.0 && lo.is_finite() && hi.is_finite()) {
        return Err(CliError::Usage(format!("u range must be positive and finite, got [{lo}, {hi}]")));
    }
    if hi < lo || points == 0 || (points == 1 && hi != lo) {
        return Err(CliError::Usage(format!("bad u grid: [{lo}, {hi}] with {points} points")));
    }
    if points == 1 {
        return Ok(vec![lo]);
    }
    let (a, b) = (lo.ln(), hi.ln());
    let step = (b - a) / (points - 1) as f64;
    Ok((0..points)
        .map(|k| match k {
            0 => lo,
            k if k == points - 1 => hi,
            k => (a + step * k as f64).exp(),
        })
        .collect())
}

pub fn run(ctx: &Ctx) -> Result<(), CliError> {
    let c = &ctx.config.conjugate;
    let grid = log_grid(c.u_min, c.u_max, c.points)?;
    let rows: Vec<ConjugatePoint> = grid
        .iter()
        .map(|&u| phi_star(&c.phi, u))
        .collect::<smallloss::Result<_>>()?;
    let dir = experiment_dir(ctx, "conjugate")?;
    write_csv(
        &dir.join("conjugate.csv"),
        "u,eps_min,phi_star",
        rows.iter().map(|p| format!("{},{},{}", f(p.u), f(p.eps_min), f(p.phi_star))),
    )?;
    write_json(
        &dir.join("summary.json"),
        &Summary {
            config_digest: ctx.config.digest()?,
            phi: &c.phi,
            points: rows.len(),
        },
    )?;
    Ok(())
}
