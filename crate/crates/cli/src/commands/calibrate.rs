use serde::Serialize;
use smallloss::calibrate::{
    calibrate_c_lewis, calibrate_c_m, measure_submod_phi, CalibrationReport, LewisFamily, PhiFamily,
    SparsifierFamily, SHIPPED_THRESHOLD,
};
use smallloss::lewis_l1::DEFAULT_C_LEWIS;
use smallloss::sparsify::DEFAULT_C_M;
use smallloss::PhiSpec;

use crate::config::CalibrationTarget;
use crate::output::{experiment_dir, f, write_csv, write_json};
use crate::{CliError, Ctx};

#[derive(Serialize)]
struct ConstantSummary<'a> {
    config_digest: String,
    report: &'a CalibrationReport,
    shipped: f64,
    reproduces_shipped: Option<bool>,
}

#[derive(Serialize)]
struct PhiSummary {
    config_digest: String,
    n: usize,
    horizon: usize,
    c_m: f64,
    phi: PhiSpec,
}

pub fn run(ctx: &Ctx) -> Result<(), CliError> {
    let config = &ctx.config;
    let root = config.root_seed()?;
    let c = &config.calibrate;
    let target = c
        .target
        .ok_or_else(|| CliError::Usage("calibrate needs a target (c_M, c_m or phi)".into()))?;
    if !(c.threshold > 0.0 && c.threshold <= 1.0) {
        return Err(CliError::Usage(format!("threshold must lie in (0, 1], got {}", c.threshold)));
    }
    if c.trials == Some(0) {
        return Err(CliError::Usage("trials must be positive".into()));
    }
    let dir = experiment_dir(ctx, "calibrate")?;
    let digest = config.digest()?;
    let (report, shipped, full_family) = match target {
        CalibrationTarget::CM => {
            let family = SparsifierFamily {
                trials: c.trials.unwrap_or(SparsifierFamily::default().trials),
                ..Default::default()
            };
            let full = family == SparsifierFamily::default();
            (calibrate_c_m(&family, c.threshold, root)?, DEFAULT_C_M, full)
        }
        CalibrationTarget::Cm => {
            let family = LewisFamily {
                trials: c.trials.unwrap_or(LewisFamily::default().trials),
                ..Default::default()
            };
            let full = family == LewisFamily::default();
            (calibrate_c_lewis(&family, c.threshold, root)?, DEFAULT_C_LEWIS, full)
        }
        CalibrationTarget::Phi => {
            let mut family = PhiFamily::new(c.n, c.horizon, config.sparsify.c_m);
            if let Some(t) = c.trials {
                family.trials = t;
            }
            let measured = measure_submod_phi(&family, root)?;
            write_csv(
                &dir.join("phi.csv"),
                "eps,phi",
                measured.points.iter().map(|(e, p)| format!("{},{}", f(*e), f(*p))),
            )?;
            write_csv(
                &dir.join("samples.csv"),
                "opt,t,eps,scaled_sensitivity",
                measured
                    .samples
                    .iter()
                    .map(|s| format!("{},{},{},{}", s.opt, s.t, f(s.eps), f(s.scaled))),
            )?;
            write_json(
                &dir.join("summary.json"),
                &PhiSummary {
                    config_digest: digest,
                    n: c.n,
                    horizon: c.horizon,
                    c_m: config.sparsify.c_m,
                    phi: measured.spec()?,
                },
            )?;
            return Ok(());
        }
    };
    write_csv(
        &dir.join("ladder.csv"),
        "constant,success_rate",
        report
            .ladder
            .iter()
            .map(|r| format!("{},{}", f(r.constant), f(r.success_rate))),
    )?;
    let reproduces = (full_family && c.threshold == SHIPPED_THRESHOLD).then_some(report.constant == shipped);
    write_json(
        &dir.join("summary.json"),
        &ConstantSummary {
            config_digest: digest,
            report: &report,
            shipped,
            reproduces_shipped: reproduces,
        },
    )?;
    if reproduces == Some(false) {
        return Err(CliError::Audit(format!(
            "calibrated {} = {} but the shipped constant is {shipped}",
            report.target, report.constant
        )));
    }
    Ok(())
}
