use rayon::prelude::*;
use serde::Serialize;
use smallloss::adversary::{
    mistake_tree_run, rademacher_instance, AdaptiveLearner, ConstantLearner, ConversionLearner, MAX_TREE_ENUM_T,
};
use smallloss::engine::{derive_seed, write_trace_csv, EpsSchedule, RegretTrace, RunSummary};

use crate::commands::simulate::{run_one, sparsifier_phi, Built};
use crate::config::{LowerboundSection, OracleKind, TreeLearner};
use crate::output::{create, experiment_dir, mean_se, write_json};
use crate::{CliError, Ctx};

/// Tolerance when comparing the closed-form optimum with the engine's.
const OPT_TOL: f64 = 1e-9;

#[derive(Serialize)]
struct RademacherSummary {
    config_digest: String,
    n: usize,
    horizon: usize,
    draws: usize,
    mean_regret: f64,
    std_err: f64,
    floor: f64,
    /// `mean_regret / sqrt(nT)`.
    ratio: f64,
    formula_mismatches: usize,
    runs: Vec<RunSummary>,
}

#[derive(Serialize)]
struct TreeSummary {
    config_digest: String,
    learner: TreeLearner,
    total_loss: f64,
    witness: u64,
    witness_loss: f64,
    enumerated_opt: Option<f64>,
    run: RunSummary,
}

pub fn run(ctx: &Ctx) -> Result<(), CliError> {
    let config = &ctx.config;
    let root = config.root_seed()?;
    let section = config
        .lowerbound
        .as_ref()
        .ok_or_else(|| CliError::Usage("missing [lowerbound] section".into()))?;
    let dir = experiment_dir(ctx, "lowerbound")?;
    let digest = config.digest()?;
    match *section {
        LowerboundSection::Rademacher {
            n,
            horizon,
            draws,
            floor,
        } => {
            if draws == 0 {
                return Err(CliError::Usage("need at least one draw".into()));
            }
            let kind = config.engine.oracle.unwrap_or(OracleKind::Sparsifier);
            if kind == OracleKind::Lewis {
                return Err(CliError::Usage("the Rademacher instance needs a submodular oracle".into()));
            }
            let phi = match kind {
                OracleKind::Sparsifier => sparsifier_phi(config, n, horizon.max(2), root)?,
                _ => None,
            };
            let schedule = EpsSchedule::Adaptive {
                a0: config.controller.a0,
                cap: config.controller.eps_cap,
            };
            let runs: Vec<(RegretTrace, f64)> = (0..draws)
                .into_par_iter()
                .map(|k| {
                    let inst = rademacher_instance(n, horizon, derive_seed(root, "instance", k as u64))?;
                    let built = Built::Submod(inst.instance);
                    let seed = derive_seed(root, "run", k as u64);
                    let (trace, _) = run_one(config, &built, kind, phi.as_ref(), &schedule, seed)?;
                    Ok((trace, inst.opt_formula))
                })
                .collect::<Result<_, CliError>>()?;
            for (t, _) in &runs {
                let mut w = create(&dir.join(format!("{}.csv", t.seed)))?;
                write_trace_csv(&t.rows, &mut w)?;
                std::io::Write::flush(&mut w)?;
            }
            let mismatches = runs.iter().filter(|(t, opt)| (t.opt_final - opt).abs() > OPT_TOL).count();
            let regrets: Vec<f64> = runs.iter().map(|(t, _)| t.regret).collect();
            let (mean_regret, std_err) = mean_se(&regrets);
            let scale = ((n * horizon) as f64).sqrt();
            let summary = RademacherSummary {
                config_digest: digest.clone(),
                n,
                horizon,
                draws,
                mean_regret,
                std_err,
                floor,
                ratio: mean_regret / scale,
                formula_mismatches: mismatches,
                runs: runs.iter().map(|(t, _)| RunSummary::of(t, &digest)).collect(),
            };
            write_json(&dir.join("summary.json"), &summary)?;
            if mismatches > 0 || mean_regret < floor * scale {
                return Err(CliError::Audit(format!(
                    "{mismatches} optimum mismatches; mean regret {mean_regret} vs floor {}",
                    floor * scale
                )));
            }
        }
        LowerboundSection::MistakeTree { horizon, learner } => {
            let seed = derive_seed(root, "run", 0);
            let mut boxed: Box<dyn AdaptiveLearner> = match learner {
                TreeLearner::Conversion => Box::new(ConversionLearner::new(horizon, seed)?),
                TreeLearner::Zero => Box::new(ConstantLearner { pred: false }),
                TreeLearner::One => Box::new(ConstantLearner { pred: true }),
            };
            let trace = mistake_tree_run(boxed.as_mut(), horizon)?;
            let rows = trace.rows();
            let mut w = create(&dir.join(format!("{seed}.csv")))?;
            write_trace_csv(&rows, &mut w)?;
            std::io::Write::flush(&mut w)?;
            let run = RunSummary {
                seed,
                horizon,
                regret: trace.total_loss,
                opt_final: 0.0,
                inconsistency: rows.iter().filter(|r| r.changed).count(),
                config_digest: digest.clone(),
                model: Some("adaptive".into()),
            };
            write_json(
                &dir.join("summary.json"),
                &TreeSummary {
                    config_digest: digest,
                    learner,
                    total_loss: trace.total_loss,
                    witness: trace.witness,
                    witness_loss: trace.witness_loss,
                    enumerated_opt: trace.enumerated_opt,
                    run,
                },
            )?;
            let enum_ok = match trace.enumerated_opt {
                Some(opt) => opt == 0.0,
                None => horizon > MAX_TREE_ENUM_T,
            };
            if trace.total_loss != horizon as f64 || trace.witness_loss != 0.0 || !enum_ok {
                return Err(CliError::Audit(format!(
                    "loss {} (expected {horizon}), witness loss {}, enumerated optimum {:?}",
                    trace.total_loss, trace.witness_loss, trace.enumerated_opt
                )));
            }
        }
    }
    Ok(())
}
