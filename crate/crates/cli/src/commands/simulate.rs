use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::Serialize;
use smallloss::calibrate::{measure_submod_phi, PhiFamily};
use smallloss::engine::{
    LossInstance, audit_decomposition, derive_seed, run as run_engine, write_trace_csv, DecompositionAudit, EpsSchedule,
    RegretTrace, RunSummary,
};
use smallloss::instances::{
    planted_submodular, random_l1_instance, random_submodular_instance, ExactSubmodularOracle, L1Instance,
    L1Oracle, SubmodularInstance, SubmodularOracle,
};
use smallloss::adversary::rademacher_instance;
use smallloss::submodular::{full_mask, HypergraphFile};
use smallloss::{PhiSpec, SetFunction};

use crate::config::{Config, InstanceSection, OracleKind, PhiSource};
use crate::output::{create, experiment_dir, f, mean_se, write_csv, write_json};
use crate::{CliError, Ctx};

pub enum Built {
    Submod(SubmodularInstance),
    L1(L1Instance),
}

/// Losses of every edge in a hypergraph file, as one datapoint each.
fn load_hypergraph_instance(path: &Path) -> Result<SubmodularInstance, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read instance {}: {e}", path.display())))?;
    let file = HypergraphFile::from_json(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let losses: Vec<SetFunction> = file
        .edges
        .iter()
        .map(|e| {
            let g = e.to_function()?;
            // widen each edge to the full ground set so losses compose
            SetFunction::from_fn(full_mask(file.n), |s| g.eval(s))
        })
        .collect::<smallloss::Result<_>>()?;
    Ok(SubmodularInstance::new(file.n, &losses)?)
}

/// Builds instance `k` of the configured family.
pub fn build_instance(section: &InstanceSection, root: u64, k: usize) -> Result<Built, CliError> {
    let seed = derive_seed(root, "instance", k as u64);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    Ok(match section {
        InstanceSection::Planted { n, horizon, opt } => {
            Built::Submod(planted_submodular(*n, *horizon, *opt, &mut rng)?.0)
        }
        InstanceSection::RandomSubmodular { n, horizon } => {
            Built::Submod(random_submodular_instance(*n, *horizon, &mut rng)?)
        }
        InstanceSection::Zero { n, horizon } => {
            if *horizon == 0 {
                return Err(CliError::Usage("horizon must be positive".into()));
            }
            let zero = SetFunction::from_fn(full_mask(*n), |_| 0.0)?;
            Built::Submod(SubmodularInstance::new(*n, &vec![zero; *horizon])?)
        }
        InstanceSection::Rademacher { n, horizon } => Built::Submod(rademacher_instance(*n, *horizon, seed)?.instance),
        InstanceSection::HypergraphFile { path } => Built::Submod(load_hypergraph_instance(path)?),
        InstanceSection::L1 {
            horizon,
            d,
            radius,
            outlier_frac,
        } => Built::L1(random_l1_instance(*horizon, *d, *radius, *outlier_frac, &mut rng)?),
    })
}

pub fn instance_section(config: &Config) -> Result<&InstanceSection, CliError> {
    config
        .instance
        .as_ref()
        .ok_or_else(|| CliError::Usage("missing [instance] section".into()))
}

/// Arms in output order: the adaptive controller, then the fixed-ε grid.
pub fn arms(config: &Config) -> Result<Vec<(String, EpsSchedule)>, CliError> {
    let c = &config.controller;
    let mut out = Vec::new();
    if c.adaptive {
        out.push((
            "adaptive".to_string(),
            EpsSchedule::Adaptive {
                a0: c.a0,
                cap: c.eps_cap,
            },
        ));
    }
    for &eps in &c.fixed_grid {
        if !(eps > 0.0 && eps <= 1.0) {
            return Err(CliError::Usage(format!("fixed ε must lie in (0, 1], got {eps}")));
        }
        out.push((format!("fixed-{eps}"), EpsSchedule::Fixed { eps }));
    }
    if out.is_empty() {
        return Err(CliError::Usage("no arms: enable `adaptive` or give a `fixed_grid`".into()));
    }
    Ok(out)
}

fn oracle_kind(config: &Config, inst: &Built) -> Result<OracleKind, CliError> {
    let kind = config.engine.oracle.unwrap_or(match inst {
        Built::Submod(_) => OracleKind::Sparsifier,
        Built::L1(_) => OracleKind::Lewis,
    });
    match (inst, kind) {
        (Built::Submod(_), OracleKind::Sparsifier | OracleKind::Exact) | (Built::L1(_), OracleKind::Lewis) => Ok(kind),
        _ => Err(CliError::Usage(format!("oracle {kind:?} does not fit this instance kind"))),
    }
}

/// The φ override for the sparsifier oracle, if any.
pub fn sparsifier_phi(config: &Config, n: usize, horizon: usize, root: u64) -> Result<Option<PhiSpec>, CliError> {
    let s = &config.sparsify;
    if let Some(phi) = &s.phi {
        return Ok(Some(phi.clone()));
    }
    match s.phi_source {
        PhiSource::Analytic => Ok(None),
        PhiSource::Measured => {
            let family = PhiFamily {
                trials: s.phi_trials,
                ..PhiFamily::new(n, horizon, s.c_m)
            };
            Ok(Some(measure_submod_phi(&family, derive_seed(root, "phi", 0))?.spec()?))
        }
    }
}

pub fn run_one(
    config: &Config,
    inst: &Built,
    kind: OracleKind,
    phi: Option<&PhiSpec>,
    schedule: &EpsSchedule,
    seed: u64,
) -> Result<(RegretTrace, PhiSpec), CliError> {
    use smallloss::engine::OfflineOracle;
    Ok(match (inst, kind) {
        (Built::Submod(i), OracleKind::Sparsifier) => {
            let mut o = SubmodularOracle::new(i, config.sparsify.c_m)?.with_slack(config.engine.additive_slack);
            if let Some(p) = phi {
                o = o.with_phi(p.clone());
            }
            (run_engine(i, &mut o, schedule, seed)?, o.phi())
        }
        (Built::Submod(i), OracleKind::Exact) => {
            let mut o = ExactSubmodularOracle::new(i);
            (run_engine(i, &mut o, schedule, seed)?, o.phi())
        }
        (Built::L1(i), OracleKind::Lewis) => {
            let mut o = L1Oracle::new(i, config.lewis_l1.c_m);
            (run_engine(i, &mut o, schedule, seed)?, o.phi())
        }
        _ => unreachable!("oracle kind checked against the instance"),
    })
}

#[derive(Serialize)]
struct ArmSummary {
    arm: String,
    schedule: EpsSchedule,
    mean_regret: f64,
    std_err: f64,
    mean_opt_final: f64,
    mean_inconsistency: f64,
    decomposition: DecompositionAudit,
    decomposition_holds: bool,
    runs: Vec<RunSummary>,
}

#[derive(Serialize)]
struct Summary<'a> {
    experiment: &'a str,
    config_digest: String,
    root_seed: u64,
    instance: &'a InstanceSection,
    oracle: OracleKind,
    phi: Option<PhiSpec>,
    arms: Vec<ArmSummary>,
}

pub fn run(ctx: &Ctx) -> Result<(), CliError> {
    let config = &ctx.config;
    let root = config.root_seed()?;
    let section = instance_section(config)?;
    let arms = arms(config)?;
    let seeds = config.engine.seeds;
    if seeds == 0 {
        return Err(CliError::Usage("engine.seeds must be positive".into()));
    }
    let digest = config.digest()?;
    let instances: Vec<Built> = (0..seeds)
        .into_par_iter()
        .map(|k| build_instance(section, root, k))
        .collect::<Result<_, _>>()?;
    let kind = oracle_kind(config, &instances[0])?;
    let phi = match (&instances[0], kind) {
        (Built::Submod(i), OracleKind::Sparsifier) => sparsifier_phi(config, i.n(), i.len().max(2), root)?,
        _ => None,
    };
    let tasks: Vec<(usize, usize)> = (0..arms.len()).flat_map(|a| (0..seeds).map(move |k| (a, k))).collect();
    let results: Vec<(RegretTrace, PhiSpec)> = tasks
        .par_iter()
        .map(|&(a, k)| {
            let seed = derive_seed(root, "run", k as u64);
            run_one(config, &instances[k], kind, phi.as_ref(), &arms[a].1, seed)
        })
        .collect::<Result<_, _>>()?;

    let name = config.experiment.clone().unwrap_or_else(|| "simulate".into());
    let dir = experiment_dir(ctx, &name)?;
    let mut summaries = Vec::new();
    let mut failed = Vec::new();
    for (a, (label, schedule)) in arms.iter().enumerate() {
        let traces: Vec<RegretTrace> = results[a * seeds..(a + 1) * seeds].iter().map(|r| r.0.clone()).collect();
        for t in &traces {
            let mut w = create(&dir.join(label).join(format!("{}.csv", t.seed)))?;
            write_trace_csv(&t.rows, &mut w)?;
            std::io::Write::flush(&mut w)?;
        }
        let regrets: Vec<f64> = traces.iter().map(|t| t.regret).collect();
        let (mean_regret, std_err) = mean_se(&regrets);
        let decomposition = audit_decomposition(&traces)?;
        let holds = decomposition.holds();
        if !holds {
            failed.push(label.clone());
        }
        summaries.push(ArmSummary {
            arm: label.clone(),
            schedule: *schedule,
            mean_regret,
            std_err,
            mean_opt_final: traces.iter().map(|t| t.opt_final).sum::<f64>() / seeds as f64,
            mean_inconsistency: traces.iter().map(|t| t.inconsistency as f64).sum::<f64>() / seeds as f64,
            decomposition,
            decomposition_holds: holds,
            runs: traces.iter().map(|t| RunSummary::of(t, &digest)).collect(),
        });
    }
    let used_phi = results[0].1.clone();
    if let PhiSpec::Custom(_) = used_phi {
        write_phi_table(&dir.join("phi.csv"), &used_phi)?;
    }
    write_json(
        &dir.join("summary.json"),
        &Summary {
            experiment: &name,
            config_digest: digest,
            root_seed: root,
            instance: section,
            oracle: kind,
            phi: Some(used_phi),
            arms: summaries,
        },
    )?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Audit(format!("regret decomposition violated on arms {failed:?}")))
    }
}

fn write_phi_table(path: &Path, phi: &PhiSpec) -> Result<(), CliError> {
    let value = serde_json::to_value(phi)?;
    let points: Vec<(f64, f64)> = serde_json::from_value(value["points"].clone())?;
    write_csv(path, "eps,phi", points.iter().map(|(e, p)| format!("{},{}", f(*e), f(*p))))
}
