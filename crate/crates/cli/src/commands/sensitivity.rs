use std::fs;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use smallloss::engine::derive_seed;
use smallloss::instances::{random_l1_instance, random_mixed_hypergraph};
use smallloss::lewis_l1::{l1_sensitivity_audit, sample_count};
use smallloss::sparsify::{importance_scores, oversampling, sample_sparsifier, score_deletion_check, sensitivity_audit};
use smallloss::submodular::{random_directed_cut_hypergraph, HypergraphFile};
use smallloss::SubmodularHypergraph;

use crate::config::{EdgeFamily, SensitivitySection};
use crate::output::{experiment_dir, f, write_csv, write_json};
use crate::{CliError, Ctx};

/// Tolerance for `2w_i/r` against the measured probability shift.
pub const IDENTITY_TOL: f64 = 1e-6;
/// Tolerance for the weight-monotonicity check under row deletion.
pub const MONOTONE_TOL: f64 = 1e-9;
const SCORE_TOL: f64 = 1e-12;

#[derive(Serialize)]
struct SubmodSummary {
    config_digest: String,
    n: usize,
    edges: usize,
    eps: f64,
    m: f64,
    average: f64,
    average_tight: f64,
    cap: f64,
    within_cap: bool,
    score_deletion_holds: bool,
}

#[derive(Serialize)]
struct L1Summary {
    config_digest: String,
    rows: usize,
    d: usize,
    average: f64,
    bound: f64,
    max_identity_gap: f64,
    max_monotonicity_violation: f64,
    sample_count: usize,
    tv_average: f64,
    tv_cap: f64,
    passed: bool,
}

fn hypergraph(
    n: Option<usize>,
    edges: Option<usize>,
    family: Option<EdgeFamily>,
    path: Option<&std::path::Path>,
    seed: u64,
) -> Result<SubmodularHypergraph, CliError> {
    if let Some(path) = path {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read instance {}: {e}", path.display())))?;
        let file =
            HypergraphFile::from_json(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        return file
            .to_hypergraph()
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())));
    }
    let (Some(n), Some(edges)) = (n, edges) else {
        return Err(CliError::Usage("sensitivity needs either `path` or both `n` and `edges`".into()));
    };
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    Ok(match family.unwrap_or(EdgeFamily::Mixed) {
        EdgeFamily::Mixed => random_mixed_hypergraph(n, edges, &mut rng)?,
        EdgeFamily::DirectedCut => random_directed_cut_hypergraph(n, edges, &mut rng)?,
    })
}

pub fn run(ctx: &Ctx) -> Result<(), CliError> {
    let config = &ctx.config;
    let root = config.root_seed()?;
    let section = config
        .sensitivity
        .as_ref()
        .ok_or_else(|| CliError::Usage("missing [sensitivity] section".into()))?;
    let dir = experiment_dir(ctx, "sensitivity")?;
    let digest = config.digest()?;
    match section {
        SensitivitySection::Submodular {
            n,
            edges,
            family,
            path,
            eps,
            delta,
        } => {
            if !(*eps > 0.0 && *eps <= 1.0 && *delta > 0.0 && *delta < 1.0) {
                return Err(CliError::Usage(format!("need ε ∈ (0, 1] and δ ∈ (0, 1), got {eps}, {delta}")));
            }
            let h = hypergraph(*n, *edges, *family, path.as_deref(), derive_seed(root, "instance", 0))?;
            let m = oversampling(config.sparsify.c_m, h.n(), *eps, *delta);
            let rep = sensitivity_audit(&h, *eps, m)?;
            let scores = score_deletion_check(&h)?;
            write_csv(
                &dir.join(format!("{root}.csv")),
                "edge,prob_shift,tv_bound,tv_bound_tight,score_shift,own_score",
                (0..h.len()).map(|e| {
                    format!(
                        "{e},{},{},{},{},{}",
                        f(rep.prob_shift[e]),
                        f(rep.per_edge[e]),
                        f(rep.per_edge_tight[e]),
                        f(scores[e].0),
                        f(scores[e].1)
                    )
                }),
            )?;
            let imp = importance_scores(&h, *eps, *delta, config.sparsify.c_m)?;
            let sparsifier = sample_sparsifier(&h, &imp, *eps, derive_seed(root, "sample", 0))?;
            write_json(&dir.join("sparsifier.json"), &sparsifier)?;
            let score_ok = scores.iter().all(|(lhs, rhs)| lhs <= &(rhs + SCORE_TOL));
            let within = rep.within_cap();
            write_json(
                &dir.join("summary.json"),
                &SubmodSummary {
                    config_digest: digest,
                    n: h.n(),
                    edges: h.len(),
                    eps: *eps,
                    m,
                    average: rep.average,
                    average_tight: rep.average_tight,
                    cap: rep.cap,
                    within_cap: within,
                    score_deletion_holds: score_ok,
                },
            )?;
            if !within || !score_ok {
                return Err(CliError::Audit(format!(
                    "average {} vs cap {} (within: {within}); score deletion holds: {score_ok}",
                    rep.average, rep.cap
                )));
            }
        }
        SensitivitySection::L1 { rows, d, eps } => {
            if !(*eps > 0.0 && *eps < 1.0) {
                return Err(CliError::Usage(format!("ℓ1 sensitivity needs ε ∈ (0, 1), got {eps}")));
            }
            let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(root, "instance", 0));
            let a = random_l1_instance(*rows, *d, 1.0, 0.0, &mut rng)?.a;
            let rep = l1_sensitivity_audit(&a)?;
            let m = sample_count(config.lewis_l1.c_m, *d, *eps, *rows);
            let (tv_average, tv_cap) = rep.tv_bound(m, *eps);
            write_csv(
                &dir.join(format!("{root}.csv")),
                "row,prob_shift,identity",
                (0..*rows).map(|i| format!("{i},{},{}", f(rep.shift[i]), f(rep.identity[i]))),
            )?;
            let passed = rep.max_identity_gap <= IDENTITY_TOL
                && rep.average <= rep.bound + IDENTITY_TOL
                && rep.max_monotonicity_violation <= MONOTONE_TOL;
            write_json(
                &dir.join("summary.json"),
                &L1Summary {
                    config_digest: digest,
                    rows: *rows,
                    d: *d,
                    average: rep.average,
                    bound: rep.bound,
                    max_identity_gap: rep.max_identity_gap,
                    max_monotonicity_violation: rep.max_monotonicity_violation,
                    sample_count: m,
                    tv_average,
                    tv_cap,
                    passed,
                },
            )?;
            if !passed {
                return Err(CliError::Audit(format!(
                    "identity gap {:e}, average {} vs {}, monotonicity violation {:e}",
                    rep.max_identity_gap, rep.average, rep.bound, rep.max_monotonicity_violation
                )));
            }
        }
    }
    Ok(())
}
