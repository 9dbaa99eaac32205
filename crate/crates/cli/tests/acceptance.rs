//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Run with `cargo test --release --test acceptance`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use smallloss::adversary::{
    mistake_tree_run, rademacher_instance, AdaptiveLearner, ConstantLearner, ConversionLearner,
};
use smallloss::calibrate::{measure_submod_phi, sparsifier_success_rate, PhiFamily, SparsifierFamily};
use smallloss::conjugate::{SEARCH_HI, SEARCH_LO};
use smallloss::controller::{audit_step_identity, audit_telescope, harmonic};
use smallloss::engine::{audit_prefix_optima, derive_seed, run, EpsSchedule, DEFAULT_ADDITIVE_SLACK};
use smallloss::instances::{
    planted_submodular, random_l1_instance, random_mixed_hypergraph, random_submodular_instance,
    ExactSubmodularOracle, SubmodularOracle,
};
use smallloss::lewis_l1::{
    l1_objective, l1_sensitivity_audit, lewis_weights, numerical_rank, offline_l1_oracle, weighted_median_1d,
    DEFAULT_C_LEWIS, LEWIS_MAX_ITER, LEWIS_TOL,
};
use smallloss::sparsify::{oversampling, score_deletion_check, sensitivity_audit, DEFAULT_C_M};
use smallloss::{eval_phi, phi_star, PhiSpec};

const ROOT: u64 = 20_240_601;

// criterion 1
const GRID_POINTS: usize = 100_000;
const CONJ_REL_TOL: f64 = 1e-6;
const PROPERTY_SLACK: f64 = 1e-9;
// criterion 2
const IDENTITY_REL_TOL: f64 = 1e-12;
// criterion 4
const SANDWICH_RATE: f64 = 0.95;
// criterion 5
const L1_IDENTITY_TOL: f64 = 1e-6;
const SCORE_TOL: f64 = 1e-12;
// criterion 6
const RANK_TOL: f64 = 1e-8;
const MONOTONE_TOL: f64 = 1e-9;
// criterion 7
const MAX_SLOPE: f64 = 0.85;
const MAX_RATIO_TO_BEST_FIXED: f64 = 3.0;
// criterion 8
const RADEMACHER_FLOOR: f64 = 0.2;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rng(label: &str, k: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(derive_seed(ROOT, label, k))
}

fn log_uniform(r: &mut ChaCha20Rng, lo: f64, hi: f64) -> f64 {
    r.gen_range(lo.ln()..hi.ln()).exp()
}

fn random_power_log(r: &mut ChaCha20Rng) -> PhiSpec {
    let c1 = log_uniform(r, 0.01, 100.0);
    let q = r.gen_range(0.5..4.0);
    let c2 = if r.gen_bool(0.5) { 0.0 } else { r.gen_range(0.0..100.0) };
    PhiSpec::power_log(c1, q, c2).unwrap()
}

/// Minimizer of `uε + φ(ε)` by a dense log grid, then a second dense grid
/// across the neighbouring cells of the best point.
fn grid_oracle(spec: &PhiSpec, u: f64) -> (f64, f64) {
    let scan = |a: f64, b: f64| {
        let mut best = (a, f64::INFINITY);
        for k in 0..GRID_POINTS {
            let x = a + (b - a) * k as f64 / (GRID_POINTS - 1) as f64;
            let e = x.exp();
            let v = u * e + eval_phi(spec, e).unwrap();
            if v < best.1 {
                best = (x, v);
            }
        }
        best
    };
    let (lo, hi) = (SEARCH_LO.ln(), SEARCH_HI.ln());
    let h = (hi - lo) / (GRID_POINTS - 1) as f64;
    let (x0, _) = scan(lo, hi);
    let (x, v) = scan((x0 - h).max(lo), (x0 + h).min(hi));
    (x.exp(), v)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn conjugate_correctness() -> Outcome {
    let mut r = rng("c1", 0);
    let (mut worst_eps, mut worst_val, mut worst_prop) = (0.0f64, 0.0f64, f64::INFINITY);
    for _ in 0..1000 {
        let spec = random_power_log(&mut r);
        let u = log_uniform(&mut r, 1e-3, 1e3);
        let p = phi_star(&spec, u).unwrap();
        let (ge, gv) = grid_oracle(&spec, u);
        worst_eps = worst_eps.max(rel(p.eps_min, ge));
        worst_val = worst_val.max(rel(p.phi_star, gv));

        let v = log_uniform(&mut r, 1e-3, 1e3);
        let pv = phi_star(&spec, v).unwrap();
        let mid = phi_star(&spec, 0.5 * (u + v)).unwrap();
        let eps = log_uniform(&mut r, 1e-4, 1e4);
        let scale = p.phi_star.abs().max(pv.phi_star.abs()).max(1.0);
        let props = [
            // Fenchel–Young
            (u * eps + eval_phi(&spec, eps).unwrap() - p.phi_star) / scale.max(u * eps),
            // supergradient at u
            (p.phi_star + p.eps_min * (v - u) - pv.phi_star) / scale.max(p.eps_min * (v - u).abs()),
            // midpoint concavity
            (mid.phi_star - 0.5 * (p.phi_star + pv.phi_star)) / scale,
            // monotone
            ((pv.phi_star - p.phi_star) * (v - u).signum()) / scale,
        ];
        worst_prop = props.iter().copied().fold(worst_prop, f64::min);
    }
    outcome(
        worst_eps <= CONJ_REL_TOL && worst_val <= CONJ_REL_TOL && worst_prop >= -PROPERTY_SLACK,
        format!("max rel err ε {worst_eps:.2e}, φ★ {worst_val:.2e}; min property slack {worst_prop:.2e}"),
    )
}

fn controller_identities() -> Outcome {
    let mut r = rng("c2", 0);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let t = r.gen_range(2..5000usize);
        let h_prev = harmonic(t - 1);
        let a_prev = log_uniform(&mut r, 1e-6, 1.0) + r.gen_range(0.0..1.0) * h_prev * t as f64;
        let opt = r.gen_range(0.0..=t as f64);
        let (lhs, rhs) = audit_step_identity(a_prev, h_prev, opt, t).unwrap();
        let tf = t as f64;
        let u = (a_prev + opt / tf) / (h_prev + 1.0 / tf);
        // largest term on either side
        let scale = (opt / tf).max(u / tf).max(h_prev * u).max(a_prev);
        worst = worst.max((lhs - rhs).abs() / scale.max(f64::MIN_POSITIVE));
    }
    let mut min_slack = f64::INFINITY;
    for _ in 0..1000 {
        let len = r.gen_range(1..300);
        let mut acc = 0.0;
        let opts: Vec<f64> = (0..len)
            .map(|_| {
                acc += if r.gen_bool(0.3) { r.gen_range(0.0..1.0) } else { 0.0 };
                acc
            })
            .collect();
        let spec = random_power_log(&mut r);
        let a0 = log_uniform(&mut r, 1e-4, 1.0);
        let audit = audit_telescope(&opts, &spec, a0).unwrap();
        min_slack = min_slack.min(audit.slack() / audit.bound_rhs.max(1.0));
    }
    outcome(
        worst <= IDENTITY_REL_TOL && min_slack >= -PROPERTY_SLACK,
        format!("step identity max rel gap {worst:.2e}; telescoping min rel slack {min_slack:.2e}"),
    )
}

fn prefix_optima() -> Outcome {
    let mut failures = 0;
    let mut worst = f64::NEG_INFINITY;
    for k in 0..20 {
        let mut r = rng("c3", k);
        let n = r.gen_range(3..=6);
        let horizon = r.gen_range(20..=80);
        let inst = random_submodular_instance(n, horizon, &mut r).unwrap();
        let mut oracle = ExactSubmodularOracle::new(&inst);
        let audit = audit_prefix_optima(&inst, &mut oracle, 200, derive_seed(ROOT, "c3-orders", k)).unwrap();
        if !audit.holds() {
            failures += 1;
        }
        worst = worst.max((audit.mc_mean - audit.opt_final) / audit.std_err.max(1e-12));
    }
    outcome(
        failures == 0,
        format!("{failures}/20 instances above OPT_T + 3·SE; max (mean − OPT_T)/SE {worst:.2}"),
    )
}

fn sparsifier_quality() -> Outcome {
    let family = SparsifierFamily::default();
    let rate = sparsifier_success_rate(&family, DEFAULT_C_M, ROOT).unwrap();
    outcome(
        rate >= SANDWICH_RATE,
        format!("c_M = {DEFAULT_C_M}: {:.1}% of {} trials", 100.0 * rate, family.trials),
    )
}

fn random_matrix(r: &mut ChaCha20Rng, max_rows: usize, max_d: usize, min_rows: usize) -> DMatrix<f64> {
    let d = r.gen_range(1..=max_d);
    let t = r.gen_range(min_rows.max(d)..=max_rows);
    let sparse: f64 = r.gen_range(0.0..0.5);
    loop {
        let a = DMatrix::from_fn(t, d, |_, _| {
            if r.gen::<f64>() < sparse {
                0.0
            } else {
                r.gen_range(-1.0..1.0)
            }
        });
        if a.row_iter().all(|row| row.iter().any(|x: &f64| x.abs() > 1e-3)) {
            return a;
        }
    }
}

fn sensitivity_bounds() -> Outcome {
    let eps = 0.5;
    let (mut cap_fail, mut score_fail, mut worst_ratio) = (0, 0, 0.0f64);
    for k in 0..50 {
        let mut r = rng("c5-graph", k);
        let n = r.gen_range(3..=6);
        let edges = r.gen_range(10..=80);
        let h = random_mixed_hypergraph(n, edges, &mut r).unwrap();
        let rep = sensitivity_audit(&h, eps, oversampling(DEFAULT_C_M, n, eps, 0.05)).unwrap();
        worst_ratio = worst_ratio.max(rep.average / rep.cap);
        cap_fail += !rep.within_cap() as usize;
        score_fail += score_deletion_check(&h).unwrap().iter().any(|(l, s)| *l > s + SCORE_TOL) as usize;
    }
    let (mut gap, mut avg_excess) = (0.0f64, f64::NEG_INFINITY);
    for k in 0..100 {
        let a = random_matrix(&mut rng("c5-matrix", k), 32, 6, 2);
        let rep = l1_sensitivity_audit(&a).unwrap();
        gap = gap.max(rep.max_identity_gap);
        avg_excess = avg_excess.max(rep.average - rep.bound);
    }
    outcome(
        cap_fail == 0 && score_fail == 0 && gap <= L1_IDENTITY_TOL && avg_excess <= L1_IDENTITY_TOL,
        format!(
            "cap misses {cap_fail}/50 (max avg/cap {worst_ratio:.3}), score-deletion misses {score_fail}/50; \
             ℓ1 identity gap {gap:.1e}, max avg − 2/t {avg_excess:.1e}"
        ),
    )
}

fn lewis_properties() -> Outcome {
    let (mut rank_gap, mut min_w, mut violation) = (0.0f64, f64::INFINITY, f64::NEG_INFINITY);
    for k in 0..100 {
        let a = random_matrix(&mut rng("c6", k), 32, 6, 2);
        let st = lewis_weights(&a, LEWIS_TOL, LEWIS_MAX_ITER).unwrap();
        rank_gap = rank_gap.max((st.w.iter().sum::<f64>() - numerical_rank(&a) as f64).abs());
        min_w = st.w.iter().copied().fold(min_w, f64::min);
        violation = violation.max(l1_sensitivity_audit(&a).unwrap().max_monotonicity_violation);
    }
    outcome(
        rank_gap <= RANK_TOL && min_w > 0.0 && violation <= MONOTONE_TOL,
        format!("max |Σw − rank| {rank_gap:.1e}, min w {min_w:.2e}, max deletion decrease {violation:.1e}"),
    )
}

fn mean_regret(opt: usize, seeds: u64, schedule: &EpsSchedule, phi: Option<&PhiSpec>) -> f64 {
    let mut total = 0.0;
    for k in 0..seeds {
        let mut r = rng(&format!("c7-instance-{opt}"), k);
        let (inst, _) = planted_submodular(5, 1024, opt, &mut r).unwrap();
        let mut oracle = SubmodularOracle::with_default_constant(&inst).unwrap();
        if let Some(p) = phi {
            oracle = oracle.with_phi(p.clone());
        }
        total += run(&inst, &mut oracle, schedule, derive_seed(ROOT, "c7-run", k)).unwrap().regret;
    }
    total / seeds as f64
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn small_loss_scaling() -> Outcome {
    let opts = [3usize, 9, 30, 90, 300];
    let seeds = 50;
    let family = PhiFamily::new(5, 1024, DEFAULT_C_M);
    let phi = measure_submod_phi(&family, derive_seed(ROOT, "c7-phi", 0)).unwrap().spec().unwrap();
    let adaptive = EpsSchedule::default();
    let grid: Vec<f64> = (0..=4).map(|k| 2f64.powi(k - 4)).collect();
    let mut ok = true;
    let mut regrets = Vec::new();
    let mut worst_ratio = 0.0f64;
    let mut analytic = Vec::new();
    for &opt in &opts {
        let ra = mean_regret(opt, seeds, &adaptive, Some(&phi));
        let best = grid
            .iter()
            .map(|&eps| mean_regret(opt, seeds, &EpsSchedule::Fixed { eps }, None))
            .fold(f64::INFINITY, f64::min);
        let ratio = ra / best.max(f64::MIN_POSITIVE);
        worst_ratio = worst_ratio.max(ratio);
        ok &= ratio <= MAX_RATIO_TO_BEST_FIXED;
        regrets.push(ra);
        analytic.push(mean_regret(opt, seeds, &adaptive, None));
    }
    let xs: Vec<f64> = opts.iter().map(|&o| (o as f64).ln()).collect();
    let ys: Vec<f64> = regrets.iter().map(|r| r.max(1e-12).ln()).collect();
    let s = slope(&xs, &ys);
    ok &= s <= MAX_SLOPE;
    let fmt = |v: &[f64]| v.iter().map(|r| format!("{r:.2}")).collect::<Vec<_>>().join("/");
    outcome(
        ok,
        format!(
            "slope {s:.3}, max adaptive/best-fixed {worst_ratio:.2}; regrets {} (analytic-φ controller {})",
            fmt(&regrets),
            fmt(&analytic)
        ),
    )
}

fn rademacher_floor() -> Outcome {
    let (n, horizon, draws) = (8, 4096, 100);
    let mut total = 0.0;
    let mut mismatches = 0;
    for k in 0..draws {
        let rad = rademacher_instance(n, horizon, derive_seed(ROOT, "c8-sigma", k)).unwrap();
        let mut oracle = SubmodularOracle::with_default_constant(&rad.instance).unwrap();
        let trace = run(&rad.instance, &mut oracle, &EpsSchedule::default(), derive_seed(ROOT, "c8-run", k)).unwrap();
        mismatches += ((trace.opt_final - rad.opt_formula).abs() > 1e-9) as usize;
        total += trace.regret;
    }
    let mean = total / draws as f64;
    let scale = ((n * horizon) as f64).sqrt();
    outcome(
        mean >= RADEMACHER_FLOOR * scale && mismatches == 0,
        format!(
            "mean regret {mean:.1} = {:.3}·√(nT) (floor {RADEMACHER_FLOOR}); OPT formula mismatches {mismatches}",
            mean / scale
        ),
    )
}

fn mistake_tree() -> Outcome {
    let mut bad = Vec::new();
    for horizon in [1usize, 8, 18] {
        let learners: [(&str, Box<dyn AdaptiveLearner>); 3] = [
            ("conversion", Box::new(ConversionLearner::new(horizon, derive_seed(ROOT, "c9", horizon as u64)).unwrap())),
            ("zero", Box::new(ConstantLearner { pred: false })),
            ("one", Box::new(ConstantLearner { pred: true })),
        ];
        for (name, mut learner) in learners {
            let trace = mistake_tree_run(learner.as_mut(), horizon).unwrap();
            if trace.total_loss != horizon as f64 || trace.witness_loss != 0.0 || trace.enumerated_opt != Some(0.0) {
                bad.push(format!("{name}@T={horizon}"));
            }
        }
    }
    outcome(bad.is_empty(), format!("9 runs; failures: {bad:?}"))
}

fn l1_oracle() -> Outcome {
    let (t, eps, seeds) = (64, 0.5, 200);
    let slack = DEFAULT_ADDITIVE_SLACK / t as f64;
    let ones = vec![1.0; t];
    let (mut loss, mut opt) = (0.0, 0.0);
    for k in 0..seeds {
        let mut r = rng("c10-data", k);
        let inst = random_l1_instance(t, 1, 1.0, 0.1, &mut r).unwrap();
        let col: Vec<f64> = inst.a.column(0).iter().copied().collect();
        let best = weighted_median_1d(&col, &inst.b, &ones, Some(inst.radius)).unwrap();
        opt += l1_objective(&inst.a, &inst.b, &ones, &[best]);
        let mut sr = rng("c10-sample", k);
        let theta = offline_l1_oracle(&inst.a, &inst.b, eps, t, DEFAULT_C_LEWIS, Some(inst.radius), &mut sr).unwrap();
        loss += l1_objective(&inst.a, &inst.b, &ones, &theta);
    }
    let (loss, opt) = (loss / seeds as f64, opt / seeds as f64);
    outcome(
        loss <= (1.0 + eps) * opt + slack,
        format!("mean loss {loss:.4} vs (1+ε)·OPT + slack = {:.4} (OPT {opt:.4}, ratio {:.4})", (1.0 + eps) * opt + slack, loss / opt),
    )
}

const DETERMINISM_CONFIGS: [(&str, &str); 7] = [
    ("conjugate", "seed = 1\n[conjugate]\nphi = { kind = \"power_log\", c1 = 2.0, q = 1.5, c2 = 3.0 }\n"),
    (
        "simulate",
        "seed = 1\n[instance]\nkind = \"planted\"\nn = 4\nhorizon = 128\nopt = 10\n[engine]\nseeds = 3\n\
         [sparsify]\nphi_source = \"measured\"\nphi_trials = 10\n[controller]\nfixed_grid = [0.25, 1.0]\n",
    ),
    (
        "simulate",
        "seed = 1\n[instance]\nkind = \"l1\"\nhorizon = 40\nd = 2\noutlier_frac = 0.1\n[engine]\nseeds = 2\n",
    ),
    (
        "sensitivity",
        "seed = 1\n[sensitivity]\nkind = \"submodular\"\nn = 4\nedges = 30\neps = 0.5\n",
    ),
    ("sensitivity", "seed = 1\n[sensitivity]\nkind = \"l1\"\nrows = 20\nd = 2\n"),
    (
        "lowerbound",
        "seed = 1\n[lowerbound]\nkind = \"mistake_tree\"\nhorizon = 8\nlearner = \"conversion\"\n",
    ),
    ("calibrate", "seed = 1\n[calibrate]\ntarget = \"c_M\"\ntrials = 10\n"),
];

fn collect_files(dir: &Path, base: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            collect_files(&path, base, out);
        } else if path.extension().is_some_and(|e| e == "csv") {
            let key = path.strip_prefix(base).unwrap().display().to_string();
            out.insert(key, fs::read(&path).unwrap());
        }
    }
}

fn run_cli(command: &str, config: &Path, out: &Path, jobs: usize) -> BTreeMap<String, Vec<u8>> {
    let status = Command::new(env!("CARGO_BIN_EXE_smallloss"))
        .arg(command)
        .arg("--jobs")
        .arg(jobs.to_string())
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .status()
        .unwrap();
    assert!(status.code().is_some_and(|c| c == 0 || c == 2), "{command} exited with {status}");
    let mut files = BTreeMap::new();
    collect_files(out, out, &mut files);
    files
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let mut diffs = Vec::new();
    let mut files = 0;
    for (k, (command, text)) in DETERMINISM_CONFIGS.iter().enumerate() {
        let config = tmp.path().join(format!("config-{k}.toml"));
        fs::write(&config, text).unwrap();
        let first = run_cli(command, &config, &tmp.path().join(format!("a-{k}")), 0);
        let second = run_cli(command, &config, &tmp.path().join(format!("b-{k}")), 1);
        files += first.len();
        if first.is_empty() || first != second {
            diffs.push(format!("{command}#{k}"));
        }
    }
    outcome(diffs.is_empty(), format!("{files} CSV files compared across 7 configs; differing: {diffs:?}"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("conjugate vs grid oracle", conjugate_correctness),
        ("controller identities", controller_identities),
        ("random-order prefix optima", prefix_optima),
        ("sparsifier quality", sparsifier_quality),
        ("sensitivity bounds", sensitivity_bounds),
        ("Lewis-weight properties", lewis_properties),
        ("small-loss scaling", small_loss_scaling),
        ("Rademacher floor", rademacher_floor),
        ("mistake-tree exactness", mistake_tree),
        ("ℓ1 oracle approximation", l1_oracle),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let o = check();
        failed += !o.pass as usize;
        println!(
            "{} {:>2} {name}: {} [{:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            k + 1,
            o.detail,
            started.elapsed().as_secs_f64()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
