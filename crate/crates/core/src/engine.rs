//! Batch-to-online conversion under a seeded random order.
//!
//! Each round plays the current decision, reveals the next datapoint, updates
//! the exact prefix optimum, picks ε for the next solve, and reruns the
//! offline oracle on the observed prefix.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::conjugate::PhiSpec;
use crate::controller::{default_a0, ControllerState};
use crate::error::{Error, Result};

/// Declared additive slack of an oracle, summed over the horizon.
pub const DEFAULT_ADDITIVE_SLACK: f64 = 1.0;
const LOSS_RANGE_TOL: f64 = 1e-12;

/// A multiset of datapoints `0..len()` and a loss in `[0, 1]`.
pub trait LossInstance {
    type Decision: Clone + PartialEq + std::fmt::Debug;

    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn loss(&self, theta: &Self::Decision, x: usize) -> f64;

    /// Lexicographically first decision.
    fn initial_decision(&self) -> Self::Decision;
}

/// Offline approximation algorithm with incremental prefix state.
pub trait OfflineOracle<I: LossInstance> {
    /// Forget every observed datapoint.
    fn reset(&mut self, inst: &I);

    fn observe(&mut self, inst: &I, x: usize);

    /// Exact minimum of the cumulative loss over the observed prefix.
    fn exact_opt(&self) -> f64;

    fn solve(&mut self, inst: &I, eps: f64, rng: &mut ChaCha20Rng) -> Result<I::Decision>;

    fn phi(&self) -> PhiSpec;

    fn eps_cap(&self) -> Option<f64>;

    fn additive_slack(&self) -> f64 {
        DEFAULT_ADDITIVE_SLACK
    }
}

/// First 8 bytes of `sha256(root ‖ label ‖ index)`, little-endian.
pub fn derive_seed(root: u64, label: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(label.as_bytes());
    h.update(index.to_le_bytes());
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("digest has 32 bytes"))
}

pub fn rng_for(root: u64, label: &str, index: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(derive_seed(root, label, index))
}

/// Fisher–Yates shuffle driven by ChaCha20 seeded with `seed`.
pub fn random_order_stream<T: Clone>(items: &[T], seed: u64) -> Result<Vec<T>> {
    if items.is_empty() {
        return Err(Error::domain("cannot order an empty multiset"));
    }
    let mut out = items.to_vec();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    for i in (1..out.len()).rev() {
        let j = rng.gen_range(0..=i);
        out.swap(i, j);
    }
    Ok(out)
}

fn order_for(len: usize, root: u64) -> Result<Vec<usize>> {
    let idx: Vec<usize> = (0..len).collect();
    random_order_stream(&idx, derive_seed(root, "order", 0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum EpsSchedule {
    /// `ε_t = min(ε_min(u_t), cap)`; `a0` defaults to `min(1, H_T^{-1/q})`.
    Adaptive { a0: Option<f64>, cap: Option<f64> },
    Fixed { eps: f64 },
}

impl Default for EpsSchedule {
    fn default() -> Self {
        EpsSchedule::Adaptive { a0: None, cap: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub t: usize,
    /// Index of the datapoint revealed this round.
    pub x: usize,
    pub loss: f64,
    pub opt_t: f64,
    /// ε used for the solve that produces the next decision.
    pub eps_t: f64,
    pub u_t: f64,
    pub cum_loss: f64,
    pub cum_regret: f64,
    /// Whether the next decision differs from this round's.
    pub changed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegretTrace {
    pub seed: u64,
    pub rows: Vec<Round>,
    pub cum_loss: f64,
    pub opt_final: f64,
    pub regret: f64,
    pub inconsistency: usize,
    /// `Σ_t ε_t·OPT_t/t`.
    pub penalty: f64,
    /// `Σ_t φ(ε_t)/t`.
    pub stability: f64,
    pub additive_slack: f64,
    #[serde(skip)]
    pub wall_time_secs: f64,
}

impl RegretTrace {
    pub fn horizon(&self) -> usize {
        self.rows.len()
    }

    /// `penalty + stability`, the bound without additive slack.
    pub fn decomposition_bound(&self) -> f64 {
        self.penalty + self.stability
    }
}

fn initial_state<I: LossInstance, O: OfflineOracle<I>>(
    inst: &I,
    oracle: &O,
    schedule: &EpsSchedule,
) -> Result<ControllerState> {
    let phi = oracle.phi();
    let (a0, cap) = match *schedule {
        EpsSchedule::Adaptive { a0, cap } => {
            let cap = match (cap, oracle.eps_cap()) {
                (Some(a), Some(b)) => Some(a.min(b)),
                (a, b) => a.or(b),
            };
            (a0.unwrap_or_else(|| default_a0(inst.len(), &phi)), cap)
        }
        EpsSchedule::Fixed { eps } => {
            if !(eps > 0.0) {
                return Err(Error::domain(format!("fixed ε must be positive, got {eps}")));
            }
            (default_a0(inst.len(), &phi), None)
        }
    };
    ControllerState::new(a0, cap)
}

fn checked_loss<I: LossInstance>(inst: &I, theta: &I::Decision, x: usize, t: usize) -> Result<f64> {
    let l = inst.loss(theta, x);
    if !(l >= -LOSS_RANGE_TOL && l <= 1.0 + LOSS_RANGE_TOL) {
        return Err(Error::Protocol {
            round: t,
            detail: format!("loss {l} outside [0, 1]"),
        });
    }
    Ok(l)
}

/// Runs the conversion on one random order derived from `seed`.
pub fn run<I: LossInstance, O: OfflineOracle<I>>(
    inst: &I,
    oracle: &mut O,
    schedule: &EpsSchedule,
    seed: u64,
) -> Result<RegretTrace> {
    let started = Instant::now();
    let horizon = inst.len();
    let order = order_for(horizon, seed)?;
    let phi = oracle.phi();
    let mut state = initial_state(inst, oracle, schedule)?;
    oracle.reset(inst);
    let mut theta = inst.initial_decision();
    let mut rows = Vec::with_capacity(horizon);
    let (mut cum_loss, mut penalty, mut stability, mut inconsistency) = (0.0, 0.0, 0.0, 0);
    for (k, &x) in order.iter().enumerate() {
        let t = k + 1;
        let loss = checked_loss(inst, &theta, x, t)?;
        cum_loss += loss;
        oracle.observe(inst, x);
        let opt_t = oracle.exact_opt();
        let (next_state, adaptive_eps) = state.step(opt_t, &phi).map_err(|e| e.at_round(t))?;
        state = next_state;
        let eps = match *schedule {
            EpsSchedule::Fixed { eps } => eps,
            EpsSchedule::Adaptive { .. } => adaptive_eps,
        };
        let tf = t as f64;
        penalty += eps * opt_t / tf;
        stability += phi.eval_clamped(eps) / tf;
        let mut changed = false;
        if t < horizon {
            let mut rng = rng_for(seed, "solve", t as u64);
            let next = oracle.solve(inst, eps, &mut rng).map_err(|e| e.at_round(t))?;
            changed = next != theta;
            inconsistency += changed as usize;
            theta = next;
        }
        rows.push(Round {
            t,
            x,
            loss,
            opt_t,
            eps_t: eps,
            u_t: state.u,
            cum_loss,
            cum_regret: cum_loss - opt_t,
            changed,
        });
    }
    let opt_final = rows.last().map_or(0.0, |r| r.opt_t);
    Ok(RegretTrace {
        seed,
        cum_loss,
        opt_final,
        regret: cum_loss - opt_final,
        inconsistency,
        penalty,
        stability,
        additive_slack: oracle.additive_slack(),
        rows,
        wall_time_secs: started.elapsed().as_secs_f64(),
    })
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrefixOptimaAudit {
    /// Monte-Carlo mean of `Σ_t OPT_t/t`.
    pub mc_mean: f64,
    pub std_err: f64,
    pub opt_final: f64,
}

impl PrefixOptimaAudit {
    pub fn holds(&self) -> bool {
        self.mc_mean <= self.opt_final + 3.0 * self.std_err + 1e-12
    }
}

/// Estimates `E[Σ_t OPT_t/t]` over `num_seeds` random orders.
pub fn audit_prefix_optima<I: LossInstance, O: OfflineOracle<I>>(
    inst: &I,
    oracle: &mut O,
    num_seeds: usize,
    root: u64,
) -> Result<PrefixOptimaAudit> {
    if num_seeds == 0 {
        return Err(Error::domain("need at least one seed"));
    }
    let mut sums = Vec::with_capacity(num_seeds);
    let mut opt_final = 0.0;
    for s in 0..num_seeds {
        let order = order_for(inst.len(), derive_seed(root, "prefix", s as u64))?;
        oracle.reset(inst);
        let mut acc = 0.0;
        for (k, &x) in order.iter().enumerate() {
            oracle.observe(inst, x);
            acc += oracle.exact_opt() / (k + 1) as f64;
        }
        opt_final = oracle.exact_opt();
        sums.push(acc);
    }
    let (mc_mean, std_err) = mean_se(&sums);
    Ok(PrefixOptimaAudit {
        mc_mean,
        std_err,
        opt_final,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingleStepAudit {
    /// Monte-Carlo mean of `ℓ(θ_{t+1}, x_{t+1})`.
    pub mc_loss: f64,
    pub loss_se: f64,
    /// Monte-Carlo mean of `(1+ε)/t·OPT_t + φ(ε)/t`.
    pub bound: f64,
    pub bound_se: f64,
    /// Per-round share of the declared slack, `slack/T`.
    pub slack: f64,
}

impl SingleStepAudit {
    pub fn holds(&self) -> bool {
        self.mc_loss <= self.bound + 3.0 * (self.loss_se + self.bound_se) + self.slack
    }

    pub fn holds_without_slack(&self) -> bool {
        self.mc_loss <= self.bound + 3.0 * (self.loss_se + self.bound_se)
    }
}

/// Fixed-ε check of the one-round bound at prefix length `t`.
pub fn audit_single_step<I: LossInstance, O: OfflineOracle<I>>(
    inst: &I,
    oracle: &mut O,
    t: usize,
    eps: f64,
    num_seeds: usize,
    root: u64,
) -> Result<SingleStepAudit> {
    let horizon = inst.len();
    if t == 0 || t >= horizon {
        return Err(Error::domain(format!("need 1 ≤ t < T = {horizon}, got {t}")));
    }
    if num_seeds == 0 {
        return Err(Error::domain("need at least one seed"));
    }
    let phi_t = oracle.phi().eval_clamped(eps) / t as f64;
    let mut losses = Vec::with_capacity(num_seeds);
    let mut bounds = Vec::with_capacity(num_seeds);
    for s in 0..num_seeds {
        let order = order_for(horizon, derive_seed(root, "single-step", s as u64))?;
        oracle.reset(inst);
        for &x in &order[..t] {
            oracle.observe(inst, x);
        }
        let opt_t = oracle.exact_opt();
        let mut rng = rng_for(root, "single-step-solve", s as u64);
        let theta = oracle.solve(inst, eps, &mut rng)?;
        losses.push(checked_loss(inst, &theta, order[t], t + 1)?);
        bounds.push((1.0 + eps) * opt_t / t as f64 + phi_t);
    }
    let (mc_loss, loss_se) = mean_se(&losses);
    let (bound, bound_se) = mean_se(&bounds);
    Ok(SingleStepAudit {
        mc_loss,
        loss_se,
        bound,
        bound_se,
        slack: oracle.additive_slack() / horizon as f64,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionAudit {
    pub mean_regret: f64,
    pub mean_bound: f64,
    pub std_err: f64,
    /// First-round loss (at most 1) plus the oracle's declared slack.
    pub c_add: f64,
}

impl DecompositionAudit {
    pub fn holds(&self) -> bool {
        self.mean_regret <= self.mean_bound + self.c_add + 3.0 * self.std_err
    }

    pub fn holds_without_slack(&self) -> bool {
        self.mean_regret <= self.mean_bound + 3.0 * self.std_err
    }
}

/// Seed-averaged regret against `Σ ε_t·OPT_t/t + Σ φ(ε_t)/t`.
pub fn audit_decomposition(traces: &[RegretTrace]) -> Result<DecompositionAudit> {
    if traces.is_empty() {
        return Err(Error::domain("need at least one trace"));
    }
    let gaps: Vec<f64> = traces.iter().map(|t| t.regret - t.decomposition_bound()).collect();
    let (_, std_err) = mean_se(&gaps);
    let n = traces.len() as f64;
    Ok(DecompositionAudit {
        mean_regret: traces.iter().map(|t| t.regret).sum::<f64>() / n,
        mean_bound: traces.iter().map(|t| t.decomposition_bound()).sum::<f64>() / n,
        std_err,
        c_add: 1.0 + traces[0].additive_slack,
    })
}

pub const CSV_HEADER: &str = "t,loss,opt_t,eps_t,u_t,cum_loss,cum_regret,changed";

/// One row per round, floats with 17 significant digits.
pub fn write_trace_csv(rows: &[Round], mut out: impl Write) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
            r.t, r.loss, r.opt_t, r.eps_t, r.u_t, r.cum_loss, r.cum_regret, r.changed as u8
        )?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub regret: f64,
    #[serde(rename = "opt_T")]
    pub opt_final: f64,
    pub inconsistency: usize,
    pub config_digest: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub model: Option<String>,
}

impl RunSummary {
    pub fn of(trace: &RegretTrace, config_digest: &str) -> Self {
        Self {
            seed: trace.seed,
            horizon: trace.horizon(),
            regret: trace.regret,
            opt_final: trace.opt_final,
            inconsistency: trace.inconsistency,
            config_digest: config_digest.to_string(),
            model: None,
        }
    }
}

/// Hex sha256 of a canonical byte string (e.g. compact config JSON).
pub fn config_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Datapoints are values in `[0,1]`; decisions are indices into a fixed
    /// menu of thresholds; loss is `|menu[θ] − x|`.
    struct Menu {
        xs: Vec<f64>,
        menu: Vec<f64>,
    }

    struct ExactMenu {
        cum: Vec<f64>,
    }

    impl LossInstance for Menu {
        type Decision = usize;
        fn len(&self) -> usize {
            self.xs.len()
        }
        fn loss(&self, th: &usize, x: usize) -> f64 {
            (self.menu[*th] - self.xs[x]).abs()
        }
        fn initial_decision(&self) -> usize {
            0
        }
    }

    impl OfflineOracle<Menu> for ExactMenu {
        fn reset(&mut self, inst: &Menu) {
            self.cum = vec![0.0; inst.menu.len()];
        }
        fn observe(&mut self, inst: &Menu, x: usize) {
            for (k, c) in self.cum.iter_mut().enumerate() {
                *c += inst.loss(&k, x);
            }
        }
        fn exact_opt(&self) -> f64 {
            self.cum.iter().copied().fold(f64::INFINITY, f64::min)
        }
        fn solve(&mut self, _: &Menu, _: f64, _: &mut ChaCha20Rng) -> Result<usize> {
            let best = self.exact_opt();
            Ok(self.cum.iter().position(|&c| c == best).unwrap())
        }
        fn phi(&self) -> PhiSpec {
            PhiSpec::power_log(1.0, 1.0, 0.0).unwrap()
        }
        fn eps_cap(&self) -> Option<f64> {
            None
        }
    }

    fn menu(xs: Vec<f64>) -> (Menu, ExactMenu) {
        (
            Menu {
                xs,
                menu: vec![0.0, 0.5, 1.0],
            },
            ExactMenu { cum: vec![] },
        )
    }

    #[test]
    fn stream_examples() {
        assert_eq!(random_order_stream(&[7], 3).unwrap(), vec![7]);
        let a = random_order_stream(&[1, 2, 3, 4, 5], 11).unwrap();
        assert_eq!(a, random_order_stream(&[1, 2, 3, 4, 5], 11).unwrap());
        assert!(random_order_stream::<u8>(&[], 0).is_err());
    }

    #[test]
    fn derive_seed_separates_labels() {
        assert_ne!(derive_seed(1, "order", 0), derive_seed(1, "solve", 0));
        assert_ne!(derive_seed(1, "solve", 0), derive_seed(1, "solve", 1));
        assert_eq!(derive_seed(5, "x", 2), derive_seed(5, "x", 2));
    }

    #[test]
    fn zero_loss_run() {
        let (inst, mut or) = menu(vec![0.0; 16]);
        let trace = run(&inst, &mut or, &EpsSchedule::default(), 4).unwrap();
        assert_eq!(trace.regret, 0.0);
        assert_eq!(trace.inconsistency, 0);
        let phi = or.phi();
        let a0 = default_a0(16, &phi);
        for r in &trace.rows {
            let h = crate::controller::harmonic(r.t);
            let want = crate::conjugate::eps_min(&phi, a0 / h).unwrap();
            assert!((r.eps_t - want).abs() < 1e-12);
        }
    }

    #[test]
    fn single_round() {
        let (inst, mut or) = menu(vec![0.8]);
        let tr = run(&inst, &mut or, &EpsSchedule::Fixed { eps: 0.5 }, 0).unwrap();
        assert!((tr.regret - (0.8 - 0.2)).abs() < 1e-15);
    }

    #[test]
    fn trace_is_consistent() {
        let xs: Vec<f64> = (0..40).map(|i| ((i * 7) % 11) as f64 / 10.0).collect();
        let (inst, mut or) = menu(xs);
        let tr = run(&inst, &mut or, &EpsSchedule::default(), 9).unwrap();
        let mut prev = 0.0;
        let mut cum = 0.0;
        for r in &tr.rows {
            assert!(r.opt_t >= prev);
            prev = r.opt_t;
            cum += r.loss;
            assert_eq!(cum, r.cum_loss);
        }
        assert_eq!(tr.regret, tr.cum_loss - tr.opt_final);
        assert_eq!(tr.inconsistency, tr.rows.iter().filter(|r| r.changed).count());
    }

    #[test]
    fn csv_is_byte_identical() {
        let xs: Vec<f64> = (0..30).map(|i| (i % 4) as f64 / 3.0).collect();
        let (inst, mut or) = menu(xs);
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_trace_csv(&run(&inst, &mut or, &EpsSchedule::default(), 2).unwrap().rows, &mut a).unwrap();
        write_trace_csv(&run(&inst, &mut or, &EpsSchedule::default(), 2).unwrap().rows, &mut b).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert!(text.starts_with(CSV_HEADER));
        assert_eq!(text.lines().count(), 31);
    }

    #[test]
    fn prefix_audit_examples() {
        let (inst, mut or) = menu(vec![0.0, 0.0, 0.0]);
        let a = audit_prefix_optima(&inst, &mut or, 10, 0).unwrap();
        assert_eq!((a.mc_mean, a.opt_final), (0.0, 0.0));
        let (inst, mut or) = menu(vec![0.3]);
        let a = audit_prefix_optima(&inst, &mut or, 5, 0).unwrap();
        assert_eq!(a.mc_mean, a.opt_final);
        assert_eq!(a.std_err, 0.0);
    }

    #[test]
    fn single_step_zero_loss() {
        let (inst, mut or) = menu(vec![0.0; 10]);
        let a = audit_single_step(&inst, &mut or, 4, 0.5, 20, 1).unwrap();
        assert_eq!(a.mc_loss, 0.0);
        assert!((a.bound - 2.0 / 4.0).abs() < 1e-15);
        assert!(a.holds());
    }

    #[test]
    fn summary_json_fields() {
        let (inst, mut or) = menu(vec![0.1, 0.9, 0.4]);
        let tr = run(&inst, &mut or, &EpsSchedule::default(), 1).unwrap();
        let js = serde_json::to_value(RunSummary::of(&tr, "abc")).unwrap();
        for k in ["seed", "T", "regret", "opt_T", "inconsistency", "config_digest"] {
            assert!(js.get(k).is_some(), "{k}");
        }
        assert!(js.get("model").is_none());
    }
}
