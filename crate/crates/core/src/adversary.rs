//! Lower-bound constructions: the Rademacher instance and the adaptive
//! mistake-tree adversary.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::conjugate::PhiSpec;
use crate::controller::{default_a0, ControllerState};
use crate::engine::{derive_seed, Round};
use crate::error::{Error, Result};
use crate::instances::{indicator_loss, SubmodularInstance};
use crate::sparsify::{submod_phi, SparsifierOracle, DEFAULT_C_M};
use crate::submodular::{brute_min_constrained, mask_of, SetFunction, Subset, MAX_ENUM_N};

#[derive(Clone, Debug)]
pub struct RademacherInstance {
    pub instance: SubmodularInstance,
    pub sigma: Vec<i8>,
    /// `½(T − Σ_i |Σ_{t: i(t)=i} σ_t|)`.
    pub opt_formula: f64,
}

/// Element (0-based) charged in round `t` (1-based): `i(t) = (t mod n) + 1`.
pub fn round_element(t: usize, n: usize) -> usize {
    t % n
}

/// Round `t` charges `½(1+σ_t)` if `i(t) ∈ S`, else `½(1−σ_t)`.
pub fn rademacher_from_signs(n: usize, sigma: &[i8]) -> Result<RademacherInstance> {
    if n == 0 || n > MAX_ENUM_N {
        return Err(Error::capacity(format!("ground set size {n} not in 1..={MAX_ENUM_N}")));
    }
    if n > sigma.len() {
        return Err(Error::domain(format!("need n ≤ T, got n = {n}, T = {}", sigma.len())));
    }
    if sigma.iter().any(|&s| s != 1 && s != -1) {
        return Err(Error::domain("signs must be ±1"));
    }
    let mut funcs = Vec::with_capacity(2 * n);
    for i in 0..n {
        funcs.push(indicator_loss(n, i, false)?);
        funcs.push(indicator_loss(n, i, true)?);
    }
    let mut sums = vec![0i64; n];
    let data: Vec<usize> = sigma
        .iter()
        .enumerate()
        .map(|(k, &s)| {
            let i = round_element(k + 1, n);
            sums[i] += s as i64;
            2 * i + (s == 1) as usize
        })
        .collect();
    let imbalance: i64 = sums.iter().map(|s| s.abs()).sum();
    Ok(RademacherInstance {
        instance: SubmodularInstance::from_parts(n, funcs, data)?,
        sigma: sigma.to_vec(),
        opt_formula: 0.5 * (sigma.len() as f64 - imbalance as f64),
    })
}

/// Draws `σ_t` i.i.d. uniform on `{−1, +1}` from the stream `(seed, "sigma")`.
pub fn rademacher_instance(n: usize, horizon: usize, seed: u64) -> Result<RademacherInstance> {
    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(seed, "sigma", 0));
    let sigma: Vec<i8> = (0..horizon).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect();
    rademacher_from_signs(n, &sigma)
}

/// Bits of the mistake-tree ground set: `u0`, `u1`, then `v_1, …, v_T`.
pub const U0: usize = 0;
pub const U1: usize = 1;

pub fn v_bit(t: usize) -> usize {
    t + 1
}

/// Largest horizon whose ground set fits in a bitmask.
pub const MAX_TREE_T: usize = 62;
/// Largest horizon verified by enumeration.
pub const MAX_TREE_ENUM_T: usize = 18;

/// `f^0_t = 𝟙[v_t ∈ S, u1 ∉ S]`, `f^1_t = 𝟙[u0 ∈ S, v_t ∉ S]`.
pub fn tree_loss(t: usize, y: u8) -> Result<SetFunction> {
    let v = v_bit(t);
    match y {
        0 => SetFunction::directed_cut(mask_of(&[v, U1]), v, U1),
        1 => SetFunction::directed_cut(mask_of(&[U0, v]), U0, v),
        _ => Err(Error::domain("label must be 0 or 1")),
    }
}

pub fn in_theta(s: Subset) -> bool {
    s >> U0 & 1 == 1 && s >> U1 & 1 == 0
}

/// A learner facing an adaptive adversary: plays `S_t`, then sees `ℓ_t`.
pub trait AdaptiveLearner {
    fn play(&mut self, t: usize) -> Result<Subset>;
    fn feedback(&mut self, t: usize, loss: &SetFunction) -> Result<()>;

    /// `(ε, u)` the learner will use next, if it runs a controller.
    fn controller(&self) -> Option<(f64, f64)> {
        None
    }
}

/// Always predicts `pred` on the fresh element.
#[derive(Clone, Copy, Debug)]
pub struct ConstantLearner {
    pub pred: bool,
}

impl AdaptiveLearner for ConstantLearner {
    fn play(&mut self, t: usize) -> Result<Subset> {
        let mut s = 1 << U0;
        if self.pred {
            s |= 1 << v_bit(t);
        }
        Ok(s)
    }

    fn feedback(&mut self, _: usize, _: &SetFunction) -> Result<()> {
        Ok(())
    }
}

/// The batch-to-online learner over `Θ`: sparsify the observed losses, take
/// the constrained minimizer, and set ε with the adaptive controller.
#[derive(Clone, Debug)]
pub struct ConversionLearner {
    oracle: SparsifierOracle,
    observed: Vec<SetFunction>,
    state: ControllerState,
    phi: PhiSpec,
    eps: f64,
    n: usize,
    seed: u64,
}

impl ConversionLearner {
    pub fn new(horizon: usize, seed: u64) -> Result<Self> {
        if horizon == 0 || horizon > MAX_TREE_ENUM_T {
            return Err(Error::capacity(format!("horizon {horizon} not in 1..={MAX_TREE_ENUM_T}")));
        }
        let n = horizon + 2;
        let h = horizon.max(2);
        let phi = submod_phi(n, h, DEFAULT_C_M);
        let a0 = default_a0(horizon, &phi);
        Ok(Self {
            oracle: SparsifierOracle::new(n, h, DEFAULT_C_M)?,
            observed: Vec::new(),
            state: ControllerState::new(a0, Some(1.0))?,
            phi,
            eps: 1.0,
            n,
            seed,
        })
    }

    /// Exact prefix optimum over `Θ`.
    fn prefix_opt(&self) -> Result<f64> {
        let f = |s: Subset| self.observed.iter().map(|l| l.eval(s)).sum::<f64>();
        Ok(brute_min_constrained(f, self.n, 1 << U0, 1 << U1)?.1)
    }
}

impl AdaptiveLearner for ConversionLearner {
    fn play(&mut self, t: usize) -> Result<Subset> {
        if self.observed.is_empty() {
            return Ok(1 << U0);
        }
        let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(self.seed, "tree-solve", t as u64));
        self.oracle.solve_within(self.eps, 1 << U0, 1 << U1, &mut rng)
    }

    fn feedback(&mut self, _: usize, loss: &SetFunction) -> Result<()> {
        self.observed.push(loss.clone());
        self.oracle.observe(&std::sync::Arc::new(loss.normalized().0));
        let opt = self.prefix_opt()?;
        let (next, eps) = self.state.step(opt, &self.phi)?;
        self.state = next;
        self.eps = eps;
        Ok(())
    }

    fn controller(&self) -> Option<(f64, f64)> {
        Some((self.eps, self.state.u))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeRound {
    pub t: usize,
    pub played: Subset,
    pub prediction: u8,
    pub label: u8,
    pub loss: f64,
    /// Controller state after the feedback, zero for learners without one.
    pub eps_t: f64,
    pub u_t: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MistakeTreeTrace {
    pub rounds: Vec<TreeRound>,
    pub total_loss: f64,
    /// `{u0} ∪ {v_t : y_t = 1}`.
    pub witness: Subset,
    pub witness_loss: f64,
    /// Exact `min_{S∈Θ} Σ_t ℓ_t(S)`, for `T ≤ 18`.
    pub enumerated_opt: Option<f64>,
}

impl MistakeTreeTrace {
    /// Engine-format rows; every prefix optimum is zero (the witness
    /// restricted to the prefix attains it).
    pub fn rows(&self) -> Vec<Round> {
        let mut cum = 0.0;
        self.rounds
            .iter()
            .enumerate()
            .map(|(k, r)| {
                cum += r.loss;
                Round {
                    t: r.t,
                    x: k,
                    loss: r.loss,
                    opt_t: 0.0,
                    eps_t: r.eps_t,
                    u_t: r.u_t,
                    cum_loss: cum,
                    cum_regret: cum,
                    changed: self.rounds.get(k + 1).is_some_and(|n| n.played != r.played),
                }
            })
            .collect()
    }
}

/// Runs the adaptive adversary: `y_t = 1 − 𝟙[v_t ∈ S_t]`, charge `f^{y_t}_t`.
pub fn mistake_tree_run(learner: &mut dyn AdaptiveLearner, horizon: usize) -> Result<MistakeTreeTrace> {
    if horizon == 0 || horizon > MAX_TREE_T {
        return Err(Error::capacity(format!("horizon {horizon} not in 1..={MAX_TREE_T}")));
    }
    let mut rounds = Vec::with_capacity(horizon);
    let mut losses = Vec::with_capacity(horizon);
    let mut witness: Subset = 1 << U0;
    for t in 1..=horizon {
        let s = learner.play(t).map_err(|e| e.at_round(t))?;
        if !in_theta(s) || s >> (horizon + 2) != 0 {
            return Err(Error::Protocol {
                round: t,
                detail: format!("played {s:#b} outside Θ"),
            });
        }
        let prediction = (s >> v_bit(t) & 1) as u8;
        let label = 1 - prediction;
        let f = tree_loss(t, label)?;
        let loss = f.eval(s);
        if label == 1 {
            witness |= 1 << v_bit(t);
        }
        learner.feedback(t, &f).map_err(|e| e.at_round(t))?;
        let (eps_t, u_t) = learner.controller().unwrap_or((0.0, 0.0));
        rounds.push(TreeRound {
            t,
            played: s,
            prediction,
            label,
            loss,
            eps_t,
            u_t,
        });
        losses.push(f);
    }
    let total = |s: Subset| losses.iter().map(|f| f.eval(s)).sum::<f64>();
    let enumerated_opt = if horizon <= MAX_TREE_ENUM_T {
        Some(brute_min_constrained(total, horizon + 2, 1 << U0, 1 << U1)?.1)
    } else {
        None
    };
    Ok(MistakeTreeTrace {
        total_loss: rounds.iter().map(|r| r.loss).sum(),
        witness_loss: total(witness),
        witness,
        rounds,
        enumerated_opt,
    })
}
