//! Importance-sampling cut sparsifier for submodular hypergraphs with weight
//! perturbation, its sensitivity audit, and the resulting offline minimizer.
//!
//! Scores are computed per *distinct* splitting function: edges sharing a
//! function have identical `g^e_{u→v}` tables and therefore identical scores,
//! so a hypergraph with many repeated losses is scored in time proportional to
//! the number of distinct functions.

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::conjugate::PhiSpec;
use crate::engine::derive_seed;
use crate::error::{Error, Result};
use crate::submodular::{brute_min_constrained, full_mask, SetFunction, Subset, SubmodularHypergraph, MAX_ENUM_N};

/// Calibrated constant in `M = c_M·ε^{-2}·(n + ln(1/δ))` (see `calibrate`).
pub const DEFAULT_C_M: f64 = 0.25;

/// `M = c_M·ε^{-2}·(n + ln(1/δ))`.
pub fn oversampling(c_m: f64, n: usize, eps: f64, delta: f64) -> f64 {
    c_m * (n as f64 + (1.0 / delta).ln()) / (eps * eps)
}

/// `min(1, M·s)`.
#[inline]
pub fn clip_prob(m: f64, s: f64) -> f64 {
    (m * s).min(1.0)
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::precondition(format!("ε must lie in (0, 1], got {eps}")));
    }
    Ok(())
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::domain(format!("δ must lie in (0, 1), got {delta}")));
    }
    Ok(())
}

#[derive(Clone, Debug)]
struct Group {
    func: Arc<SetFunction>,
    table: Vec<f64>,
    full: f64,
    count: usize,
}

/// Incrementally maintained edge multiset, grouped by splitting function.
#[derive(Clone, Debug)]
pub struct ScoreAccumulator {
    n: usize,
    groups: Vec<Group>,
    by_ptr: HashMap<usize, usize>,
    by_content: HashMap<(Subset, Vec<u64>), usize>,
    edge_group: Vec<usize>,
}

/// Per-group `(ρ, ρ')`.
#[derive(Clone, Copy, Debug, PartialEq)]
struct GroupScore {
    rho: f64,
    rho_prime: f64,
}

impl GroupScore {
    fn s(&self) -> f64 {
        self.rho + self.rho_prime
    }
}

impl ScoreAccumulator {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || n > MAX_ENUM_N {
            return Err(Error::capacity(format!("ground set size {n} not in 1..={MAX_ENUM_N}")));
        }
        Ok(Self {
            n,
            groups: Vec::new(),
            by_ptr: HashMap::new(),
            by_content: HashMap::new(),
            edge_group: Vec::new(),
        })
    }

    /// Scores use unit multiplicity per edge; edge weights are ignored.
    pub fn from_hypergraph(h: &SubmodularHypergraph) -> Result<Self> {
        let mut acc = Self::new(h.n())?;
        for e in h.edges() {
            acc.push(&e.func);
        }
        Ok(acc)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.edge_group.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edge_group.is_empty()
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    /// Adds an edge with a normalized splitting function; returns its group.
    pub fn push(&mut self, func: &Arc<SetFunction>) -> usize {
        let ptr = Arc::as_ptr(func) as usize;
        let gid = match self.by_ptr.get(&ptr) {
            Some(&g) => g,
            None => {
                let key = (func.support(), func.values().iter().map(|v| v.to_bits()).collect());
                let g = match self.by_content.get(&key) {
                    Some(&g) => g,
                    None => {
                        let g = self.groups.len();
                        self.groups.push(Group {
                            func: func.clone(),
                            table: func.min_cut_table(self.n),
                            full: func.at_support(),
                            count: 0,
                        });
                        self.by_content.insert(key, g);
                        g
                    }
                };
                // holding the Arc in the group keeps the pointer key valid
                if Arc::ptr_eq(&self.groups[g].func, func) {
                    self.by_ptr.insert(ptr, g);
                }
                g
            }
        };
        self.groups[gid].count += 1;
        self.edge_group.push(gid);
        gid
    }

    /// Scores of every group, optionally with one edge of group `removed`
    /// deleted. Denominators are rebuilt from the group counts.
    fn group_scores(&self, removed: Option<usize>) -> Vec<GroupScore> {
        let nn = self.n * self.n;
        let count = |g: usize| self.groups[g].count - (removed == Some(g)) as usize;
        let mut denom = vec![0.0; nn];
        let mut full_total = 0.0;
        for (g, grp) in self.groups.iter().enumerate() {
            let c = count(g) as f64;
            if c == 0.0 {
                continue;
            }
            for (d, t) in denom.iter_mut().zip(&grp.table) {
                *d += c * t;
            }
            full_total += c * grp.full;
        }
        self.groups
            .iter()
            .map(|grp| {
                let rho = grp
                    .table
                    .iter()
                    .zip(&denom)
                    .filter(|(t, d)| **t > 0.0 && **d > 0.0)
                    .map(|(t, d)| t / d)
                    .sum();
                let rho_prime = if full_total > 0.0 { grp.full / full_total } else { 0.0 };
                GroupScore { rho, rho_prime }
            })
            .collect()
    }

    /// Per-edge scores with `M = c_M·ε^{-2}·(n + ln(1/δ))`.
    pub fn scores(&self, eps: f64, delta: f64, c_m: f64) -> Result<ImportanceScores> {
        if !(eps > 0.0) {
            return Err(Error::domain(format!("ε must be positive, got {eps}")));
        }
        check_delta(delta)?;
        let m = oversampling(c_m, self.n, eps, delta);
        let gs = self.group_scores(None);
        let mut out = ImportanceScores {
            rho: Vec::with_capacity(self.len()),
            rho_prime: Vec::with_capacity(self.len()),
            s: Vec::with_capacity(self.len()),
            p: Vec::with_capacity(self.len()),
            m,
        };
        for &g in &self.edge_group {
            let sc = gs[g];
            out.rho.push(sc.rho);
            out.rho_prime.push(sc.rho_prime);
            out.s.push(sc.s());
            out.p.push(clip_prob(m, sc.s()));
        }
        Ok(out)
    }

    /// Samples a sparsifier and returns the minimizer of its cut function
    /// over subsets containing `include` and avoiding `exclude`.
    fn solve(&self, eps: f64, delta: f64, c_m: f64, within: (Subset, Subset), rng: &mut impl Rng) -> Result<Subset> {
        self.coupled_solve(eps, delta, c_m, within, None, rng.gen())
    }

    /// Each group draws its edges from its own stream derived from `base`, so
    /// deleting one edge of group `removed` only drops that group's last draw
    /// while every other group sees the same uniforms.
    fn coupled_solve(
        &self,
        eps: f64,
        delta: f64,
        c_m: f64,
        within: (Subset, Subset),
        removed: Option<usize>,
        base: u64,
    ) -> Result<Subset> {
        check_eps(eps)?;
        check_delta(delta)?;
        let m = oversampling(c_m, self.n, eps, delta);
        let probs: Vec<f64> = self.group_scores(removed).iter().map(|g| clip_prob(m, g.s())).collect();
        let mut active: Vec<(f64, &SetFunction)> = Vec::new();
        for (g, grp) in self.groups.iter().enumerate() {
            let count = grp.count - (removed == Some(g)) as usize;
            if count == 0 || probs[g] == 0.0 {
                continue;
            }
            let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(base, "group", g as u64));
            let w: f64 = (0..count).filter_map(|_| draw_edge(probs[g], eps, &mut rng)).sum();
            if w > 0.0 {
                active.push((w, grp.func.as_ref()));
            }
        }
        let cut = |s| active.iter().map(|(wg, f)| wg * f.eval(s)).sum();
        let (s, _) = brute_min_constrained(cut, self.n, within.0, within.1)?;
        Ok(s)
    }

    /// Coupling estimate of the average sensitivity: the fraction of shared
    /// seeds on which deleting a uniformly random edge changes the output,
    /// which upper-bounds the TV distance in expectation.
    fn coupled_sensitivity(&self, eps: f64, delta: f64, c_m: f64, trials: usize, seed: u64) -> Result<f64> {
        if self.len() < 2 {
            return Err(Error::domain("sensitivity needs at least two edges"));
        }
        if trials == 0 {
            return Err(Error::domain("need at least one trial"));
        }
        let mut changed = vec![0usize; self.groups.len()];
        for k in 0..trials {
            let base = derive_seed(seed, "coupled", k as u64);
            let full = self.coupled_solve(eps, delta, c_m, (0, 0), None, base)?;
            for (g, c) in changed.iter_mut().enumerate() {
                if self.coupled_solve(eps, delta, c_m, (0, 0), Some(g), base)? != full {
                    *c += 1;
                }
            }
        }
        let weighted: f64 = changed
            .iter()
            .zip(&self.groups)
            .map(|(&c, grp)| grp.count as f64 * c as f64)
            .sum();
        Ok(weighted / (trials as f64 * self.len() as f64))
    }
}

/// One keep decision followed, if kept, by the perturbed weight `1/p̃`.
#[inline]
fn draw_edge(p: f64, eps: f64, rng: &mut impl Rng) -> Option<f64> {
    let u: f64 = rng.gen();
    if p > 0.0 && u < p {
        let v: f64 = rng.gen();
        Some(1.0 / (p * (1.0 + 0.5 * eps * v)))
    } else {
        None
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceScores {
    pub rho: Vec<f64>,
    pub rho_prime: Vec<f64>,
    pub s: Vec<f64>,
    pub p: Vec<f64>,
    pub m: f64,
}

/// Scores of every edge of `h`, with zero denominators giving zero ratios.
pub fn importance_scores(h: &SubmodularHypergraph, eps: f64, delta: f64, c_m: f64) -> Result<ImportanceScores> {
    ScoreAccumulator::from_hypergraph(h)?.scores(eps, delta, c_m)
}

/// Kept edges with their perturbed weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsifierOutput {
    pub kept: Vec<usize>,
    pub weights: Vec<f64>,
    /// Unperturbed `p_e` of each kept edge.
    pub probs: Vec<f64>,
    pub eps: f64,
    pub m: f64,
    pub seed: u64,
}

impl SparsifierOutput {
    /// `Σ_{e∈E'} w'_e·g_e(S∩e)`.
    pub fn cut(&self, h: &SubmodularHypergraph, s: Subset) -> f64 {
        self.kept
            .iter()
            .zip(&self.weights)
            .map(|(&e, w)| w * h.edges()[e].func.eval(s))
            .sum()
    }

    /// Same keep decisions with weights `1/p_e`.
    pub fn unperturbed_cut(&self, h: &SubmodularHypergraph, s: Subset) -> f64 {
        self.kept
            .iter()
            .zip(&self.probs)
            .map(|(&e, p)| h.edges()[e].func.eval(s) / p)
            .sum()
    }
}

pub fn sample_sparsifier(
    h: &SubmodularHypergraph,
    scores: &ImportanceScores,
    eps: f64,
    seed: u64,
) -> Result<SparsifierOutput> {
    check_eps(eps)?;
    if scores.p.len() != h.len() {
        return Err(Error::SizeMismatch {
            expected: h.len(),
            got: scores.p.len(),
        });
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out = SparsifierOutput {
        kept: Vec::new(),
        weights: Vec::new(),
        probs: Vec::new(),
        eps,
        m: scores.m,
        seed,
    };
    for (e, &p) in scores.p.iter().enumerate() {
        if let Some(w) = draw_edge(p, eps, &mut rng) {
            out.kept.push(e);
            out.weights.push(w);
            out.probs.push(p);
        }
    }
    Ok(out)
}

/// Whether `(1−ε)·cut_H(S) ≤ approx(S) ≤ (1+ε)·cut_H(S)` for all `S ⊆ V`.
pub fn satisfies_sandwich(h: &SubmodularHypergraph, approx: impl Fn(Subset) -> f64, eps: f64) -> bool {
    let n = h.n();
    (0..=full_mask(n)).all(|s| {
        let exact = crate::submodular::cut_value(h, s);
        let a = approx(s);
        let tol = 1e-12 * (1.0 + exact);
        a >= (1.0 - eps) * exact - tol && a <= (1.0 + eps) * exact + tol
    })
}

/// Builds the prefix hypergraph (every loss as an edge on `V`), sparsifies it
/// with `δ = 1/horizon` and returns the minimizer of the sparsified cut.
pub fn offline_submod_solve(
    losses: &[SetFunction],
    n: usize,
    eps: f64,
    horizon: usize,
    c_m: f64,
    seed: u64,
) -> Result<Subset> {
    if losses.is_empty() {
        return Err(Error::domain("prefix must contain at least one loss"));
    }
    let mut acc = ScoreAccumulator::new(n)?;
    for l in losses {
        let (norm, _) = l.normalized();
        acc.push(&Arc::new(norm));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    acc.solve(eps, horizon_delta(horizon)?, c_m, (0, 0), &mut rng)
}

/// `δ = 1/T`, kept strictly below one.
pub fn horizon_delta(horizon: usize) -> Result<f64> {
    if horizon < 2 {
        return Err(Error::domain("horizon must be at least 2 for δ = 1/T < 1"));
    }
    Ok(1.0 / horizon as f64)
}

/// Incremental form of [`offline_submod_solve`] for the online loop.
#[derive(Clone, Debug)]
pub struct SparsifierOracle {
    acc: ScoreAccumulator,
    delta: f64,
    c_m: f64,
    horizon: usize,
}

impl SparsifierOracle {
    pub fn new(n: usize, horizon: usize, c_m: f64) -> Result<Self> {
        Ok(Self {
            acc: ScoreAccumulator::new(n)?,
            delta: horizon_delta(horizon)?,
            c_m,
            horizon,
        })
    }

    pub fn reset(&mut self) {
        let n = self.acc.n;
        self.acc = ScoreAccumulator::new(n).expect("size checked at construction");
    }

    /// Registers the next loss (already normalized).
    pub fn observe(&mut self, func: &Arc<SetFunction>) {
        self.acc.push(func);
    }

    pub fn solve(&self, eps: f64, rng: &mut impl Rng) -> Result<Subset> {
        self.acc.solve(eps, self.delta, self.c_m, (0, 0), rng)
    }

    /// Coupling estimate of the average single-deletion sensitivity of
    /// [`Self::solve`] on the current prefix.
    pub fn coupled_sensitivity(&self, eps: f64, trials: usize, seed: u64) -> Result<f64> {
        self.acc.coupled_sensitivity(eps, self.delta, self.c_m, trials, seed)
    }

    pub fn len(&self) -> usize {
        self.acc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.acc.is_empty()
    }

    /// As [`Self::solve`], restricted to `include ⊆ S`, `S ∩ exclude = ∅`.
    pub fn solve_within(&self, eps: f64, include: Subset, exclude: Subset, rng: &mut impl Rng) -> Result<Subset> {
        self.acc.solve(eps, self.delta, self.c_m, (include, exclude), rng)
    }

    /// Trade-off function implied by the sensitivity cap:
    /// `φ(ε) = 16·c_M·(n²+1)·(n + ln T)·ε^{-3}`.
    pub fn phi(&self) -> PhiSpec {
        submod_phi(self.acc.n, self.horizon, self.c_m)
    }
}

/// `φ(ε) = 16·c_M·(n²+1)·(n + ln T)·ε^{-3}`.
pub fn submod_phi(n: usize, horizon: usize, c_m: f64) -> PhiSpec {
    let nf = n as f64;
    let c1 = 16.0 * c_m * (nf * nf + 1.0) * (nf + (horizon.max(1) as f64).ln());
    PhiSpec::PowerLog { c1, q: 3.0, c2: 0.0 }
}

/// Per-edge single-deletion TV bounds for the sparsifier output distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    /// `Σ_f |p_f(H) − p_f(H−e)|` with `p_e(H−e) = 0`.
    pub prob_shift: Vec<f64>,
    /// `(4/ε)·prob_shift`.
    pub per_edge: Vec<f64>,
    /// `(1/2 + (2+ε)/ε)·prob_shift`.
    pub per_edge_tight: Vec<f64>,
    pub average: f64,
    pub average_tight: f64,
    /// `8M(n²+1)/(ε|E|)`.
    pub cap: f64,
    pub m: f64,
}

impl SensitivityReport {
    pub fn within_cap(&self) -> bool {
        self.average <= self.cap * (1.0 + 1e-12)
    }
}

pub fn sensitivity_audit(h: &SubmodularHypergraph, eps: f64, m: f64) -> Result<SensitivityReport> {
    if h.len() < 2 {
        return Err(Error::domain("sensitivity audit needs at least two edges"));
    }
    if !(eps > 0.0 && m > 0.0) {
        return Err(Error::domain("ε and M must be positive"));
    }
    let acc = ScoreAccumulator::from_hypergraph(h)?;
    let base: Vec<f64> = acc.group_scores(None).iter().map(|g| clip_prob(m, g.s())).collect();
    let mut shift_by_group = vec![0.0; acc.groups.len()];
    for (r, shift) in shift_by_group.iter_mut().enumerate() {
        let del = acc.group_scores(Some(r));
        let mut total = base[r];
        for (g, grp) in acc.groups.iter().enumerate() {
            let c = grp.count - (g == r) as usize;
            if c > 0 {
                total += c as f64 * (base[g] - clip_prob(m, del[g].s())).abs();
            }
        }
        *shift = total;
    }
    let prob_shift: Vec<f64> = acc.edge_group.iter().map(|&g| shift_by_group[g]).collect();
    let factor = 4.0 / eps;
    let tight = 0.5 + (2.0 + eps) / eps;
    let per_edge: Vec<f64> = prob_shift.iter().map(|x| factor * x).collect();
    let per_edge_tight: Vec<f64> = prob_shift.iter().map(|x| tight * x).collect();
    let len = h.len() as f64;
    let nf = h.n() as f64;
    Ok(SensitivityReport {
        average: per_edge.iter().sum::<f64>() / len,
        average_tight: per_edge_tight.iter().sum::<f64>() / len,
        per_edge,
        per_edge_tight,
        prob_shift,
        cap: 8.0 * m * (nf * nf + 1.0) / (eps * len),
        m,
    })
}

/// For each edge `e`: `(Σ_{f≠e} |s_f(H) − s_f(H−e)|, s_e(H))`.
pub fn score_deletion_check(h: &SubmodularHypergraph) -> Result<Vec<(f64, f64)>> {
    let acc = ScoreAccumulator::from_hypergraph(h)?;
    let base = acc.group_scores(None);
    let per_group: Vec<(f64, f64)> = (0..acc.groups.len())
        .map(|r| {
            let del = acc.group_scores(Some(r));
            let lhs = acc
                .groups
                .iter()
                .enumerate()
                .map(|(g, grp)| {
                    let c = grp.count - (g == r) as usize;
                    c as f64 * (base[g].s() - del[g].s()).abs()
                })
                .sum();
            (lhs, base[r].s())
        })
        .collect();
    Ok(acc.edge_group.iter().map(|&g| per_group[g]).collect())
}
