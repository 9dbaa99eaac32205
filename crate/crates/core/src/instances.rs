//! Concrete online problems (submodular minimization, ℓ1 regression), their
//! oracles for the engine, and instance generators.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::conjugate::PhiSpec;
use crate::engine::{LossInstance, OfflineOracle};
use crate::error::{Error, Result};
use crate::lewis_l1::{exact_l1_opt, l1_phi, offline_l1_oracle, DEFAULT_C_LEWIS, MAX_DIM};
use crate::sparsify::{SparsifierOracle, DEFAULT_C_M};
use crate::submodular::{
    brute_min, full_mask, mask_of, SetFunction, Subset, SubmodularHypergraph, MAX_ENUM_N,
};

/// Default ε cap for the ℓ1 oracle, which needs ε < 1.
pub const L1_EPS_CAP: f64 = 0.99;

/// A multiset of submodular losses over `2^V`, stored as distinct functions
/// plus one function index per datapoint.
#[derive(Clone, Debug)]
pub struct SubmodularInstance {
    n: usize,
    funcs: Vec<Arc<SetFunction>>,
    normalized: Vec<Arc<SetFunction>>,
    data: Vec<usize>,
}

impl SubmodularInstance {
    /// Deduplicates equal losses; every loss must take values in `[0, 1]`.
    pub fn new(n: usize, losses: &[SetFunction]) -> Result<Self> {
        let mut index: HashMap<(Subset, Vec<u64>), usize> = HashMap::new();
        let mut funcs = Vec::new();
        let mut data = Vec::with_capacity(losses.len());
        for f in losses {
            let key = (f.support(), f.values().iter().map(|v| v.to_bits()).collect());
            let id = *index.entry(key).or_insert_with(|| {
                funcs.push(f.clone());
                funcs.len() - 1
            });
            data.push(id);
        }
        Self::from_parts(n, funcs, data)
    }

    pub fn from_parts(n: usize, funcs: Vec<SetFunction>, data: Vec<usize>) -> Result<Self> {
        if n == 0 || n > MAX_ENUM_N {
            return Err(Error::capacity(format!("ground set size {n} not in 1..={MAX_ENUM_N}")));
        }
        if data.is_empty() {
            return Err(Error::domain("instance needs at least one loss"));
        }
        for (i, f) in funcs.iter().enumerate() {
            if f.support() & !full_mask(n) != 0 {
                return Err(Error::domain(format!("loss {i} leaves the ground set")));
            }
            if f.min_value() < 0.0 || f.max_value() > 1.0 {
                return Err(Error::domain(format!("loss {i} leaves [0, 1]")));
            }
        }
        if let Some(&bad) = data.iter().find(|&&d| d >= funcs.len()) {
            return Err(Error::domain(format!("datapoint refers to missing loss {bad}")));
        }
        let normalized = funcs.iter().map(|f| Arc::new(f.normalized().0)).collect();
        Ok(Self {
            n,
            funcs: funcs.into_iter().map(Arc::new).collect(),
            normalized,
            data,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn distinct(&self) -> &[Arc<SetFunction>] {
        &self.funcs
    }

    pub fn data(&self) -> &[usize] {
        &self.data
    }

    pub fn loss_fn(&self, x: usize) -> &SetFunction {
        &self.funcs[self.data[x]]
    }

    /// Datapoint `x`'s loss shifted to vanish at its minimum.
    pub fn normalized_loss(&self, x: usize) -> &Arc<SetFunction> {
        &self.normalized[self.data[x]]
    }

    /// Exact `(argmin, OPT_T)` over the whole multiset.
    pub fn exact_opt(&self) -> Result<(Subset, f64)> {
        let mut counts = vec![0usize; self.funcs.len()];
        for &d in &self.data {
            counts[d] += 1;
        }
        brute_min(
            |s| counts.iter().zip(&self.funcs).map(|(&c, f)| c as f64 * f.eval(s)).sum(),
            self.n,
        )
    }

    /// Every loss passes the lattice check.
    pub fn all_submodular(&self) -> bool {
        self.funcs.iter().all(|f| f.check_submodular().passed())
    }

    /// Prefix hypergraph with one edge per loss, in datapoint order.
    pub fn hypergraph(&self) -> Result<SubmodularHypergraph> {
        let mut h = SubmodularHypergraph::new(self.n)?;
        for &d in &self.data {
            h.add_edge(&self.funcs[d])?;
        }
        Ok(h)
    }
}

impl LossInstance for SubmodularInstance {
    type Decision = Subset;

    fn len(&self) -> usize {
        self.data.len()
    }

    fn loss(&self, s: &Subset, x: usize) -> f64 {
        self.loss_fn(x).eval(*s)
    }

    fn initial_decision(&self) -> Subset {
        0
    }
}

/// Cumulative loss table over all `2^n` subsets.
#[derive(Clone, Debug)]
pub struct PrefixTable {
    cum: Vec<f64>,
}

impl PrefixTable {
    pub fn new(n: usize) -> Self {
        Self {
            cum: vec![0.0; 1 << n],
        }
    }

    pub fn add(&mut self, f: &SetFunction) {
        for (s, c) in self.cum.iter_mut().enumerate() {
            *c += f.eval(s as Subset);
        }
    }

    /// `(argmin, min)`, smallest bitmask on ties.
    pub fn min(&self) -> (Subset, f64) {
        let mut best = (0, f64::INFINITY);
        for (s, &c) in self.cum.iter().enumerate() {
            if c < best.1 {
                best = (s as Subset, c);
            }
        }
        best
    }

    pub fn value(&self, s: Subset) -> f64 {
        self.cum[s as usize]
    }
}

/// The sparsify-then-minimize oracle with an exact prefix table for OPT_t.
#[derive(Clone, Debug)]
pub struct SubmodularOracle {
    table: PrefixTable,
    sparsifier: SparsifierOracle,
    n: usize,
    horizon: usize,
    c_m: f64,
    slack: f64,
    phi: Option<PhiSpec>,
}

impl SubmodularOracle {
    pub fn new(inst: &SubmodularInstance, c_m: f64) -> Result<Self> {
        let horizon = inst.len().max(2);
        Ok(Self {
            table: PrefixTable::new(inst.n),
            sparsifier: SparsifierOracle::new(inst.n, horizon, c_m)?,
            n: inst.n,
            horizon,
            c_m,
            slack: crate::engine::DEFAULT_ADDITIVE_SLACK,
            phi: None,
        })
    }

    pub fn with_default_constant(inst: &SubmodularInstance) -> Result<Self> {
        Self::new(inst, DEFAULT_C_M)
    }

    pub fn with_slack(mut self, slack: f64) -> Self {
        self.slack = slack;
        self
    }

    /// Replaces the analytic trade-off curve, e.g. with a measured one.
    pub fn with_phi(mut self, phi: PhiSpec) -> Self {
        self.phi = Some(phi);
        self
    }

    pub fn prefix_table(&self) -> &PrefixTable {
        &self.table
    }
}

impl OfflineOracle<SubmodularInstance> for SubmodularOracle {
    fn reset(&mut self, _: &SubmodularInstance) {
        self.table = PrefixTable::new(self.n);
        self.sparsifier.reset();
    }

    fn observe(&mut self, inst: &SubmodularInstance, x: usize) {
        let d = inst.data[x];
        self.table.add(&inst.funcs[d]);
        self.sparsifier.observe(&inst.normalized[d]);
    }

    fn exact_opt(&self) -> f64 {
        self.table.min().1
    }

    fn solve(&mut self, _: &SubmodularInstance, eps: f64, rng: &mut ChaCha20Rng) -> Result<Subset> {
        self.sparsifier.solve(eps, rng)
    }

    fn phi(&self) -> PhiSpec {
        match &self.phi {
            Some(phi) => phi.clone(),
            None => crate::sparsify::submod_phi(self.n, self.horizon, self.c_m),
        }
    }

    fn eps_cap(&self) -> Option<f64> {
        Some(1.0)
    }

    fn additive_slack(&self) -> f64 {
        self.slack
    }
}

/// Exact prefix minimizer (follow the leader); ignores ε.
#[derive(Clone, Debug)]
pub struct ExactSubmodularOracle {
    table: PrefixTable,
    n: usize,
}

impl ExactSubmodularOracle {
    pub fn new(inst: &SubmodularInstance) -> Self {
        Self {
            table: PrefixTable::new(inst.n),
            n: inst.n,
        }
    }
}

impl OfflineOracle<SubmodularInstance> for ExactSubmodularOracle {
    fn reset(&mut self, _: &SubmodularInstance) {
        self.table = PrefixTable::new(self.n);
    }

    fn observe(&mut self, inst: &SubmodularInstance, x: usize) {
        self.table.add(inst.loss_fn(x));
    }

    fn exact_opt(&self) -> f64 {
        self.table.min().1
    }

    fn solve(&mut self, _: &SubmodularInstance, _: f64, _: &mut ChaCha20Rng) -> Result<Subset> {
        Ok(self.table.min().0)
    }

    fn phi(&self) -> PhiSpec {
        PhiSpec::PowerLog { c1: 1.0, q: 1.0, c2: 0.0 }
    }

    fn eps_cap(&self) -> Option<f64> {
        Some(1.0)
    }
}

/// Online ℓ1 regression: datapoints are rows `(a_t, b_t)`, decisions lie in
/// `[−R, R]^d`, and the data keep every loss in `[0, 1]` on that box.
#[derive(Clone, Debug)]
pub struct L1Instance {
    pub a: DMatrix<f64>,
    pub b: Vec<f64>,
    pub radius: f64,
}

impl L1Instance {
    pub fn new(a: DMatrix<f64>, b: Vec<f64>, radius: f64) -> Result<Self> {
        if a.nrows() != b.len() {
            return Err(Error::SizeMismatch {
                expected: a.nrows(),
                got: b.len(),
            });
        }
        if a.ncols() == 0 || a.ncols() > MAX_DIM {
            return Err(Error::capacity(format!("dimension {} not in 1..={MAX_DIM}", a.ncols())));
        }
        if !(radius > 0.0) {
            return Err(Error::domain("box radius must be positive"));
        }
        for (k, (row, bk)) in a.row_iter().zip(&b).enumerate() {
            let worst = radius * row.iter().map(|x| x.abs()).sum::<f64>() + bk.abs();
            if worst > 1.0 + 1e-12 {
                return Err(Error::domain(format!("row {k} can incur loss {worst} > 1 on the box")));
            }
            if row.iter().all(|&x| x == 0.0) {
                return Err(Error::domain(format!("row {k} is zero")));
            }
        }
        Ok(Self { a, b, radius })
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn prefix(&self, idx: &[usize]) -> (DMatrix<f64>, Vec<f64>) {
        let a = self.a.select_rows(idx);
        let b = idx.iter().map(|&i| self.b[i]).collect();
        (a, b)
    }
}

impl LossInstance for L1Instance {
    type Decision = Vec<f64>;

    fn len(&self) -> usize {
        self.b.len()
    }

    fn loss(&self, theta: &Vec<f64>, x: usize) -> f64 {
        let fit: f64 = self.a.row(x).iter().zip(theta).map(|(a, t)| a * t).sum();
        (fit - self.b[x]).abs()
    }

    fn initial_decision(&self) -> Vec<f64> {
        vec![0.0; self.dim()]
    }
}

/// Lewis-sampling oracle with an exact prefix OPT.
#[derive(Clone, Debug)]
pub struct L1Oracle {
    prefix: Vec<usize>,
    opt: f64,
    horizon: usize,
    c_m: f64,
    d: usize,
    cap: f64,
}

impl L1Oracle {
    pub fn new(inst: &L1Instance, c_m: f64) -> Self {
        Self {
            prefix: Vec::new(),
            opt: 0.0,
            horizon: inst.len(),
            c_m,
            d: inst.dim(),
            cap: L1_EPS_CAP,
        }
    }

    pub fn with_default_constant(inst: &L1Instance) -> Self {
        Self::new(inst, DEFAULT_C_LEWIS)
    }
}

impl OfflineOracle<L1Instance> for L1Oracle {
    fn reset(&mut self, _: &L1Instance) {
        self.prefix.clear();
        self.opt = 0.0;
    }

    fn observe(&mut self, inst: &L1Instance, x: usize) {
        self.prefix.push(x);
        let (a, b) = inst.prefix(&self.prefix);
        // a failure here would mean the LP failed on finite data
        self.opt = exact_l1_opt(&a, &b, Some(inst.radius)).map(|r| r.1).unwrap_or(f64::NAN);
    }

    fn exact_opt(&self) -> f64 {
        self.opt
    }

    fn solve(&mut self, inst: &L1Instance, eps: f64, rng: &mut ChaCha20Rng) -> Result<Vec<f64>> {
        let (a, b) = inst.prefix(&self.prefix);
        offline_l1_oracle(&a, &b, eps.min(self.cap), self.horizon, self.c_m, Some(inst.radius), rng)
    }

    fn phi(&self) -> PhiSpec {
        l1_phi(self.d, self.horizon, self.c_m)
    }

    fn eps_cap(&self) -> Option<f64> {
        Some(self.cap)
    }
}

/// Modular loss `𝟙[i ∈ S]` (`member = true`) or `𝟙[i ∉ S]` on the full ground set.
pub fn indicator_loss(n: usize, i: usize, member: bool) -> Result<SetFunction> {
    SetFunction::from_fn(full_mask(n), |s| ((s >> i & 1 == 1) == member) as u8 as f64)
}

/// Planted family with `OPT_T = opt` exactly.
///
/// Three quarters of the rounds are indicator losses on a round-robin
/// element; `opt` of them disagree with a random planted set `S★`. The rest
/// are directed cuts that vanish on `S★`. Returns the instance and `S★`.
pub fn planted_submodular(n: usize, horizon: usize, opt: usize, rng: &mut impl Rng) -> Result<(SubmodularInstance, Subset)> {
    if n < 2 {
        return Err(Error::domain("planted family needs n ≥ 2"));
    }
    let planted: Subset = rng.gen::<u64>() & full_mask(n);
    let modular = horizon - horizon / 4;
    let mut counts = vec![0usize; n];
    for j in 0..modular {
        counts[j % n] += 1;
    }
    let cap: usize = counts.iter().map(|c| c / 2).sum();
    if opt > cap {
        return Err(Error::domain(format!("planted OPT {opt} exceeds {cap} at this size")));
    }
    // spread opt over elements, at most half of each element's rounds
    let mut against = vec![0usize; n];
    let mut left = opt;
    while left > 0 {
        for i in 0..n {
            if left > 0 && against[i] < counts[i] / 2 {
                against[i] += 1;
                left -= 1;
            }
        }
    }
    let mut losses = Vec::with_capacity(horizon);
    for i in 0..n {
        let inside = planted >> i & 1 == 1;
        let mut flags: Vec<bool> = (0..counts[i]).map(|k| k < against[i]).collect();
        flags.shuffle(rng);
        for bad in flags {
            // a loss that charges S★ is the indicator of S★'s own choice
            losses.push(indicator_loss(n, i, if bad { inside } else { !inside })?);
        }
    }
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|u| (0..n).map(move |v| (u, v)))
        .filter(|&(u, v)| u != v && !(planted >> u & 1 == 1 && planted >> v & 1 == 0))
        .collect();
    for _ in modular..horizon {
        let (u, v) = pairs[rng.gen_range(0..pairs.len())];
        losses.push(SetFunction::directed_cut(full_mask(n), u, v)?);
    }
    losses.shuffle(rng);
    Ok((SubmodularInstance::new(n, &losses)?, planted))
}

/// Random concave-of-cardinality weights with values in `[0, 1]`.
fn random_concave(size: usize, rng: &mut impl Rng) -> Vec<f64> {
    // increments are nonincreasing; the total is rescaled into [0, 1]
    let mut inc: Vec<f64> = (0..size).map(|_| rng.gen_range(-1.0..1.0)).collect();
    inc.sort_by(|a, b| b.total_cmp(a));
    let mut w = vec![0.0];
    for d in inc {
        w.push(w.last().unwrap() + d);
    }
    let lo = w.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-12);
    w.iter().map(|x| (x - lo) / span).collect()
}

/// Random submodular loss on the full ground set with values in `[0, 1]`:
/// an indicator, a directed cut, or a concave function of `|S ∩ e|`.
pub fn random_submodular_loss(n: usize, rng: &mut impl Rng) -> Result<SetFunction> {
    match rng.gen_range(0..3) {
        0 => indicator_loss(n, rng.gen_range(0..n), rng.gen()),
        1 if n >= 2 => {
            let u = rng.gen_range(0..n);
            let mut v = rng.gen_range(0..n - 1);
            if v >= u {
                v += 1;
            }
            SetFunction::directed_cut(full_mask(n), u, v)
        }
        _ => {
            let e = loop {
                let e = rng.gen::<u64>() & full_mask(n);
                if e != 0 {
                    break e;
                }
            };
            let w = random_concave(e.count_ones() as usize, rng);
            SetFunction::from_fn(full_mask(n), |s| w[(s & e).count_ones() as usize])
        }
    }
}

pub fn random_submodular_instance(n: usize, horizon: usize, rng: &mut impl Rng) -> Result<SubmodularInstance> {
    let losses: Vec<SetFunction> = (0..horizon)
        .map(|_| random_submodular_loss(n, rng))
        .collect::<Result<_>>()?;
    SubmodularInstance::new(n, &losses)
}

/// Random hypergraph with directed-cut and concave-cardinality edges on random
/// supports of size 2..=n.
pub fn random_mixed_hypergraph(n: usize, edges: usize, rng: &mut impl Rng) -> Result<SubmodularHypergraph> {
    let mut h = SubmodularHypergraph::new(n)?;
    for _ in 0..edges {
        let mut elems: Vec<usize> = (0..n).collect();
        elems.shuffle(rng);
        let size = rng.gen_range(2..=n);
        let support = mask_of(&elems[..size]);
        let g = if rng.gen_bool(0.5) {
            SetFunction::directed_cut(support, elems[0], elems[1])?
        } else {
            SetFunction::concave_of_cardinality(support, &random_concave(size, rng))?
        };
        h.add_edge(&g)?;
    }
    Ok(h)
}

/// Rows with `‖a‖₁·R ≤ 1/2` and targets `|b| ≤ 1/2`, so every loss on the box
/// lies in `[0, 1]`. Targets follow a planted `θ★` with Laplace-like noise
/// and a share of gross outliers.
pub fn random_l1_instance(
    horizon: usize,
    d: usize,
    radius: f64,
    outlier_frac: f64,
    rng: &mut impl Rng,
) -> Result<L1Instance> {
    let theta: Vec<f64> = (0..d).map(|_| rng.gen_range(-0.5..0.5) * radius).collect();
    let scale = 0.5 / (radius * d as f64);
    let mut a = DMatrix::zeros(horizon, d);
    let mut b = Vec::with_capacity(horizon);
    for k in 0..horizon {
        loop {
            for j in 0..d {
                a[(k, j)] = rng.gen_range(-1.0..1.0) * scale;
            }
            if a.row(k).iter().any(|&x| x != 0.0) {
                break;
            }
        }
        let fit: f64 = a.row(k).iter().zip(&theta).map(|(x, t)| x * t).sum();
        let noise = if rng.gen_bool(outlier_frac) {
            rng.gen_range(-0.5..0.5)
        } else {
            let u: f64 = rng.gen_range(-0.5..0.5);
            -0.02 * u.signum() * (1.0 - 2.0 * u.abs()).max(1e-300).ln()
        };
        b.push((fit + noise).clamp(-0.5, 0.5));
    }
    L1Instance::new(a, b, radius)
}
