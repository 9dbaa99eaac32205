//! Set functions, submodular hypergraphs and exhaustive minimization.
//!
//! Subsets of the ground set `{0, …, n−1}` are `u64` bitmasks. A
//! [`SetFunction`] stores its values over the subsets of its support, indexed
//! by the *local* bitmask obtained by compressing the support bits.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Subset = u64;

/// Largest ground set (or support) handled by enumeration.
pub const MAX_ENUM_N: usize = 20;
/// Largest ground set for the exhaustive submodularity check.
pub const MAX_EXHAUSTIVE_N: usize = 12;

const SUBMODULAR_TOL: f64 = 1e-12;
const SAMPLED_PAIRS: usize = 100_000;

pub fn full_mask(n: usize) -> Subset {
    if n >= 64 {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

pub fn mask_of(elements: &[usize]) -> Subset {
    elements.iter().fold(0, |m, &i| m | (1u64 << i))
}

pub fn elements_of(mask: Subset) -> Vec<usize> {
    (0..64).filter(|&i| mask >> i & 1 == 1).collect()
}

/// Extracts the bits of `s` that sit at positions of `support`, packed low.
fn compress(s: Subset, support: Subset) -> usize {
    let mut local = 0usize;
    let mut k = 0;
    let mut rest = support;
    while rest != 0 {
        let pos = rest.trailing_zeros();
        local |= (((s >> pos) & 1) as usize) << k;
        k += 1;
        rest &= rest - 1;
    }
    local
}

/// Inverse of [`compress`].
fn expand(local: usize, support: Subset) -> Subset {
    let mut s = 0;
    let mut k = 0;
    let mut rest = support;
    while rest != 0 {
        let pos = rest.trailing_zeros();
        s |= (((local >> k) & 1) as u64) << pos;
        k += 1;
        rest &= rest - 1;
    }
    s
}

/// A real-valued function on the subsets of a support `e ⊆ V`.
#[derive(Clone, Debug, PartialEq)]
pub struct SetFunction {
    support: Subset,
    size: usize,
    // support == full_mask(size): local index is the subset itself
    contiguous: bool,
    values: Vec<f64>,
}

impl SetFunction {
    /// Values indexed by local bitmask over the support.
    pub fn from_table(support: Subset, values: Vec<f64>) -> Result<Self> {
        let size = support.count_ones() as usize;
        if size > MAX_ENUM_N {
            return Err(Error::capacity(format!("support of size {size} exceeds {MAX_ENUM_N}")));
        }
        if values.len() != 1 << size {
            return Err(Error::SizeMismatch {
                expected: 1 << size,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("set function values must be finite"));
        }
        Ok(Self {
            support,
            size,
            contiguous: support == full_mask(size),
            values,
        })
    }

    /// Tabulates `f` (evaluated on global subsets of the support).
    pub fn from_fn(support: Subset, f: impl Fn(Subset) -> f64) -> Result<Self> {
        let size = support.count_ones() as usize;
        if size > MAX_ENUM_N {
            return Err(Error::capacity(format!("support of size {size} exceeds {MAX_ENUM_N}")));
        }
        let values = (0..1usize << size).map(|l| f(expand(l, support))).collect();
        Self::from_table(support, values)
    }

    /// `𝟙[u ∈ S, v ∉ S]` on the support.
    pub fn directed_cut(support: Subset, u: usize, v: usize) -> Result<Self> {
        if support >> u & 1 == 0 || support >> v & 1 == 0 || u == v {
            return Err(Error::domain(format!("directed cut ({u}, {v}) needs two distinct support elements")));
        }
        Self::from_fn(support, |s| ((s >> u & 1 == 1) && (s >> v & 1 == 0)) as u8 as f64)
    }

    /// `S ↦ weights[|S ∩ e|]`; the weight sequence must be concave.
    pub fn concave_of_cardinality(support: Subset, weights: &[f64]) -> Result<Self> {
        let size = support.count_ones() as usize;
        if weights.len() != size + 1 {
            return Err(Error::SizeMismatch {
                expected: size + 1,
                got: weights.len(),
            });
        }
        for w in weights.windows(3) {
            if w[0] + w[2] > 2.0 * w[1] + SUBMODULAR_TOL {
                return Err(Error::domain("cardinality weights must be concave"));
            }
        }
        Self::from_fn(support, |s| weights[s.count_ones() as usize])
    }

    pub fn support(&self) -> Subset {
        self.support
    }

    pub fn support_size(&self) -> usize {
        self.size
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value at `S ∩ e` for a global subset `S`.
    #[inline]
    pub fn eval(&self, s: Subset) -> f64 {
        if self.contiguous {
            self.values[(s & self.support) as usize]
        } else {
            self.values[compress(s, self.support)]
        }
    }

    /// Value at the full support, `g(e)`.
    pub fn at_support(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Shifted copy with minimum value zero, and the shift.
    pub fn normalized(&self) -> (SetFunction, f64) {
        let offset = self.min_value();
        let values = self.values.iter().map(|v| v - offset).collect();
        let mut f = self.clone();
        f.values = values;
        (f, offset)
    }

    /// Exhaustive (or sampled) lattice check on the support.
    pub fn check_submodular(&self) -> SubmodularityCheck {
        let local = |l: Subset| self.values[l as usize];
        is_submodular(local, self.size)
    }

    /// `min { g(S ∩ e) : u ∈ S, v ∉ S }`, with `u = v` mapped to zero.
    pub fn min_cut_uv(&self, u: usize, v: usize) -> f64 {
        if u == v {
            return 0.0;
        }
        let u_in = self.support >> u & 1 == 1;
        let v_in = self.support >> v & 1 == 1;
        let (u_loc, v_loc) = (
            compress(1 << u, self.support),
            compress(1 << v, self.support),
        );
        let mut best = f64::INFINITY;
        for (l, &val) in self.values.iter().enumerate() {
            if u_in && l & u_loc == 0 {
                continue;
            }
            if v_in && l & v_loc != 0 {
                continue;
            }
            best = best.min(val);
        }
        best
    }

    /// `g^e_{u→v}` for all ordered pairs over a ground set of size `n`,
    /// row-major (`u·n + v`).
    pub fn min_cut_table(&self, n: usize) -> Vec<f64> {
        let mut table = vec![f64::INFINITY; n * n];
        let outside = full_mask(n) & !self.support;
        for (l, &val) in self.values.iter().enumerate() {
            let inside = expand(l, self.support);
            let us = inside | outside;
            let vs = (self.support & !inside) | outside;
            let mut ru = us;
            while ru != 0 {
                let u = ru.trailing_zeros() as usize;
                ru &= ru - 1;
                let mut rv = vs;
                while rv != 0 {
                    let v = rv.trailing_zeros() as usize;
                    rv &= rv - 1;
                    let cell = &mut table[u * n + v];
                    if val < *cell {
                        *cell = val;
                    }
                }
            }
        }
        for u in 0..n {
            table[u * n + u] = 0.0;
        }
        table
    }
}

/// Outcome of a submodularity check.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SubmodularityCheck {
    /// Every pair satisfies the lattice inequality (exhaustive mode).
    Holds,
    /// No violation among the sampled pairs.
    NotFalsified,
    /// A violating pair.
    Violated(Subset, Subset),
}

impl SubmodularityCheck {
    pub fn passed(&self) -> bool {
        !matches!(self, SubmodularityCheck::Violated(..))
    }
}

fn lattice_ok(f: &impl Fn(Subset) -> f64, a: Subset, b: Subset) -> bool {
    let lhs = f(a) + f(b);
    let rhs = f(a | b) + f(a & b);
    lhs >= rhs - SUBMODULAR_TOL * (1.0 + lhs.abs().max(rhs.abs()))
}

/// `f(A) + f(B) ≥ f(A ∪ B) + f(A ∩ B)` over all pairs when `n ≤ 12`,
/// otherwise over 10^5 seeded random pairs.
pub fn is_submodular(f: impl Fn(Subset) -> f64, n: usize) -> SubmodularityCheck {
    if n <= MAX_EXHAUSTIVE_N {
        let top = 1u64 << n;
        for a in 0..top {
            for b in (a + 1)..top {
                if !lattice_ok(&f, a, b) {
                    return SubmodularityCheck::Violated(a, b);
                }
            }
        }
        SubmodularityCheck::Holds
    } else {
        let mut rng = ChaCha20Rng::seed_from_u64(0x5eed_5b0d);
        let mask = full_mask(n);
        for _ in 0..SAMPLED_PAIRS {
            let a = rng.gen::<u64>() & mask;
            let b = rng.gen::<u64>() & mask;
            if !lattice_ok(&f, a, b) {
                return SubmodularityCheck::Violated(a, b);
            }
        }
        SubmodularityCheck::NotFalsified
    }
}

/// Exact minimizer over all `2^n` subsets, smallest bitmask on ties.
pub fn brute_min(f: impl Fn(Subset) -> f64, n: usize) -> Result<(Subset, f64)> {
    brute_min_constrained(f, n, 0, 0)
}

/// Exact minimizer over subsets containing `include` and avoiding `exclude`.
pub fn brute_min_constrained(
    f: impl Fn(Subset) -> f64,
    n: usize,
    include: Subset,
    exclude: Subset,
) -> Result<(Subset, f64)> {
    if n > MAX_ENUM_N {
        return Err(Error::capacity(format!("ground set of size {n} exceeds {MAX_ENUM_N}")));
    }
    if include & exclude != 0 {
        return Err(Error::domain("include and exclude masks overlap"));
    }
    let mut best = (0, f64::INFINITY);
    for s in 0..(1u64 << n) {
        if s & include != include || s & exclude != 0 {
            continue;
        }
        let v = f(s);
        if v < best.1 {
            best = (s, v);
        }
    }
    if best.1.is_infinite() {
        return Err(Error::domain("no feasible subset"));
    }
    Ok(best)
}

/// One hyperedge: a normalized splitting function (minimum zero), the
/// offset removed at ingestion and a scale weight.
#[derive(Clone, Debug)]
pub struct Hyperedge {
    pub func: Arc<SetFunction>,
    pub offset: f64,
    pub weight: f64,
}

impl Hyperedge {
    /// Normalizes `g` so that its minimum is zero.
    pub fn new(g: &SetFunction) -> Self {
        let (norm, offset) = g.normalized();
        Self {
            func: Arc::new(norm),
            offset,
            weight: 1.0,
        }
    }

    /// An already-normalized, shared splitting function.
    pub fn shared(func: Arc<SetFunction>, offset: f64) -> Self {
        Self {
            func,
            offset,
            weight: 1.0,
        }
    }

    /// The splitting function value, offset included.
    pub fn original_value(&self, s: Subset) -> f64 {
        self.func.eval(s) + self.offset
    }
}

/// A submodular hypergraph `H = (V, E, {g_e})` with `E` a multiset.
#[derive(Clone, Debug, Default)]
pub struct SubmodularHypergraph {
    n: usize,
    edges: Vec<Hyperedge>,
}

impl SubmodularHypergraph {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || n > 63 {
            return Err(Error::capacity(format!("ground set size {n} not in 1..=63")));
        }
        Ok(Self { n, edges: Vec::new() })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Hyperedge] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    fn check_support(&self, g: &SetFunction) -> Result<()> {
        if g.support() & !full_mask(self.n) != 0 {
            return Err(Error::domain("hyperedge support leaves the ground set"));
        }
        Ok(())
    }

    /// Adds `g` after normalizing its minimum to zero.
    pub fn add_edge(&mut self, g: &SetFunction) -> Result<()> {
        self.check_support(g)?;
        self.edges.push(Hyperedge::new(g));
        Ok(())
    }

    pub fn push(&mut self, edge: Hyperedge) -> Result<()> {
        self.check_support(&edge.func)?;
        self.edges.push(edge);
        Ok(())
    }

    /// Copy without edge `index` (`H − e`).
    pub fn without(&self, index: usize) -> Self {
        let mut h = self.clone();
        h.edges.remove(index);
        h
    }

    /// Cut with ingestion offsets added back, i.e. `Σ_e w_e·(g_e + offset_e)`.
    pub fn original_cut(&self, s: Subset) -> f64 {
        self.edges.iter().map(|e| e.weight * e.original_value(s)).sum()
    }
}

/// `cut_H(S) = Σ_e w_e·g_e(S ∩ e)` over the normalized splitting functions.
pub fn cut_value(h: &SubmodularHypergraph, s: Subset) -> f64 {
    h.edges.iter().map(|e| e.weight * e.func.eval(s)).sum()
}

/// Named or tabulated splitting function in instance files.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FunctionSpec {
    Table { values: Vec<f64> },
    DirectedCut { from: usize, to: usize },
    ConcaveOfCardinality { weights: Vec<f64> },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EdgeSpec {
    pub support: Vec<usize>,
    pub function: FunctionSpec,
}

/// JSON instance file: ground-set size plus hyperedges.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HypergraphFile {
    pub n: usize,
    pub edges: Vec<EdgeSpec>,
}

impl EdgeSpec {
    pub fn to_function(&self) -> Result<SetFunction> {
        let support = mask_of(&self.support);
        if support.count_ones() as usize != self.support.len() {
            return Err(Error::domain("duplicate element in hyperedge support"));
        }
        match &self.function {
            FunctionSpec::Table { values } => SetFunction::from_table(support, values.clone()),
            FunctionSpec::DirectedCut { from, to } => SetFunction::directed_cut(support, *from, *to),
            FunctionSpec::ConcaveOfCardinality { weights } => {
                SetFunction::concave_of_cardinality(support, weights)
            }
        }
    }
}

impl HypergraphFile {
    pub fn to_hypergraph(&self) -> Result<SubmodularHypergraph> {
        let mut h = SubmodularHypergraph::new(self.n)?;
        for (i, e) in self.edges.iter().enumerate() {
            if e.support.iter().any(|&v| v >= self.n) {
                return Err(Error::domain(format!("edge {i}: support element outside 0..{}", self.n)));
            }
            let g = e.to_function()?;
            if g.values().iter().any(|&v| v < 0.0) {
                return Err(Error::domain(format!("edge {i}: splitting functions must be nonnegative")));
            }
            if let SubmodularityCheck::Violated(..) = g.check_submodular() {
                return Err(Error::domain(format!("edge {i}: splitting function is not submodular")));
            }
            h.add_edge(&g)?;
        }
        Ok(h)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Random directed-cut hyperedges `{u, v}` with `u ≠ v`.
pub fn random_directed_cut_hypergraph(n: usize, edges: usize, rng: &mut impl Rng) -> Result<SubmodularHypergraph> {
    if n < 2 {
        return Err(Error::domain("directed cuts need n ≥ 2"));
    }
    let mut h = SubmodularHypergraph::new(n)?;
    for _ in 0..edges {
        let u = rng.gen_range(0..n);
        let mut v = rng.gen_range(0..n - 1);
        if v >= u {
            v += 1;
        }
        let g = SetFunction::directed_cut(mask_of(&[u, v]), u, v)?;
        h.add_edge(&g)?;
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dcut01() -> SetFunction {
        SetFunction::directed_cut(0b11, 0, 1).unwrap()
    }

    #[test]
    fn cut_value_examples() {
        let mut h = SubmodularHypergraph::new(2).unwrap();
        assert_eq!(cut_value(&h, 0b01), 0.0);
        h.add_edge(&dcut01()).unwrap();
        assert_eq!(cut_value(&h, 0b01), 1.0);
        assert_eq!(cut_value(&h, 0b10), 0.0);
        assert_eq!(cut_value(&h, 0b00), 0.0);
        h.add_edge(&dcut01()).unwrap();
        assert_eq!(cut_value(&h, 0b01), 2.0);
        h.edges[1].weight = 0.25;
        assert_eq!(cut_value(&h, 0b01), 1.25);
    }

    #[test]
    fn min_cut_uv_examples() {
        let g = dcut01();
        assert_eq!(g.min_cut_uv(0, 1), 1.0);
        assert_eq!(g.min_cut_uv(1, 0), 0.0);
        assert_eq!(g.min_cut_uv(0, 0), 0.0);

        // min(|S∩e|, |e∖S|) on e = {1,2,3} (bits 1..3)
        let e = mask_of(&[1, 2, 3]);
        let g = SetFunction::from_fn(e, |s| {
            let k = (s & e).count_ones() as f64;
            k.min(3.0 - k)
        })
        .unwrap();
        assert_eq!(g.min_cut_uv(1, 2), 1.0);

        let zero = SetFunction::from_table(0b111, vec![0.0; 8]).unwrap();
        assert_eq!(zero.min_cut_uv(0, 2), 0.0);
    }

    #[test]
    fn min_cut_table_matches_pointwise() {
        let e = mask_of(&[0, 2, 3]);
        let g = SetFunction::concave_of_cardinality(e, &[0.0, 2.0, 3.0, 3.5]).unwrap();
        let t = g.min_cut_table(5);
        for u in 0..5 {
            for v in 0..5 {
                assert_eq!(t[u * 5 + v], g.min_cut_uv(u, v), "({u},{v})");
            }
        }
    }

    #[test]
    fn min_cut_is_a_lower_envelope() {
        let e = mask_of(&[0, 1, 2, 3]);
        let g = SetFunction::concave_of_cardinality(e, &[0.0, 1.0, 1.5, 1.5, 0.5]).unwrap();
        for u in 0..5 {
            for v in 0..5 {
                if u == v {
                    continue;
                }
                let m = g.min_cut_uv(u, v);
                for s in 0..32u64 {
                    if s >> u & 1 == 1 && s >> v & 1 == 0 {
                        assert!(m <= g.eval(s));
                    }
                }
            }
        }
    }

    #[test]
    fn brute_min_examples() {
        assert_eq!(brute_min(|_| 0.0, 4).unwrap(), (0, 0.0));
        assert_eq!(brute_min(|s| s.count_ones() as f64 / 4.0, 4).unwrap(), (0, 0.0));
        // ℓ_1(S) = 𝟙[2 ∈ S] (σ_1 = +1, i(1) = 2), ℓ_2(S) = 𝟙[1 ∉ S] (σ_2 = −1, i(2) = 1)
        let f = |s: Subset| (s >> 1 & 1) as f64 + (1 - (s & 1)) as f64;
        assert_eq!(brute_min(f, 2).unwrap(), (0b01, 0.0));
        assert!(matches!(brute_min(|_| 0.0, 21), Err(Error::Capacity(_))));
    }

    #[test]
    fn brute_min_constrained_respects_masks() {
        let (s, v) = brute_min_constrained(|s| s.count_ones() as f64, 4, 0b0001, 0b0010).unwrap();
        assert_eq!((s, v), (0b0001, 1.0));
    }

    #[test]
    fn is_submodular_examples() {
        let w = [0.3, 1.2, 0.0, 2.0];
        let modular = |s: Subset| (0..4).filter(|&i| s >> i & 1 == 1).map(|i| w[i]).sum::<f64>();
        assert_eq!(is_submodular(modular, 4), SubmodularityCheck::Holds);
        let clique2 = |s: Subset| (s.count_ones() >= 1 && s.count_ones() <= 1) as u8 as f64;
        assert_eq!(is_submodular(clique2, 2), SubmodularityCheck::Holds);
        let pair = |s: Subset| (s.count_ones() == 2) as u8 as f64;
        assert!(matches!(is_submodular(pair, 3), SubmodularityCheck::Violated(..)));
    }

    #[test]
    fn sampled_mode_reports_not_falsified() {
        let f = |s: Subset| (s.count_ones() as f64).sqrt();
        assert_eq!(is_submodular(f, 16), SubmodularityCheck::NotFalsified);
        let g = |s: Subset| (s.count_ones() as f64).powi(2);
        assert!(matches!(is_submodular(g, 16), SubmodularityCheck::Violated(..)));
    }

    #[test]
    fn cut_functions_are_submodular() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for _ in 0..5 {
            let h = random_directed_cut_hypergraph(5, 12, &mut rng).unwrap();
            assert!(is_submodular(|s| cut_value(&h, s), 5).passed());
        }
    }

    #[test]
    fn brute_min_lower_bounds_random_subsets() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let h = random_directed_cut_hypergraph(6, 30, &mut rng).unwrap();
        let f = |s: Subset| cut_value(&h, s) + 0.1 * (s.count_ones() as f64 - 2.0).abs();
        let (_, best) = brute_min(f, 6).unwrap();
        for _ in 0..1000 {
            let s = rng.gen::<u64>() & full_mask(6);
            assert!(best <= f(s));
        }
    }

    #[test]
    fn normalization_keeps_nonnegativity_and_losses() {
        // 𝟙[0 ∉ S] is not minimized at ∅; shifting by the minimum keeps it intact.
        let g = SetFunction::from_fn(0b11, |s| (1 - (s & 1)) as f64 + 0.5).unwrap();
        let e = Hyperedge::new(&g);
        assert_eq!(e.offset, 0.5);
        assert!(e.func.values().iter().all(|&v| v >= 0.0));
        for s in 0..4 {
            assert_eq!(e.original_value(s), g.eval(s));
        }
    }

    #[test]
    fn instance_file_parses() {
        let text = r#"{"n": 3, "edges": [
            {"support": [0, 1], "function": {"kind": "directed_cut", "from": 0, "to": 1}},
            {"support": [0, 1, 2], "function": {"kind": "concave_of_cardinality", "weights": [0, 1, 1, 0]}},
            {"support": [2], "function": {"kind": "table", "values": [0, 0.5]}}
        ]}"#;
        let h = HypergraphFile::from_json(text).unwrap().to_hypergraph().unwrap();
        assert_eq!(h.len(), 3);
        assert_eq!(cut_value(&h, 0b001), 2.0);
        assert_eq!(cut_value(&h, 0b100), 1.5);
        let bad = r#"{"n": 3, "edges": [{"support": [0, 1], "function": {"kind": "table", "values": [0, 0, 0, 1]}}]}"#;
        assert!(HypergraphFile::from_json(bad).unwrap().to_hypergraph().is_err());
    }
}
