//! Desk calibration of the sampling constants hidden behind Θ(·).
//!
//! Both searches walk a ladder of powers of two from below and stop at the
//! first constant whose success rate on a fixed reference family reaches the
//! threshold. Trials reuse the same seeds at every rung.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::conjugate::{CustomPhi, PhiSpec};
use crate::engine::{derive_seed, random_order_stream, LossInstance};
use crate::error::{Error, Result};
use crate::instances::{planted_submodular, random_l1_instance};
use crate::lewis_l1::{exact_l1_opt, l1_objective, l1_solve_boxed, lewis_sample, lewis_weights, sample_count, LEWIS_MAX_ITER, LEWIS_TOL};
use crate::sparsify::{importance_scores, sample_sparsifier, satisfies_sandwich, SparsifierOracle};
use crate::submodular::random_directed_cut_hypergraph;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsifierFamily {
    pub n: usize,
    pub edges: usize,
    pub eps: f64,
    pub delta: f64,
    pub trials: usize,
}

impl Default for SparsifierFamily {
    fn default() -> Self {
        Self {
            n: 5,
            edges: 200,
            eps: 0.5,
            delta: 0.05,
            trials: 400,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LewisFamily {
    pub rows: usize,
    pub d: usize,
    pub eps: f64,
    pub horizon: usize,
    pub radius: f64,
    pub outlier_frac: f64,
    pub trials: usize,
}

impl Default for LewisFamily {
    fn default() -> Self {
        Self {
            rows: 200,
            d: 2,
            eps: 0.5,
            horizon: 200,
            radius: 1.0,
            outlier_frac: 0.1,
            trials: 400,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rung {
    pub constant: f64,
    pub success_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub target: String,
    pub constant: f64,
    pub threshold: f64,
    pub seed: u64,
    pub ladder: Vec<Rung>,
}

pub const LADDER_START_C_M: i32 = -8;
pub const LADDER_START_C_LEWIS: i32 = -6;
const LADDER_STEPS: i32 = 16;
pub const SHIPPED_THRESHOLD: f64 = 0.95;

/// Fraction of trials whose perturbed sparsifier is a `(1±ε)` sandwich of
/// every cut.
pub fn sparsifier_success_rate(family: &SparsifierFamily, c_m: f64, seed: u64) -> Result<f64> {
    if family.trials == 0 {
        return Err(Error::domain("need at least one trial"));
    }
    let mut ok = 0;
    for k in 0..family.trials {
        let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(seed, "calib-cM-graph", k as u64));
        let h = random_directed_cut_hypergraph(family.n, family.edges, &mut rng)?;
        let scores = importance_scores(&h, family.eps, family.delta, c_m)?;
        let out = sample_sparsifier(&h, &scores, family.eps, derive_seed(seed, "calib-cM-sample", k as u64))?;
        if satisfies_sandwich(&h, |s| out.cut(&h, s), family.eps) {
            ok += 1;
        }
    }
    Ok(ok as f64 / family.trials as f64)
}

/// Fraction of trials where the unperturbed Lewis sample's minimizer is within
/// `(1+ε/2)` of the exact optimum.
pub fn lewis_success_rate(family: &LewisFamily, c_m: f64, seed: u64) -> Result<f64> {
    if family.trials == 0 {
        return Err(Error::domain("need at least one trial"));
    }
    let m = sample_count(c_m, family.d, family.eps, family.horizon);
    let ones = vec![1.0; family.rows];
    let mut ok = 0;
    for k in 0..family.trials {
        let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(seed, "calib-cm-data", k as u64));
        let inst = random_l1_instance(family.rows, family.d, family.radius, family.outlier_frac, &mut rng)?;
        let (_, opt) = exact_l1_opt(&inst.a, &inst.b, Some(family.radius))?;
        let state = lewis_weights(&inst.a, LEWIS_TOL, LEWIS_MAX_ITER)?;
        let mut srng = ChaCha20Rng::seed_from_u64(derive_seed(seed, "calib-cm-sample", k as u64));
        let w = lewis_sample(&state.p, m, 0.0, &mut srng);
        let theta = l1_solve_boxed(&inst.a, &inst.b, &w, Some(family.radius))?;
        let val = l1_objective(&inst.a, &inst.b, &ones, &theta);
        if val <= (1.0 + family.eps / 2.0) * opt + 1e-12 {
            ok += 1;
        }
    }
    Ok(ok as f64 / family.trials as f64)
}

fn ladder_search(
    target: &str,
    start: i32,
    threshold: f64,
    seed: u64,
    mut rate: impl FnMut(f64) -> Result<f64>,
) -> Result<CalibrationReport> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::domain(format!("threshold {threshold} not in (0, 1]")));
    }
    let mut ladder = Vec::new();
    for k in start..start + LADDER_STEPS {
        let c = 2f64.powi(k);
        let r = rate(c)?;
        ladder.push(Rung {
            constant: c,
            success_rate: r,
        });
        if r >= threshold {
            return Ok(CalibrationReport {
                target: target.to_string(),
                constant: c,
                threshold,
                seed,
                ladder,
            });
        }
    }
    Err(Error::Solver(format!("{target}: no rung reached success rate {threshold}")))
}

pub fn calibrate_c_m(family: &SparsifierFamily, threshold: f64, seed: u64) -> Result<CalibrationReport> {
    ladder_search("c_M", LADDER_START_C_M, threshold, seed, |c| sparsifier_success_rate(family, c, seed))
}

pub fn calibrate_c_lewis(family: &LewisFamily, threshold: f64, seed: u64) -> Result<CalibrationReport> {
    ladder_search("c_m", LADDER_START_C_LEWIS, threshold, seed, |c| lewis_success_rate(family, c, seed))
}

/// Reference family for measuring the sparsifier oracle's trade-off curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhiFamily {
    pub n: usize,
    pub horizon: usize,
    pub opts: Vec<usize>,
    pub prefixes: Vec<usize>,
    pub eps_grid: Vec<f64>,
    pub trials: usize,
    pub c_m: f64,
}

impl PhiFamily {
    pub fn new(n: usize, horizon: usize, c_m: f64) -> Self {
        let cap = horizon * 3 / 4 / 2;
        let opts = [0.01, 0.1, 0.3]
            .iter()
            .map(|f| ((f * horizon as f64) as usize).clamp(1, cap.max(1)))
            .collect();
        let prefixes = [16, 64, 256, 1024, 4096]
            .into_iter()
            .filter(|&t| t < horizon)
            .chain([horizon])
            .collect();
        Self {
            n,
            horizon,
            opts,
            prefixes,
            eps_grid: (0..=4).map(|k| 2f64.powi(k - 4)).collect(),
            trials: 100,
            c_m,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhiSample {
    pub opt: usize,
    pub t: usize,
    pub eps: f64,
    /// `2t·β̂(t, ε)`.
    pub scaled: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasuredPhi {
    /// Upper envelope `(ε, max 2t·β̂)` over the family.
    pub points: Vec<(f64, f64)>,
    pub samples: Vec<PhiSample>,
}

/// Floor keeping the tabulated curve strictly positive.
const PHI_FLOOR: f64 = 1e-3;

impl MeasuredPhi {
    pub fn spec(&self) -> Result<PhiSpec> {
        Ok(PhiSpec::Custom(CustomPhi::tabulated(self.points.clone())?))
    }
}

/// Measures `φ(ε)` as the upper envelope of `2t` times the coupled
/// single-deletion sensitivity of the sparsifier oracle over planted
/// instances and prefix lengths.
pub fn measure_submod_phi(family: &PhiFamily, seed: u64) -> Result<MeasuredPhi> {
    let mut grid = family.eps_grid.clone();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    if grid.len() < 2 || grid.iter().any(|&e| !(e > 0.0 && e <= 1.0)) {
        return Err(Error::domain("ε grid needs at least two values in (0, 1]"));
    }
    let mut samples = Vec::new();
    for (i, &opt) in family.opts.iter().enumerate() {
        let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(seed, "phi-instance", i as u64));
        let (inst, _) = planted_submodular(family.n, family.horizon, opt, &mut rng)?;
        let order = random_order_stream(&(0..inst.len()).collect::<Vec<_>>(), derive_seed(seed, "phi-order", i as u64))?;
        let mut oracle = SparsifierOracle::new(family.n, family.horizon, family.c_m)?;
        let mut next = 0;
        for &t in &family.prefixes {
            if t < 2 || t > order.len() {
                continue;
            }
            while next < t {
                oracle.observe(inst.normalized_loss(order[next]));
                next += 1;
            }
            for (j, &eps) in grid.iter().enumerate() {
                let s = derive_seed(seed, "phi-trials", (i * 1000 + t) as u64 * 64 + j as u64);
                let beta = oracle.coupled_sensitivity(eps, family.trials, s)?;
                samples.push(PhiSample {
                    opt,
                    t,
                    eps,
                    scaled: 2.0 * t as f64 * beta,
                });
            }
        }
    }
    let points = grid
        .iter()
        .map(|&eps| {
            let top = samples
                .iter()
                .filter(|s| s.eps == eps)
                .map(|s| s.scaled)
                .fold(PHI_FLOOR, f64::max);
            (eps, top)
        })
        .collect();
    Ok(MeasuredPhi { points, samples })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ladder_stops_at_first_success() {
        let rep = ladder_search("x", -2, 0.5, 0, |c| Ok(if c >= 1.0 { 0.9 } else { 0.1 })).unwrap();
        assert_eq!(rep.constant, 1.0);
        assert_eq!(rep.ladder.len(), 3);
        assert!(ladder_search("x", 0, 0.5, 0, |_| Ok(0.0)).is_err());
    }

    #[test]
    fn tighter_threshold_never_lowers_constant() {
        let small = SparsifierFamily {
            trials: 20,
            ..Default::default()
        };
        let a = calibrate_c_m(&small, 0.8, 1).unwrap();
        let b = calibrate_c_m(&small, 0.95, 1).unwrap();
        assert!(b.constant >= a.constant);
    }
}
