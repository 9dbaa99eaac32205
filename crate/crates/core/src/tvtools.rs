//! Total-variation distances on finite supports and uniform intervals, and the
//! composition bounds used by the sensitivity audits.

use crate::error::{Error, Result};

const MASS_TOL: f64 = 1e-12;

/// Probability vector over `0..len`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteDist {
    probs: Vec<f64>,
}

impl DiscreteDist {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::domain("distribution needs a nonempty support"));
        }
        if probs.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
            return Err(Error::domain("probabilities must be finite and nonnegative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > MASS_TOL * probs.len().max(1) as f64 {
            return Err(Error::domain(format!("probabilities sum to {total}")));
        }
        Ok(Self { probs })
    }

    /// Normalizes nonnegative weights.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::domain("weights must have positive mass"));
        }
        Self::new(weights.iter().map(|w| w / total).collect())
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Product distribution, row-major in `(self, other)`.
    pub fn product(&self, other: &DiscreteDist) -> DiscreteDist {
        let probs = self
            .probs
            .iter()
            .flat_map(|p| other.probs.iter().map(move |q| p * q))
            .collect();
        DiscreteDist { probs }
    }
}

/// `½·Σ|p_i − q_i|`.
pub fn tv_discrete(p: &DiscreteDist, q: &DiscreteDist) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::SizeMismatch {
            expected: p.len(),
            got: q.len(),
        });
    }
    let s: f64 = p.probs.iter().zip(&q.probs).map(|(a, b)| (a - b).abs()).sum();
    Ok((0.5 * s).min(1.0))
}

/// Maximal coupling of `p` and `q`: a joint table `Γ[i][j]` (row-major) with
/// marginals `p`, `q` and `Pr[X ≠ Y] = TV(p, q)`.
pub fn greedy_coupling(p: &DiscreteDist, q: &DiscreteDist) -> Result<Vec<f64>> {
    let n = p.len();
    if q.len() != n {
        return Err(Error::SizeMismatch { expected: n, got: q.len() });
    }
    let mut joint = vec![0.0; n * n];
    let overlap: Vec<f64> = p.probs.iter().zip(&q.probs).map(|(a, b)| a.min(*b)).collect();
    for i in 0..n {
        joint[i * n + i] = overlap[i];
    }
    let rp: Vec<f64> = p.probs.iter().zip(&overlap).map(|(a, o)| a - o).collect();
    let rq: Vec<f64> = q.probs.iter().zip(&overlap).map(|(b, o)| b - o).collect();
    let mass: f64 = rp.iter().sum();
    if mass > 0.0 {
        for i in 0..n {
            for j in 0..n {
                joint[i * n + j] += rp[i] * rq[j] / mass;
            }
        }
    }
    Ok(joint)
}

/// Exact TV between `Unif[B, (1+ε)B]` and `Unif[B', (1+ε)B']`, with the
/// bound `min(1, (1+ε)/ε·|1 − B'/B|)`.
pub fn tv_uniform_intervals(b: f64, bp: f64, eps: f64) -> Result<(f64, f64)> {
    for (name, v) in [("B", b), ("B'", bp), ("eps", eps)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::domain(format!("{name} must be positive, got {v}")));
        }
    }
    let lo = b.max(bp);
    let hi = ((1.0 + eps) * b).min((1.0 + eps) * bp);
    let overlap = (hi - lo).max(0.0);
    // the densities on the overlap are 1/(εB) and 1/(εB'); the shared mass
    // is overlap times the smaller one
    let shared = overlap / (eps * b.max(bp));
    let exact = (1.0 - shared).clamp(0.0, 1.0);
    let bound = ((1.0 + eps) / eps * (1.0 - bp / b).abs()).min(1.0);
    Ok((exact, bound))
}

/// `min(1, Σ tv_f)`.
pub fn tv_product_bound(tvs: &[f64]) -> Result<f64> {
    check_unit(tvs, "tv")?;
    Ok(tvs.iter().sum::<f64>().min(1.0))
}

/// `min(1, tv_marginal + Σ_z min-mass_z · tv_z)`.
pub fn tv_conditional_bound(tv_marginal: f64, diag_masses: &[f64], tv_conditionals: &[f64]) -> Result<f64> {
    if diag_masses.len() != tv_conditionals.len() {
        return Err(Error::SizeMismatch {
            expected: diag_masses.len(),
            got: tv_conditionals.len(),
        });
    }
    check_unit(&[tv_marginal], "tv_marginal")?;
    check_unit(diag_masses, "mass")?;
    check_unit(tv_conditionals, "tv")?;
    let s: f64 = diag_masses.iter().zip(tv_conditionals).map(|(m, t)| m * t).sum();
    Ok((tv_marginal + s).min(1.0))
}

fn check_unit(xs: &[f64], what: &str) -> Result<()> {
    if let Some(x) = xs.iter().find(|x| !(**x >= 0.0 && **x <= 1.0)) {
        return Err(Error::domain(format!("{what} entry {x} not in [0,1]")));
    }
    Ok(())
}
