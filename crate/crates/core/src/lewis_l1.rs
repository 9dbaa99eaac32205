//! ℓ1 Lewis weights, weighted ℓ1 regression, and the Lewis-sampling oracle.

use microlp::{ComparisonOp, OptimizationDirection, Problem, SolveOutcome};
use nalgebra::{DMatrix, SVD};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conjugate::PhiSpec;
use crate::error::{Error, Result};

/// Calibrated constant in `m = ⌈c_m·(d/ε²)·ln(dT/ε)⌉` (see `calibrate`).
pub const DEFAULT_C_LEWIS: f64 = 0.25;
pub const LEWIS_TOL: f64 = 1e-10;
pub const LEWIS_MAX_ITER: usize = 100;
const PINV_RCOND: f64 = 1e-12;
pub const MAX_DIM: usize = 8;

/// Converged ℓ1 Lewis weights with the induced sampling distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LewisState {
    pub w: Vec<f64>,
    pub rank: usize,
    /// `w / rank`.
    pub p: Vec<f64>,
    pub iterations: usize,
    /// `max_i |w_i² − a_iᵀ(AᵀW⁻¹A)†a_i|`.
    pub residual: f64,
    /// Whether the damped fallback was used.
    pub damped: bool,
}

fn check_rows(a: &DMatrix<f64>) -> Result<()> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Err(Error::domain("matrix must be nonempty"));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::domain("matrix entries must be finite"));
    }
    for (i, row) in a.row_iter().enumerate() {
        if row.iter().all(|&x| x == 0.0) {
            return Err(Error::domain(format!("row {i} is zero")));
        }
    }
    Ok(())
}

pub fn numerical_rank(a: &DMatrix<f64>) -> usize {
    let sv = SVD::new(a.clone(), false, false).singular_values;
    let smax = sv.max();
    sv.iter().filter(|&&s| s > PINV_RCOND * smax).count()
}

/// `q_i = a_iᵀ(AᵀW⁻¹A)†a_i` for every row, computed as `w_i·τ_i` with `τ`
/// the leverage scores of `W^{-1/2}A` from a thin SVD, which avoids squaring
/// the condition number.
fn quadratic_forms(a: &DMatrix<f64>, w: &[f64]) -> Vec<f64> {
    let mut b = a.clone();
    for (mut row, &wi) in b.row_iter_mut().zip(w) {
        row /= wi.sqrt();
    }
    let svd = SVD::new(b, true, false);
    let u = svd.u.expect("left factor was requested");
    let smax = svd.singular_values.max();
    let keep: Vec<usize> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &sv)| sv > PINV_RCOND * smax)
        .map(|(k, _)| k)
        .collect();
    (0..a.nrows())
        .map(|i| w[i] * keep.iter().map(|&k| u[(i, k)] * u[(i, k)]).sum::<f64>())
        .collect()
}

/// Fixed-point iteration `w ← sqrt(diag(A(AᵀW⁻¹A)†Aᵀ))` from all ones.
///
/// Switches to the half-step average of old and new iterates if the
/// max-norm change grows for three consecutive iterations.
pub fn lewis_weights(a: &DMatrix<f64>, tol: f64, max_iter: usize) -> Result<LewisState> {
    check_rows(a)?;
    let n = a.nrows();
    let mut w = vec![1.0; n];
    let mut damped = false;
    let mut last_delta = f64::INFINITY;
    let mut growth = 0;
    for it in 1..=max_iter {
        let q = quadratic_forms(a, &w);
        let mut next: Vec<f64> = q.iter().map(|x| x.sqrt()).collect();
        if damped {
            for (nx, wi) in next.iter_mut().zip(&w) {
                *nx = 0.5 * (*nx + wi);
            }
        }
        if next.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::NoConvergence {
                iterations: it,
                residual: f64::NAN,
                last: next,
            });
        }
        let delta = next.iter().zip(&w).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        w = next;
        if delta < tol {
            let q = quadratic_forms(a, &w);
            let residual = w.iter().zip(&q).map(|(wi, qi)| (wi * wi - qi).abs()).fold(0.0, f64::max);
            let rank = numerical_rank(a);
            let p = w.iter().map(|wi| wi / rank as f64).collect();
            return Ok(LewisState {
                w,
                rank,
                p,
                iterations: it,
                residual,
                damped,
            });
        }
        if delta > last_delta {
            growth += 1;
            if growth >= 3 && !damped {
                damped = true;
                growth = 0;
            }
        } else {
            growth = 0;
        }
        last_delta = delta;
    }
    let q = quadratic_forms(a, &w);
    let residual = w.iter().zip(&q).map(|(wi, qi)| (wi * wi - qi).abs()).fold(0.0, f64::max);
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual,
        last: w,
    })
}

/// `Σ_k weight_k·|⟨a_k, θ⟩ − b_k|`.
pub fn l1_objective(a: &DMatrix<f64>, b: &[f64], weights: &[f64], theta: &[f64]) -> f64 {
    a.row_iter()
        .zip(b)
        .zip(weights)
        .map(|((row, bk), wk)| {
            let fit: f64 = row.iter().zip(theta).map(|(x, t)| x * t).sum();
            wk * (fit - bk).abs()
        })
        .sum()
}

fn check_problem(a: &DMatrix<f64>, b: &[f64], weights: &[f64]) -> Result<()> {
    if b.len() != a.nrows() {
        return Err(Error::SizeMismatch {
            expected: a.nrows(),
            got: b.len(),
        });
    }
    if weights.len() != a.nrows() {
        return Err(Error::SizeMismatch {
            expected: a.nrows(),
            got: weights.len(),
        });
    }
    if weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
        return Err(Error::domain("weights must be finite and nonnegative"));
    }
    if weights.iter().all(|&w| w == 0.0) {
        return Err(Error::domain("weights must not all be zero"));
    }
    Ok(())
}

/// Weighted ℓ1 regression as a linear program, unconstrained in θ.
pub fn l1_solve(a: &DMatrix<f64>, b: &[f64], weights: &[f64]) -> Result<Vec<f64>> {
    l1_solve_boxed(a, b, weights, None)
}

/// Weighted ℓ1 regression with `θ ∈ [−R, R]^d` when `radius` is given.
pub fn l1_solve_boxed(a: &DMatrix<f64>, b: &[f64], weights: &[f64], radius: Option<f64>) -> Result<Vec<f64>> {
    check_problem(a, b, weights)?;
    let d = a.ncols();
    let bound = radius.map_or((f64::NEG_INFINITY, f64::INFINITY), |r| (-r, r));
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let theta: Vec<_> = (0..d).map(|_| lp.add_var(0.0, bound)).collect();
    for ((row, &bk), &wk) in a.row_iter().zip(b).zip(weights) {
        if wk == 0.0 {
            continue;
        }
        let over = lp.add_var(wk, (0.0, f64::INFINITY));
        let under = lp.add_var(wk, (0.0, f64::INFINITY));
        let mut expr: Vec<_> = theta.iter().zip(row.iter()).map(|(&v, &x)| (v, x)).collect();
        expr.push((over, -1.0));
        expr.push((under, 1.0));
        lp.add_constraint(expr.as_slice(), ComparisonOp::Eq, bk);
    }
    match lp.solve() {
        Ok(SolveOutcome::Solution(sol)) => Ok(theta.iter().map(|&v| sol[v]).collect()),
        Ok(other) => Err(Error::Solver(format!("{other:?}"))),
        Err(e) => Err(Error::Solver(e.to_string())),
    }
}

/// Smallest minimizer of `Σ_k w_k·|a_k θ − b_k|` over `θ ∈ ℝ` (or the box).
pub fn weighted_median_1d(a: &[f64], b: &[f64], weights: &[f64], radius: Option<f64>) -> Result<f64> {
    if a.len() != b.len() || a.len() != weights.len() {
        return Err(Error::SizeMismatch {
            expected: a.len(),
            got: b.len().min(weights.len()),
        });
    }
    let mut pts: Vec<(f64, f64)> = a
        .iter()
        .zip(b)
        .zip(weights)
        .filter(|((ak, _), wk)| **ak != 0.0 && **wk > 0.0)
        .map(|((ak, bk), wk)| (bk / ak, wk * ak.abs()))
        .collect();
    if pts.is_empty() {
        return Ok(radius.map_or(0.0, |r| 0f64.clamp(-r, r)));
    }
    pts.sort_by(|x, y| x.0.total_cmp(&y.0));
    let total: f64 = pts.iter().map(|p| p.1).sum();
    let mut acc = 0.0;
    let mut theta = pts[pts.len() - 1].0;
    for &(x, w) in &pts {
        acc += w;
        if acc >= 0.5 * total {
            theta = x;
            break;
        }
    }
    Ok(match radius {
        Some(r) => theta.clamp(-r, r),
        None => theta,
    })
}

/// Exact minimum by vertex enumeration for `d = 2`: every optimum is attained
/// at an intersection of two active lines (data rows or box faces).
pub fn vertex_enum_2d(a: &DMatrix<f64>, b: &[f64], weights: &[f64], radius: Option<f64>) -> Result<(Vec<f64>, f64)> {
    check_problem(a, b, weights)?;
    if a.ncols() != 2 {
        return Err(Error::SizeMismatch {
            expected: 2,
            got: a.ncols(),
        });
    }
    let mut lines: Vec<([f64; 2], f64)> = a.row_iter().zip(b).map(|(r, &bk)| ([r[0], r[1]], bk)).collect();
    if let Some(r) = radius {
        lines.extend([([1.0, 0.0], r), ([1.0, 0.0], -r), ([0.0, 1.0], r), ([0.0, 1.0], -r)]);
    }
    let inside = |t: &[f64; 2]| radius.is_none_or(|r| t.iter().all(|x| x.abs() <= r * (1.0 + 1e-12)));
    let mut best: Option<(Vec<f64>, f64)> = None;
    for i in 0..lines.len() {
        for j in (i + 1)..lines.len() {
            let ([p, q], u) = lines[i];
            let ([r, s], v) = lines[j];
            let det = p * s - q * r;
            if det.abs() < 1e-14 * (p.abs() + q.abs()) * (r.abs() + s.abs()) {
                continue;
            }
            let t = [(u * s - q * v) / det, (p * v - u * r) / det];
            if !inside(&t) {
                continue;
            }
            let obj = l1_objective(a, b, weights, &t);
            if best.as_ref().is_none_or(|(_, o)| obj < *o) {
                best = Some((t.to_vec(), obj));
            }
        }
    }
    match best {
        Some(x) => Ok(x),
        None => {
            // rank-deficient data without a box: fall back to the LP
            let t = l1_solve_boxed(a, b, weights, radius)?;
            let obj = l1_objective(a, b, weights, &t);
            Ok((t, obj))
        }
    }
}

/// Exact OPT: weighted median (`d = 1`), vertex enumeration (`d = 2`), or the
/// LP itself (`d ≥ 3`, near-exact at solver tolerance).
pub fn exact_l1_opt(a: &DMatrix<f64>, b: &[f64], radius: Option<f64>) -> Result<(Vec<f64>, f64)> {
    let ones = vec![1.0; a.nrows()];
    match a.ncols() {
        1 => {
            let col: Vec<f64> = a.column(0).iter().copied().collect();
            let t = weighted_median_1d(&col, b, &ones, radius)?;
            let obj = l1_objective(a, b, &ones, &[t]);
            Ok((vec![t], obj))
        }
        2 => vertex_enum_2d(a, b, &ones, radius),
        _ => {
            let t = l1_solve_boxed(a, b, &ones, radius)?;
            let obj = l1_objective(a, b, &ones, &t);
            Ok((t, obj))
        }
    }
}

/// `m = ⌈c_m·(d/ε²)·ln(dT/ε)⌉`, at least one.
pub fn sample_count(c_m: f64, d: usize, eps: f64, horizon: usize) -> usize {
    let df = d as f64;
    let raw = c_m * df / (eps * eps) * (df * horizon as f64 / eps).ln();
    (raw.ceil() as usize).max(1)
}

/// `φ(ε) = 16·(c_m·d + 1)·ε^{-3}·ln(e + dT/ε)`, which dominates `16m/ε` with
/// `m` rounded up.
pub fn l1_phi(d: usize, horizon: usize, c_m: f64) -> PhiSpec {
    PhiSpec::PowerLog {
        c1: 16.0 * (c_m * d as f64 + 1.0),
        q: 3.0,
        c2: (d * horizon.max(1)) as f64,
    }
}

/// Draws `m` indices from `p` and returns aggregated per-row weights
/// `Σ 1/(m·p̃)`, with `p̃ ~ U[p, (1+ε/2)p]` per draw.
pub fn lewis_sample(p: &[f64], m: usize, eps: f64, rng: &mut impl Rng) -> Vec<f64> {
    let mut cdf = Vec::with_capacity(p.len());
    let mut acc = 0.0;
    for &pi in p {
        acc += pi;
        cdf.push(acc);
    }
    let total = acc;
    let mut weights = vec![0.0; p.len()];
    let mf = m as f64;
    for _ in 0..m {
        let u: f64 = rng.gen::<f64>() * total;
        let i = cdf.partition_point(|&c| c <= u).min(p.len() - 1);
        let v: f64 = rng.gen();
        let pt = p[i] * (1.0 + 0.5 * eps * v);
        weights[i] += 1.0 / (mf * pt);
    }
    weights
}

/// Lewis-weight sampling followed by weighted ℓ1 regression on the sample.
pub fn offline_l1_oracle(
    a: &DMatrix<f64>,
    b: &[f64],
    eps: f64,
    horizon: usize,
    c_m: f64,
    radius: Option<f64>,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::precondition(format!("ε must lie in (0, 1), got {eps}")));
    }
    if a.ncols() > MAX_DIM {
        return Err(Error::capacity(format!("dimension {} exceeds {MAX_DIM}", a.ncols())));
    }
    let state = lewis_weights(a, LEWIS_TOL, LEWIS_MAX_ITER)?;
    let m = sample_count(c_m, a.ncols(), eps, horizon.max(a.nrows()));
    let weights = lewis_sample(&state.p, m, eps, rng);
    if a.ncols() == 1 {
        let col: Vec<f64> = a.column(0).iter().copied().collect();
        return Ok(vec![weighted_median_1d(&col, b, &weights, radius)?]);
    }
    l1_solve_boxed(a, b, &weights, radius)
}

/// Row-deletion audit of the Lewis sampling distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct L1SensitivityReport {
    /// `‖p(A) − p(A^{(−i)})‖₁` with `p(A^{(−i)})` zero-extended.
    pub shift: Vec<f64>,
    /// `2w_i/r`.
    pub identity: Vec<f64>,
    pub average: f64,
    /// `2/t`.
    pub bound: f64,
    pub max_identity_gap: f64,
    /// `max_{i, j≠i} (w_j(A) − w_j(A^{(−i)}))`; nonpositive when weights
    /// never decrease under deletion.
    pub max_monotonicity_violation: f64,
}

impl L1SensitivityReport {
    /// Average single-deletion TV bound `(4m/ε)·avg` and its cap `8m/(εt)`.
    pub fn tv_bound(&self, m: usize, eps: f64) -> (f64, f64) {
        let f = 4.0 * m as f64 / eps;
        (f * self.average, f * self.bound)
    }
}

fn delete_row(a: &DMatrix<f64>, i: usize) -> DMatrix<f64> {
    a.clone().remove_row(i)
}

pub fn l1_sensitivity_audit(a: &DMatrix<f64>) -> Result<L1SensitivityReport> {
    let t = a.nrows();
    if t < 2 {
        return Err(Error::domain("row-deletion audit needs at least two rows"));
    }
    if a.ncols() > MAX_DIM {
        return Err(Error::capacity(format!("dimension {} exceeds {MAX_DIM}", a.ncols())));
    }
    let base = lewis_weights(a, LEWIS_TOL, LEWIS_MAX_ITER)?;
    let r = base.rank as f64;
    let mut shift = Vec::with_capacity(t);
    let mut identity = Vec::with_capacity(t);
    let mut violation = f64::NEG_INFINITY;
    for i in 0..t {
        let del = lewis_weights(&delete_row(a, i), LEWIS_TOL, LEWIS_MAX_ITER).map_err(|e| e.at_round(i))?;
        let mut s = base.p[i];
        for (j, (&wd, &pd)) in del.w.iter().zip(&del.p).enumerate() {
            let jj = if j < i { j } else { j + 1 };
            s += (base.p[jj] - pd).abs();
            violation = violation.max(base.w[jj] - wd);
        }
        shift.push(s);
        identity.push(2.0 * base.w[i] / r);
    }
    let max_identity_gap = shift.iter().zip(&identity).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    Ok(L1SensitivityReport {
        average: shift.iter().sum::<f64>() / t as f64,
        bound: 2.0 / t as f64,
        shift,
        identity,
        max_identity_gap,
        max_monotonicity_violation: violation,
    })
}
