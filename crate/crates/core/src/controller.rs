//! Adaptive choice of the approximation parameter.
//!
//! After round `t` the controller holds
//!
//! ```text
//! A_t = A_0 + Σ_{s≤t} OPT_s / s,   H_t = Σ_{s≤t} 1/s,   u_t = A_t / H_t
//! ```
//!
//! and plays `ε_t = ε_min(u_t)`, optionally clipped to a cap.

use serde::{Deserialize, Serialize};

use crate::conjugate::{eps_min, phi_star, PhiSpec};
use crate::error::{Error, Result};

/// Fallback `A_0` when the horizon or the φ family is unknown up front.
pub const DEFAULT_A0: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    /// Rounds consumed so far.
    pub t: usize,
    pub a: f64,
    pub h: f64,
    /// `A/H`; zero before the first round.
    pub u: f64,
    pub a0: f64,
    pub eps_cap: Option<f64>,
}

impl ControllerState {
    pub fn new(a0: f64, eps_cap: Option<f64>) -> Result<Self> {
        if !(a0 > 0.0 && a0.is_finite()) {
            return Err(Error::domain(format!("A0 must be positive, got {a0}")));
        }
        if let Some(cap) = eps_cap {
            if !(cap > 0.0) {
                return Err(Error::domain(format!("ε cap must be positive, got {cap}")));
            }
        }
        Ok(Self {
            t: 0,
            a: a0,
            h: 0.0,
            u: 0.0,
            a0,
            eps_cap,
        })
    }

    /// Advance to round `t + 1` with the newly observed `OPT_{t+1}`.
    ///
    /// Returns the new state and the (possibly capped) ε for that round.
    pub fn step(&self, opt_t: f64, spec: &PhiSpec) -> Result<(ControllerState, f64)> {
        if !(opt_t >= 0.0 && opt_t.is_finite()) {
            return Err(Error::domain(format!("OPT_t must be nonnegative, got {opt_t}")));
        }
        let t = self.t + 1;
        let tf = t as f64;
        let a = self.a + opt_t / tf;
        let h = self.h + 1.0 / tf;
        let u = a / h;
        let mut eps = eps_min(spec, u)?;
        if let Some(cap) = self.eps_cap {
            eps = eps.min(cap);
        }
        let next = ControllerState { t, a, h, u, ..*self };
        Ok((next, eps))
    }
}

/// `A_0 = min(1, H_T^{-1/q})` for a power-log φ, else [`DEFAULT_A0`].
pub fn default_a0(horizon: usize, spec: &PhiSpec) -> f64 {
    match spec.exponent() {
        Some(q) if horizon > 0 => harmonic(horizon).powf(-1.0 / q).min(1.0),
        _ => DEFAULT_A0,
    }
}

/// `H_t = Σ_{s=1}^t 1/s`, summed left to right.
pub fn harmonic(t: usize) -> f64 {
    (1..=t).map(|s| 1.0 / s as f64).sum()
}

/// Both sides of `OPT_t/t − u_t/t = H_{t−1}·(u_t − u_{t−1})` for `t ≥ 2`.
pub fn audit_step_identity(a_prev: f64, h_prev: f64, opt_t: f64, t: usize) -> Result<(f64, f64)> {
    if t < 2 {
        return Err(Error::domain(format!("the step identity needs t ≥ 2, got {t}")));
    }
    if !(h_prev > 0.0 && a_prev > 0.0) {
        return Err(Error::domain("previous accumulators must be positive"));
    }
    let tf = t as f64;
    let a = a_prev + opt_t / tf;
    let h = h_prev + 1.0 / tf;
    let u = a / h;
    let u_prev = a_prev / h_prev;
    Ok((opt_t / tf - u / tf, h_prev * (u - u_prev)))
}

/// Replay of the uncapped rule on an OPT sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TelescopeAudit {
    /// `Σ_t (OPT_t/t·ε_t + φ(ε_t)/t)`.
    pub sum_lhs: f64,
    /// `H_T·φ★(u_T)`.
    pub bound_rhs: f64,
    pub eps: Vec<f64>,
}

impl TelescopeAudit {
    pub fn slack(&self) -> f64 {
        self.bound_rhs - self.sum_lhs
    }
}

/// Replays the uncapped rule and returns both sides of the telescoping bound.
pub fn audit_telescope(opt_seq: &[f64], spec: &PhiSpec, a0: f64) -> Result<TelescopeAudit> {
    if opt_seq.is_empty() {
        return Err(Error::domain("OPT sequence must be nonempty"));
    }
    let mut state = ControllerState::new(a0, None)?;
    let mut sum = 0.0;
    let mut eps_seq = Vec::with_capacity(opt_seq.len());
    for &opt in opt_seq {
        let (next, eps) = state.step(opt, spec)?;
        let tf = next.t as f64;
        sum += opt / tf * eps + spec.eval_clamped(eps) / tf;
        eps_seq.push(eps);
        state = next;
    }
    let bound = state.h * phi_star(spec, state.u)?.phi_star;
    Ok(TelescopeAudit {
        sum_lhs: sum,
        bound_rhs: bound,
        eps: eps_seq,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inv() -> PhiSpec {
        PhiSpec::power_log(1.0, 1.0, 0.0).unwrap()
    }

    #[test]
    fn step_examples() {
        let s0 = ControllerState::new(1.0, None).unwrap();
        let (s1, e1) = s0.step(0.0, &inv()).unwrap();
        assert_eq!((s1.t, s1.a, s1.h, s1.u), (1, 1.0, 1.0, 1.0));
        assert_eq!(e1, 1.0);
        let (s2, e2) = s1.step(1.0, &inv()).unwrap();
        assert_eq!((s2.a, s2.h, s2.u), (1.5, 1.5, 1.0));
        assert_eq!(e2, 1.0);
    }

    #[test]
    fn zero_opts_shrink_u_and_grow_eps() {
        let mut s = ControllerState::new(0.5, None).unwrap();
        let mut prev = (f64::INFINITY, 0.0);
        for _ in 0..50 {
            let (n, e) = s.step(0.0, &inv()).unwrap();
            assert!(n.u < prev.0);
            assert!(e >= prev.1);
            assert!((e - 1.0 / (0.5 / n.h).sqrt()).abs() < 1e-12);
            prev = (n.u, e);
            s = n;
        }
    }

    #[test]
    fn cap_clips_eps() {
        let s = ControllerState::new(1e-4, Some(1.0)).unwrap();
        let (_, e) = s.step(0.0, &inv()).unwrap();
        assert_eq!(e, 1.0);
        let s = ControllerState::new(1e-4, None).unwrap();
        let (_, e) = s.step(0.0, &inv()).unwrap();
        assert!((e - 100.0).abs() < 1e-9);
    }

    #[test]
    fn step_rejects_negative_opt() {
        let s = ControllerState::new(1.0, None).unwrap();
        assert!(matches!(s.step(-0.1, &inv()), Err(Error::Domain(_))));
        assert!(ControllerState::new(0.0, None).is_err());
    }

    #[test]
    fn step_identity_examples() {
        let (l, r) = audit_step_identity(1.0, 1.0, 1.0, 2).unwrap();
        assert_eq!((l, r), (0.0, 0.0));
        // OPT_t = 0 with A_prev = A0: both sides reduce to −u_t/t.
        for t in 2..20 {
            let h_prev = harmonic(t - 1);
            let (l, r) = audit_step_identity(0.3, h_prev, 0.0, t).unwrap();
            let u = 0.3 / (h_prev + 1.0 / t as f64);
            assert!((l + u / t as f64).abs() < 1e-15);
            assert!((l - r).abs() < 1e-15);
        }
        assert!(audit_step_identity(1.0, 1.0, 0.0, 1).is_err());
    }

    #[test]
    fn telescope_single_round_slack_is_a0_eps() {
        let spec = PhiSpec::power_log(1.0, 3.0, 0.0).unwrap();
        let audit = audit_telescope(&[0.7], &spec, 0.25).unwrap();
        let eps = audit.eps[0];
        assert!((audit.slack() - 0.25 * eps).abs() < 1e-12);
    }

    #[test]
    fn telescope_examples() {
        let zeros = vec![0.0; 64];
        let a = audit_telescope(&zeros, &inv(), 1.0).unwrap();
        let h = harmonic(64);
        assert!((a.bound_rhs - h * 2.0 * (1.0 / h).sqrt()).abs() < 1e-12);
        assert!(a.sum_lhs <= a.bound_rhs + 1e-9);

        let ones = vec![1.0; 100];
        let a = audit_telescope(&ones, &PhiSpec::power_log(1.0, 3.0, 0.0).unwrap(), 1.0).unwrap();
        assert!(a.slack() >= -1e-9);
    }

    #[test]
    fn adagrad_correspondence() {
        let mut s = ControllerState::new(0.2, None).unwrap();
        for t in 1..200 {
            let opt = (t as f64 * 0.37).sin().abs() * t as f64;
            let (n, e) = s.step(opt, &inv()).unwrap();
            assert!((e - (n.h / n.a).sqrt()).abs() < 1e-12);
            s = n;
        }
    }

    #[test]
    fn default_a0_meets_bound_precondition() {
        let spec = PhiSpec::power_log(3.0, 3.0, 0.0).unwrap();
        let a0 = default_a0(1000, &spec);
        assert!(a0 <= harmonic(1000).powf(-1.0 / 3.0) + 1e-15);
        assert_eq!(default_a0(1, &spec), 1.0);
        let c = PhiSpec::Custom(crate::conjugate::CustomPhi::with_default_domain("c", |e| 1.0 / e));
        assert_eq!(default_a0(10, &c), DEFAULT_A0);
    }
}
