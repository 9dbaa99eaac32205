//! The approximation–sensitivity trade-off function φ and its concave
//! conjugate
//!
//! ```text
//! φ★(u) = inf_{ε ≥ 0} { u·ε + φ(ε) },      ε_min(u) ∈ argmin_ε { u·ε + φ(ε) }
//! ```
//!
//! `ε_min(u)` is a supergradient of the concave, non-decreasing map `φ★`,
//! which is what the adaptive controller telescopes against.
//!
//! The power-log family `φ(ε) = C1·ε^{-q}·log(e + C2/ε)` has a closed-form
//! minimizer `(q·C1/u)^{1/(q+1)}` when `C2 = 0`; every other case goes
//! through a coarse log-grid bracket followed by golden-section search in
//! `log ε`.

use std::f64::consts::E;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower end of the numeric search range for `ε_min`.
pub const SEARCH_LO: f64 = 1e-8;
/// Upper end of the numeric search range for `ε_min`.
pub const SEARCH_HI: f64 = 1e8;

const COARSE_POINTS: usize = 64;
const GOLDEN_REL_TOL: f64 = 1e-10;

type PhiFn = dyn Fn(f64) -> f64 + Send + Sync;

/// A user-supplied φ with a declared evaluation domain `[lo, hi]`.
#[derive(Clone)]
pub struct CustomPhi {
    label: String,
    func: Arc<PhiFn>,
    lo: f64,
    hi: f64,
    // Present when the function came from a tabulated file, so it can be
    // written back out.
    table: Option<Vec<(f64, f64)>>,
}

impl CustomPhi {
    pub fn new(
        label: impl Into<String>,
        func: impl Fn(f64) -> f64 + Send + Sync + 'static,
        lo: f64,
        hi: f64,
    ) -> Result<Self> {
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::domain(format!(
                "custom φ domain must satisfy 0 < lo < hi < ∞, got [{lo}, {hi}]"
            )));
        }
        Ok(Self {
            label: label.into(),
            func: Arc::new(func),
            lo,
            hi,
            table: None,
        })
    }

    /// Custom φ with the default domain `[1e-8, 1e8]`.
    pub fn with_default_domain(
        label: impl Into<String>,
        func: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self::new(label, func, SEARCH_LO, SEARCH_HI).expect("default domain is valid")
    }

    /// Piecewise log-log interpolation through `(ε, φ(ε))` points.
    ///
    /// Points must have strictly increasing positive ε and nonnegative φ.
    pub fn tabulated(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::domain("tabulated φ needs at least two points"));
        }
        for w in points.windows(2) {
            if !(w[0].0 > 0.0 && w[1].0 > w[0].0) {
                return Err(Error::domain("tabulated φ abscissae must be positive and increasing"));
            }
        }
        if points.iter().any(|&(_, y)| !(y >= 0.0 && y.is_finite())) {
            return Err(Error::domain("tabulated φ values must be finite and nonnegative"));
        }
        let lo = points[0].0;
        let hi = points[points.len() - 1].0;
        let pts = points.clone();
        let func = move |eps: f64| interpolate(&pts, eps);
        let mut phi = Self::new("tabulated", func, lo, hi)?;
        phi.table = Some(points);
        Ok(phi)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }
}

fn interpolate(points: &[(f64, f64)], eps: f64) -> f64 {
    let k = points.partition_point(|&(x, _)| x <= eps);
    if k == 0 {
        return points[0].1;
    }
    if k == points.len() {
        return points[k - 1].1;
    }
    let (x0, y0) = points[k - 1];
    let (x1, y1) = points[k];
    if y0 > 0.0 && y1 > 0.0 {
        let s = (eps.ln() - x0.ln()) / (x1.ln() - x0.ln());
        (y0.ln() + s * (y1.ln() - y0.ln())).exp()
    } else {
        let s = (eps - x0) / (x1 - x0);
        y0 + s * (y1 - y0)
    }
}

impl fmt::Debug for CustomPhi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomPhi")
            .field("label", &self.label)
            .field("lo", &self.lo)
            .field("hi", &self.hi)
            .finish()
    }
}

/// The approximation–sensitivity trade-off φ of an offline oracle.
#[derive(Clone, Debug)]
pub enum PhiSpec {
    /// `φ(ε) = c1·ε^{-q}·ln(e + c2/ε)`.
    PowerLog { c1: f64, q: f64, c2: f64 },
    Custom(CustomPhi),
}

impl PhiSpec {
    pub fn power_log(c1: f64, q: f64, c2: f64) -> Result<Self> {
        if !(c1 > 0.0 && c1.is_finite()) {
            return Err(Error::domain(format!("C1 must be positive, got {c1}")));
        }
        if !(q > 0.0 && q.is_finite()) {
            return Err(Error::domain(format!("q must be positive, got {q}")));
        }
        if !(c2 >= 0.0 && c2.is_finite()) {
            return Err(Error::domain(format!("C2 must be nonnegative, got {c2}")));
        }
        Ok(PhiSpec::PowerLog { c1, q, c2 })
    }

    /// Evaluation domain; the power-log family is defined on all ε > 0.
    pub fn domain(&self) -> (f64, f64) {
        match self {
            PhiSpec::PowerLog { .. } => (0.0, f64::INFINITY),
            PhiSpec::Custom(c) => (c.lo, c.hi),
        }
    }

    /// The interval searched numerically for `ε_min`.
    pub fn search_domain(&self) -> (f64, f64) {
        let (lo, hi) = self.domain();
        (lo.max(SEARCH_LO), hi.min(SEARCH_HI))
    }

    /// Exponent `q` for the power-log family.
    pub fn exponent(&self) -> Option<f64> {
        match self {
            PhiSpec::PowerLog { q, .. } => Some(*q),
            PhiSpec::Custom(_) => None,
        }
    }

    fn raw(&self, eps: f64) -> f64 {
        match *self {
            PhiSpec::PowerLog { c1, q, c2 } => c1 * eps.powf(-q) * (E + c2 / eps).ln(),
            PhiSpec::Custom(ref c) => (c.func)(eps),
        }
    }

    /// Evaluates φ, clamping ε into the declared domain of a custom φ.
    ///
    /// Clamping is logged at warn level.
    pub fn eval_clamped(&self, eps: f64) -> f64 {
        let (lo, hi) = self.domain();
        if eps < lo || eps > hi {
            let clamped = eps.clamp(lo, hi);
            log::warn!("φ evaluated at ε = {eps:e} outside [{lo:e}, {hi:e}]; clamped to {clamped:e}");
            return self.raw(clamped);
        }
        self.raw(eps)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum PhiSpecRepr {
    PowerLog { c1: f64, q: f64, c2: f64 },
    Tabulated { points: Vec<(f64, f64)> },
}

impl Serialize for PhiSpec {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let repr = match self {
            PhiSpec::PowerLog { c1, q, c2 } => PhiSpecRepr::PowerLog {
                c1: *c1,
                q: *q,
                c2: *c2,
            },
            PhiSpec::Custom(c) => match &c.table {
                Some(points) => PhiSpecRepr::Tabulated {
                    points: points.clone(),
                },
                None => {
                    return Err(serde::ser::Error::custom(format!(
                        "custom φ '{}' has no serializable form",
                        c.label
                    )))
                }
            },
        };
        repr.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for PhiSpec {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = PhiSpecRepr::deserialize(deserializer)?;
        let spec = match repr {
            PhiSpecRepr::PowerLog { c1, q, c2 } => PhiSpec::power_log(c1, q, c2),
            PhiSpecRepr::Tabulated { points } => CustomPhi::tabulated(points).map(PhiSpec::Custom),
        };
        spec.map_err(serde::de::Error::custom)
    }
}

/// A point on the conjugate: `phi_star = u·eps_min + φ(eps_min)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConjugatePoint {
    pub u: f64,
    pub eps_min: f64,
    pub phi_star: f64,
}

/// φ(ε), exactly per the family formula.
pub fn eval_phi(spec: &PhiSpec, eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::domain(format!("φ needs ε > 0, got {eps}")));
    }
    let (lo, hi) = spec.domain();
    if eps < lo || eps > hi {
        return Err(Error::domain(format!("ε = {eps} outside the domain [{lo}, {hi}]")));
    }
    Ok(spec.raw(eps))
}

fn check_u(u: f64) -> Result<()> {
    if u > 0.0 && u.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("conjugate argument must be positive and finite, got {u}")))
    }
}

/// A minimizer of `ε ↦ u·ε + φ(ε)`; the smallest one on ties.
pub fn eps_min(spec: &PhiSpec, u: f64) -> Result<f64> {
    check_u(u)?;
    match *spec {
        PhiSpec::PowerLog { c1, q, c2 } if c2 == 0.0 => Ok((q * c1 / u).powf(1.0 / (q + 1.0))),
        _ => Ok(numeric_eps_min(spec, u)),
    }
}

/// `(u, ε_min(u), φ★(u))`.
pub fn phi_star(spec: &PhiSpec, u: f64) -> Result<ConjugatePoint> {
    let eps = eps_min(spec, u)?;
    Ok(ConjugatePoint {
        u,
        eps_min: eps,
        phi_star: u * eps + spec.raw(eps),
    })
}

fn numeric_eps_min(spec: &PhiSpec, u: f64) -> f64 {
    let (lo, hi) = spec.search_domain();
    let (xlo, xhi) = (lo.ln(), hi.ln());
    let objective = |x: f64| {
        let eps = x.exp();
        u * eps + spec.raw(eps)
    };

    // Coarse bracket: first grid point attaining the minimum.
    let step = (xhi - xlo) / (COARSE_POINTS - 1) as f64;
    let grid_x = |i: usize| if i == COARSE_POINTS - 1 { xhi } else { xlo + step * i as f64 };
    let mut best_i = 0;
    let mut best_v = f64::INFINITY;
    for i in 0..COARSE_POINTS {
        let v = objective(grid_x(i));
        if v < best_v {
            best_v = v;
            best_i = i;
        }
    }
    let mut a = grid_x(best_i.saturating_sub(1));
    let mut b = grid_x((best_i + 1).min(COARSE_POINTS - 1));

    // Golden-section search in log ε; ties shrink to the left.
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = objective(c);
    let mut fd = objective(d);
    while b - a > GOLDEN_REL_TOL {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = objective(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = objective(d);
        }
    }

    let candidates = [grid_x(best_i), a, c, d, b];
    let mut best = (f64::INFINITY, f64::INFINITY);
    for &x in &candidates {
        let v = objective(x);
        if v < best.0 || (v == best.0 && x < best.1) {
            best = (v, x);
        }
    }
    best.1.exp().clamp(lo, hi)
}

/// Explicit upper bound on `H_T·φ★((A0 + OPT_T)/H_T)` for the power-log
/// family, obtained by plugging `ε = (q·C1/u)^{1/(q+1)}` and bounding the
/// powers of `(A0 + OPT_T)/H_T` via subadditivity.
///
/// Requires `H_T ≥ 1` and `0 < A0 ≤ H_T^{-1/q}`.
pub fn small_loss_bound(spec: &PhiSpec, opt_t: f64, h_t: f64, a0: f64) -> Result<f64> {
    let PhiSpec::PowerLog { c1, q, c2 } = *spec else {
        return Err(Error::precondition("small-loss bound needs a power-log φ"));
    };
    if !(opt_t >= 0.0 && opt_t.is_finite()) {
        return Err(Error::domain(format!("OPT_T must be nonnegative, got {opt_t}")));
    }
    if !(h_t >= 1.0 && h_t.is_finite()) {
        return Err(Error::precondition(format!("H_T must be at least 1, got {h_t}")));
    }
    let a0_max = h_t.powf(-1.0 / q);
    if !(a0 > 0.0 && a0 <= a0_max * (1.0 + 1e-12)) {
        return Err(Error::precondition(format!(
            "A0 = {a0} violates 0 < A0 ≤ H_T^(-1/q) = {a0_max}"
        )));
    }
    let k = 1.0 / (q + 1.0);
    let lead = q.powf(-q * k) * c1.powf(k);
    let power_part = 1.0 / h_t + (opt_t / h_t).powf(q * k);
    let log_part = q + (E + c2 * ((1.0 + opt_t / h_t) / (q * c1)).powf(k)).ln();
    Ok(h_t * lead * power_part * log_part)
}
