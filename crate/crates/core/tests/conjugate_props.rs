use proptest::prelude::*;
use smallloss::conjugate::{small_loss_bound, eval_phi, phi_star, PhiSpec};
use smallloss::eps_min;

fn power_log() -> impl Strategy<Value = PhiSpec> {
    (0.01f64..100.0, 0.5f64..4.0, prop_oneof![Just(0.0), 0.0f64..100.0])
        .prop_map(|(c1, q, c2)| PhiSpec::power_log(c1, q, c2).unwrap())
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn value_matches_its_own_minimizer(spec in power_log(), u in 1e-3f64..1e3) {
        let p = phi_star(&spec, u).unwrap();
        let direct = u * p.eps_min + eval_phi(&spec, p.eps_min).unwrap();
        prop_assert!(rel(p.phi_star, direct) < 1e-12);
    }

    #[test]
    fn fenchel_young(spec in power_log(), u in 1e-3f64..1e3, eps in 1e-3f64..1e3) {
        let p = phi_star(&spec, u).unwrap();
        let rhs = u * eps + eval_phi(&spec, eps).unwrap();
        prop_assert!(rhs - p.phi_star >= -1e-9 * rhs.max(1.0));
    }

    #[test]
    fn nondecreasing(spec in power_log(), u1 in 1e-3f64..1e3, u2 in 1e-3f64..1e3) {
        let (lo, hi) = if u1 <= u2 { (u1, u2) } else { (u2, u1) };
        let a = phi_star(&spec, lo).unwrap().phi_star;
        let b = phi_star(&spec, hi).unwrap().phi_star;
        prop_assert!(b - a >= -1e-9 * b.max(1.0));
    }

    #[test]
    fn concave(spec in power_log(), u1 in 1e-3f64..1e3, u2 in 1e-3f64..1e3, lam in 0.0f64..=1.0) {
        let mid = lam * u1 + (1.0 - lam) * u2;
        let f = |u| phi_star(&spec, u).unwrap().phi_star;
        let chord = lam * f(u1) + (1.0 - lam) * f(u2);
        prop_assert!(f(mid) - chord >= -1e-9 * chord.max(1.0));
    }

    #[test]
    fn minimizer_is_supergradient(spec in power_log(), u in 1e-3f64..1e3, v in 1e-3f64..1e3) {
        let p = phi_star(&spec, u).unwrap();
        let fv = phi_star(&spec, v).unwrap().phi_star;
        let tangent = p.phi_star + p.eps_min * (v - u);
        prop_assert!(tangent - fv >= -1e-9 * tangent.abs().max(1.0));
    }

    #[test]
    fn closed_form_matches_first_order_condition(c1 in 0.01f64..100.0, q in 0.5f64..4.0, u in 1e-3f64..1e3) {
        let spec = PhiSpec::power_log(c1, q, 0.0).unwrap();
        let e = eps_min(&spec, u).unwrap();
        // d/dε (uε + C1 ε^{-q}) = u − q C1 ε^{-q-1}
        prop_assert!(rel(u, q * c1 * e.powf(-q - 1.0)) < 1e-10);
    }

    #[test]
    fn small_loss_bound_dominates(spec in power_log(), opt in 0.0f64..1e3, h in 1.0f64..20.0) {
        let q = spec.exponent().unwrap();
        let a0 = h.powf(-1.0 / q);
        let bound = small_loss_bound(&spec, opt, h, a0).unwrap();
        let exact = h * phi_star(&spec, (a0 + opt) / h).unwrap().phi_star;
        prop_assert!(bound - exact >= -1e-9 * exact.max(1.0));
    }
}

#[test]
fn rejects_nonpositive_u() {
    let spec = PhiSpec::power_log(1.0, 1.0, 0.0).unwrap();
    assert!(phi_star(&spec, 0.0).is_err());
    assert!(phi_star(&spec, -1.0).is_err());
}
