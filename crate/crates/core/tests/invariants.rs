use mlsg_core::hamnash::{
    closed_form_equilibrium, control_distance, cross_check, follower_nash_numeric,
    leader_nash_numeric, HamiltonianPoint, NashOptions, NashStart,
};
use mlsg_core::model::{k_constants, phi_psi, ModelParams, TimeCurve};
use mlsg_core::riccati::{solve_p2n2, TimeMesh};
use mlsg_core::strategies::Controls;
use proptest::prelude::*;

/// The K constants in which the production cost does not appear.
fn k_without_cost(k: &mlsg_core::model::KSet) -> [f64; 13] {
    [
        k.k1, k.k2, k.k3, k.k5, k.k6, k.k7, k.k9, k.k10, k.k11, k.k13, k.k14, k.k16, k.k17,
    ]
}

proptest! {
    #[test]
    fn price_slope_and_tail_do_not_depend_on_time(t in 0.0f64..=1.0) {
        let p = ModelParams::baseline();
        let k = k_constants(&p, t).unwrap();
        let k0 = k_constants(&p, 0.0).unwrap();
        prop_assert_eq!(k.k3.to_bits(), k0.k3.to_bits());
        prop_assert_eq!(k.k4.to_bits(), k0.k4.to_bits());
        prop_assert_eq!(k.k7.to_bits(), k0.k7.to_bits());
    }

    #[test]
    fn cost_enters_only_the_intercept_constants(c0 in 0.0f64..5.0, t in 0.0f64..=1.0) {
        let base = ModelParams::baseline();
        let k = k_constants(&base.clone().with_c0(c0), t).unwrap();
        let kb = k_constants(&base, t).unwrap();
        prop_assert_eq!(k_without_cost(&k), k_without_cost(&kb));
        let a = phi_psi(&base.clone().with_c0(c0), t).unwrap();
        let b = phi_psi(&base, t).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn quadratic_pair_ignores_cost(c0 in 0.0f64..5.0) {
        let base = ModelParams::baseline();
        let mesh = TimeMesh::new(1.0, 200).unwrap();
        let a = solve_p2n2(&base.clone().with_c0(c0), &mesh);
        let b = solve_p2n2(&base, &mesh);
        prop_assert_eq!(a.p2, b.p2);
        prop_assert_eq!(a.n2, b.n2);
    }

    #[test]
    fn clamp_yields_nonnegative_controls(
        w in -1e3f64..1e3, i_s in -1e3f64..1e3, p in -1e3f64..1e3, i_b in -1e3f64..1e3,
    ) {
        let u = Controls { w, i_s, p, i_b }.clamped();
        prop_assert!(u.w >= 0.0 && u.i_s >= 0.0 && u.p >= 0.0 && u.i_b >= 0.0);
        if w >= 0.0 { prop_assert_eq!(u.w, w); }
    }

    #[test]
    fn curves_stay_between_their_knots(
        v0 in -2.0f64..2.0, v1 in -2.0f64..2.0, v2 in -2.0f64..2.0, t in -0.5f64..1.5,
    ) {
        let c = TimeCurve::from_knots(vec![(0.0, v0), (0.4, v1), (1.0, v2)]).unwrap();
        let y = c.eval(t);
        let lo = v0.min(v1).min(v2);
        let hi = v0.max(v1).max(v2);
        prop_assert!(y >= lo - 1e-15 && y <= hi + 1e-15);
    }

    #[test]
    fn numeric_nash_matches_closed_forms(
        t in 0.0f64..=1.0, x in 0.0f64..10.0,
        y1 in -0.1f64..0.1, y2 in -0.1f64..0.1, a1 in -0.1f64..0.1, a2 in -0.1f64..0.1,
    ) {
        let p = ModelParams::baseline();
        let pt = HamiltonianPoint { t, x, y1, y2, a1, a2 };
        let res = leader_nash_numeric(&p, &pt, &NashStart::default(), &NashOptions::default()).unwrap();
        let exact = closed_form_equilibrium(&p, &pt);
        prop_assert!(control_distance(&res.controls, &exact) < 1e-8);
    }

    #[test]
    fn buyer_innovation_ignores_goodwill(x1 in 0.0f64..10.0, x2 in 0.0f64..10.0, y2 in -0.1f64..0.1) {
        let p = ModelParams::baseline();
        let opts = NashOptions::default();
        let at = |x| {
            let pt = HamiltonianPoint { t: 0.3, x, y1: 0.02, y2, a1: 0.0, a2: 0.01 };
            follower_nash_numeric(&p, &pt, (0.1, 10.0), (0.0, 0.0), &opts).unwrap().i_b
        };
        prop_assert!((at(x1) - at(x2)).abs() < 1e-10);
    }
}

#[test]
fn hundred_seeded_points_with_five_starts() {
    let cc = cross_check(&ModelParams::baseline(), 100, 5, 7).unwrap();
    assert!(cc.max_error < 1e-8, "{cc:?}");
    assert!(cc.max_multistart_spread < 1e-8, "{cc:?}");
}
