use mlsg_core::riccati::{solve, TimeMesh};
use mlsg_core::sim::{
    deviation_test, simulate, simulate_paths, Adjustment, Perturbation, Player, SimConfig, Target,
};
use mlsg_core::strategies::{strategy_coefficients, StrategyCoefficients};
use mlsg_core::ModelParams;

fn baseline() -> (ModelParams, StrategyCoefficients) {
    let p = ModelParams::baseline();
    let sol = solve(&p, &TimeMesh::new(1.0, 1000).unwrap()).unwrap();
    let c = strategy_coefficients(&p, &sol).unwrap();
    (p, c)
}

fn cfg(n_paths: usize, n_steps: usize) -> SimConfig {
    SimConfig {
        n_paths,
        n_steps,
        seed: 42,
        x0: 1.0,
        sigma_scale: 1.0,
        perturbation: None,
    }
}

/// Deterministic goodwill and discounted profits by classical RK4, with the
/// controls of an optional buyer deviation applied the same way a
/// practitioner would: scale the buyer's linear rules, let the seller's
/// wholesale price follow the posted retail price.
fn rk4_profits(p: &ModelParams, c: &StrategyCoefficients, buyer_factor: f64, n: usize) -> (f64, f64) {
    let pass = p.gamma_p / (2.0 * p.gamma_w);
    let rhs = |t: f64, y: [f64; 3]| {
        let x = y[0];
        let lin = c.linear_controls(t, x);
        let eq_p = lin.p.max(0.0);
        let price = (buyer_factor * lin.p).max(0.0);
        let i_b = (buyer_factor * lin.i_b).max(0.0);
        let w = (lin.w - pass * (price - eq_p)).max(0.0);
        let i_s = lin.i_s.max(0.0);
        let demand = p.alpha - p.gamma_p * price - p.gamma_w * w + p.gamma_x * x;
        let disc = (-p.r * t).exp();
        let dx = p.beta_p.eval(t) * price + p.beta_w.eval(t) * w - p.beta_x * x
            + p.delta.eval(t) * (i_s + i_b);
        [
            dx,
            disc * ((w - p.c0) * demand - i_s * i_s),
            disc * ((price - w) * demand - i_b * i_b),
        ]
    };
    let h = p.horizon / n as f64;
    let mut y = [1.0, 0.0, 0.0];
    let add = |y: [f64; 3], k: [f64; 3], s: f64| [y[0] + s * k[0], y[1] + s * k[1], y[2] + s * k[2]];
    for i in 0..n {
        let t = i as f64 * h;
        let k1 = rhs(t, y);
        let k2 = rhs(t + h / 2.0, add(y, k1, h / 2.0));
        let k3 = rhs(t + h / 2.0, add(y, k2, h / 2.0));
        let k4 = rhs(t + h, add(y, k3, h));
        for j in 0..3 {
            y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
    }
    (y[1], y[2])
}

#[test]
fn zero_noise_matches_deterministic_integrator() {
    let (p, c) = baseline();
    let (js, jb) = rk4_profits(&p, &c, 1.0, 20_000);
    let run = simulate(&p, &c, &SimConfig { n_paths: 1, n_steps: 1_000_000, sigma_scale: 0.0, ..cfg(1, 10) }).unwrap();
    assert!((run.j_s_mean - js).abs() < 1e-8, "{} vs {js}", run.j_s_mean);
    assert!((run.j_b_mean - jb).abs() < 1e-8, "{} vs {jb}", run.j_b_mean);
    assert_eq!(run.j_s_se, 0.0);
}

#[test]
fn zero_noise_buyer_deviation_does_not_pay() {
    let (p, c) = baseline();
    let (_, eq) = rk4_profits(&p, &c, 1.0, 20_000);
    let (_, dev) = rk4_profits(&p, &c, 0.9, 20_000);
    assert!(dev - eq <= 1e-8);
    let sim_cfg = SimConfig { sigma_scale: 0.0, ..cfg(1, 20_000) };
    let report = deviation_test(&p, &c, &sim_cfg, &[0.9]).unwrap();
    let buyer = report.entries.iter().find(|e| e.player == Player::Buyer).unwrap();
    assert!(buyer.gain_mean <= 1e-8, "{buyer:?}");
}

#[test]
fn identical_across_worker_counts() {
    let (p, c) = baseline();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| simulate(&p, &c, &cfg(2000, 100)).unwrap())
    };
    let one = run(1);
    let many = run(4);
    assert_eq!(one.j_s_mean.to_bits(), many.j_s_mean.to_bits());
    assert_eq!(one.j_b_se.to_bits(), many.j_b_se.to_bits());
    assert_eq!(one, many);
    assert_eq!(one, simulate(&p, &c, &cfg(2000, 100)).unwrap());
}

#[test]
fn standard_error_shrinks_like_inverse_root_paths() {
    let (p, c) = baseline();
    let se = |n| simulate(&p, &c, &cfg(n, 100)).unwrap().j_s_se;
    let (a, b, d) = (se(1000), se(10_000), se(100_000));
    let root10 = 10f64.sqrt();
    for ratio in [a / b, b / d] {
        assert!((ratio / root10 - 1.0).abs() < 0.2, "ratio {ratio}");
    }
}

#[test]
fn paths_are_prefix_stable() {
    // path k does not depend on how many other paths run
    let (p, c) = baseline();
    let small = simulate_paths(&p, &c, &cfg(10, 100)).unwrap();
    let large = simulate_paths(&p, &c, &cfg(50, 100)).unwrap();
    assert_eq!(small[..], large[..10]);
}

#[test]
fn identity_deviation_has_exactly_zero_gain() {
    let (p, c) = baseline();
    let report = deviation_test(&p, &c, &cfg(500, 100), &[1.0]).unwrap();
    for e in &report.entries {
        assert_eq!(e.gain_mean, 0.0);
        assert_eq!(e.gain_se, 0.0);
    }
}

#[test]
fn seller_leader_only_deviation_changes_only_investment() {
    let (p, c) = baseline();
    let base = simulate(&p, &c, &cfg(200, 100)).unwrap();
    let pert = cfg(200, 100).with_perturbation(Some(Perturbation {
        player: Player::Seller,
        target: Target::Leader,
        adjustment: Adjustment::Offset(0.5),
    }));
    let dev = simulate(&p, &c, &pert).unwrap();
    assert!(dev.j_s_mean < base.j_s_mean);
}
