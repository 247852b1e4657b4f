use std::sync::Arc;

use proptest::prelude::*;
use scl_core::curve::{zero_signal, ConstantSignal, SharedSignal, TimeCurve};
use scl_core::limit::{
    lipschitz_probe, rhs_full, solve_a_characteristics, solve_r, Inputs, LimitState, SolverConfig, SystemInput,
};
use scl_core::stats::richardson_order;
use scl_core::trig::TrigPolynomial;
use scl_core::{PeriodicField, PeriodicGrid};

fn grid() -> PeriodicGrid {
    PeriodicGrid::new(64).unwrap()
}

fn poly_field(c: &[[f64; 2]]) -> PeriodicField {
    TrigPolynomial::from_coeffs(c.to_vec()).to_field(&grid())
}

fn low_modes() -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec(prop::array::uniform2(-0.3..0.3f64), 1..5)
}

fn constant(a: PeriodicField, b: PeriodicField) -> SharedSignal {
    Arc::new(ConstantSignal([a, b]))
}

fn d(f: &PeriodicField) -> PeriodicField {
    f.derivative(1)
}

/// Right-hand side of the closed system written out term by term.
fn closed_rhs(s: &LimitState, inp: &Inputs) -> LimitState {
    let w = &s.u0 + &inp.zeta[0];
    let b = &s.u0 + &inp.xi[0];
    let c = &s.u1 + &inp.xi[1];
    let z1 = &s.u1 + &inp.zeta[1];
    LimitState {
        u0: &inp.eta[0] - &d(&(&(&b.mul(&b) * 0.5) + &s.rho0)),
        u1: &inp.eta[1] - &d(&(&b.mul(&c) + &s.rho1)),
        rho0: -&d(&w.mul(&s.rho0)),
        rho1: -&d(&(&(&w.mul(&s.rho1) + &z1.mul(&s.rho0)) - &s.a)),
        a: -&(&w.mul(&d(&s.a)) + &(&d(&w).mul(&s.a) * 2.0)),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn rhs_matches_term_by_term_oracle(
        f in prop::collection::vec(low_modes(), 5),
        x in prop::collection::vec(low_modes(), 6),
        rho in 0.5..2.0f64,
    ) {
        let mut s = LimitState {
            u0: poly_field(&f[0]),
            u1: poly_field(&f[1]),
            rho0: poly_field(&f[2]),
            rho1: poly_field(&f[3]),
            a: poly_field(&f[4]),
        };
        s.rho0 = &s.rho0 + &PeriodicField::constant(&grid(), rho);
        let inp = Inputs {
            xi: [poly_field(&x[0]), poly_field(&x[1])],
            zeta: [poly_field(&x[2]), poly_field(&x[3])],
            eta: [poly_field(&x[4]), poly_field(&x[5])],
        };
        let got = rhs_full(&s, &inp);
        let want = closed_rhs(&s, &inp);
        for (a, b) in got.fields().iter().zip(want.fields()) {
            prop_assert!((*a - b).max_abs() <= 1e-12);
        }
    }
}

fn forced_input(horizon: f64) -> SystemInput {
    let g = grid();
    let init = LimitState {
        u0: PeriodicField::from_fn(&g, |x| 0.1 * x.sin()),
        u1: PeriodicField::from_fn(&g, |x| 0.05 * x.cos()),
        rho0: PeriodicField::from_fn(&g, |x| 1.0 + 0.1 * x.cos()),
        rho1: PeriodicField::from_fn(&g, |x| 0.1 + 0.05 * (2.0 * x).sin()),
        a: PeriodicField::from_fn(&g, |x| 0.1 * x.sin()),
    };
    SystemInput {
        initial: init,
        xi: constant(PeriodicField::from_fn(&g, |x| 0.05 * x.cos()), PeriodicField::from_fn(&g, |x| 0.02 * x.sin())),
        zeta: constant(PeriodicField::from_fn(&g, |x| 0.03 * x.sin()), PeriodicField::from_fn(&g, |x| 0.01 * x.cos())),
        eta: constant(PeriodicField::from_fn(&g, |x| 0.2 * x.sin()), PeriodicField::from_fn(&g, |x| 0.1 * x.cos())),
        horizon,
    }
}

#[test]
fn masses_and_velocity_means_are_preserved() {
    let input = forced_input(1.0);
    let tr = solve_r(&input, &SolverConfig::default()).unwrap();
    let (m0, m1) = (input.initial.rho0.integral(), input.initial.rho1.integral());
    for s in tr.states.samples() {
        assert!((s.rho0.integral() - m0).abs() <= 1e-8 * m0.abs());
        assert!((s.rho1.integral() - m1).abs() <= 1e-8 * m1.abs());
        assert!(s.u0.mean().abs() <= 1e-9 && s.u1.mean().abs() <= 1e-9);
    }
    assert!(tr.diagnostics.iter().all(|d| d.min_rho0 > 0.0));
}

#[test]
fn integrator_converges_at_least_second_order() {
    let input = forced_input(0.5);
    let run = |dt: f64| {
        let cfg = SolverConfig { cfl: 50.0, cfl_limit: 50.0, max_dt: Some(dt), outputs: 1, min_steps_per_gap: 1, ..SolverConfig::default() };
        solve_r(&input, &cfg).unwrap().terminal().clone()
    };
    let (a, b, c) = (run(0.08), run(0.04), run(0.02));
    let (e1, e2) = (a.diff(&b).y_norm(0), b.diff(&c).y_norm(0));
    let order = richardson_order(e1, e2);
    assert!(order >= 2.0, "order {order} from {e1:e} {e2:e}");
}

#[test]
fn cascade_is_affine_in_the_rotation_component() {
    let mut base = forced_input(1.0);
    base.xi = zero_signal();
    base.zeta = zero_signal();
    let cfg = SolverConfig { max_dt: Some(0.01), ..SolverConfig::default() };
    let run = |scale: f64| {
        let mut inp = base.clone();
        inp.initial.a = &base.initial.a * scale;
        solve_r(&inp, &cfg).unwrap()
    };
    let (r0, r1, r2) = (run(0.0), run(1.0), run(2.0));
    for i in 0..r0.states.len() {
        let (s0, s1, s2) = (&r0.states.samples()[i], &r1.states.samples()[i], &r2.states.samples()[i]);
        assert!((&s2.a - &(&s1.a * 2.0)).max_abs() <= 1e-9 * s2.a.max_abs().max(1e-12));
        for (f0, f1, f2) in [(&s0.rho1, &s1.rho1, &s2.rho1), (&s0.u1, &s1.u1, &s2.u1)] {
            let second = &(f2 - &(f1 * 2.0)) + f0;
            assert!(second.max_abs() <= 1e-9 * f2.max_abs().max(1e-12));
        }
        assert!((&s2.u0 - &s0.u0).max_abs() == 0.0 && (&s2.rho0 - &s0.rho0).max_abs() == 0.0);
    }
}

#[test]
fn characteristics_trivial_cases() {
    let g = grid();
    let a0 = PeriodicField::from_fn(&g, |x| 0.3 * x.cos());
    let still = TimeCurve::new(vec![0.0, 1.0], vec![PeriodicField::zeros(&g); 2]).unwrap();
    let out = solve_a_characteristics(&still, &a0, &[0.5, 1.0], 40);
    for s in out.samples() {
        assert!((s - &a0).max_abs() < 1e-14);
    }
    let moving = TimeCurve::new(vec![0.0, 1.0], vec![PeriodicField::from_fn(&g, |x| x.sin()); 2]).unwrap();
    let out = solve_a_characteristics(&moving, &PeriodicField::zeros(&g), &[1.0], 40);
    assert_eq!(out.last().max_abs(), 0.0);
}

#[test]
fn spectral_rotation_component_matches_characteristics() {
    // A is advected by u₀ + ζ₀ with ζ₀ = sin x held fixed; the characteristics
    // solver receives that velocity sampled densely from the spectral run
    let g = grid();
    let horizon = 0.25;
    let zeta0 = PeriodicField::from_fn(&g, |x| x.sin());
    let input = SystemInput {
        initial: LimitState { a: PeriodicField::from_fn(&g, |x| 0.5 + 0.2 * x.cos()), ..LimitState::rest(&g, 1.0) },
        xi: zero_signal(),
        zeta: constant(zeta0.clone(), PeriodicField::zeros(&g)),
        eta: zero_signal(),
        horizon,
    };
    let cfg = SolverConfig { outputs: 400, max_dt: Some(horizon / 1600.0), ..SolverConfig::default() };
    let tr = solve_r(&input, &cfg).unwrap();
    let vel = tr.states.map(|s| &s.u0 + &zeta0);
    let out = solve_a_characteristics(&vel, &input.initial.a, &[horizon], 800);
    let err = (out.last() - &tr.terminal().a).max_abs();
    assert!(err <= 1e-6, "gap {err:e}");
}

fn probe_input() -> SystemInput {
    let mut inp = forced_input(1.0);
    inp.xi = zero_signal();
    inp.zeta = zero_signal();
    inp
}

#[test]
fn lipschitz_ratios_are_stable_over_three_decades() {
    let g = grid();
    let base = probe_input();
    let cfg = SolverConfig::default();
    assert_eq!(lipschitz_probe(&base, &base, 3, &cfg).unwrap(), 0.0);
    let eta0 = base.eta.eval(0.0, &g);
    let ratios: Vec<f64> = [1e-2, 1e-3, 1e-4]
        .iter()
        .map(|&delta| {
            let mut p = base.clone();
            p.eta = constant(&eta0[0] + &PeriodicField::from_fn(&g, |x| delta * x.sin()), eta0[1].clone());
            lipschitz_probe(&base, &p, 3, &cfg).unwrap()
        })
        .collect();
    let (lo, hi) = ratios.iter().fold((f64::INFINITY, 0.0f64), |(l, h), r| (l.min(*r), h.max(*r)));
    assert!(lo > 0.0 && hi / lo <= 2.0, "{ratios:?}");
}

#[test]
fn density_perturbation_ratio_stays_bounded() {
    let g = grid();
    let base = probe_input();
    let cfg = SolverConfig::default();
    let ratios: Vec<f64> = [1e-2, 1e-3, 1e-4]
        .iter()
        .map(|&delta| {
            let mut p = base.clone();
            p.initial.rho0 = &base.initial.rho0 + &PeriodicField::from_fn(&g, |x| delta * x.cos());
            lipschitz_probe(&base, &p, 3, &cfg).unwrap()
        })
        .collect();
    assert!(ratios.iter().all(|r| r.is_finite() && *r > 0.0));
    assert!(ratios[2] <= 2.0 * ratios[0], "{ratios:?}");
}
