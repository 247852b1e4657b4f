use std::f64::consts::PI;
use std::sync::Arc;

use proptest::prelude::*;
use scl_core::curve::{zero_signal, ConstantSignal, SharedSignal};
use scl_core::limit::{solve_a_characteristics, solve_r, LimitState, SolverConfig, SystemInput};
use scl_core::nls::{
    extract_observables, rotation_of, solve_grenier, solve_nls, solve_order0, solve_order1, wkb_error_metrics,
    wkb_rates, GrenierConfig, GrenierState, NlsConfig, WaveFunction, WkbState,
};
use scl_core::stats::richardson_order;
use scl_core::trig::TrigPolynomial;
use scl_core::{Complex64, ComplexField, PeriodicField, PeriodicGrid};

fn grid(n: usize) -> PeriodicGrid {
    PeriodicGrid::new(n).unwrap()
}

fn smooth_control(g: &PeriodicGrid) -> SharedSignal {
    Arc::new(ConstantSignal([
        PeriodicField::from_fn(g, |x| 0.05 * x.cos()),
        PeriodicField::from_fn(g, |x| 0.05 * x.sin()),
    ]))
}

fn smooth_state(g: &PeriodicGrid) -> GrenierState {
    let a = ComplexField::from_fn(g, |x| Complex64::new(1.0 + 0.1 * x.cos(), 0.0));
    GrenierState::new(&a, &PeriodicField::from_fn(g, |x| 0.1 * x.sin()), 0.0).unwrap()
}

#[test]
fn grenier_and_split_step_agree_on_a_smooth_run() {
    let g = grid(256);
    let eta = smooth_control(&g);
    let w0 = smooth_state(&g);
    for hbar in [1.0 / 8.0, 1.0 / 16.0] {
        let gr = solve_grenier(&w0, &eta, hbar, 1.0, &GrenierConfig::default()).unwrap();
        let nls = solve_nls(&w0.wave(hbar).unwrap(), &eta, 1.0, &NlsConfig::default()).unwrap();
        let gap = (&gr.last().wave(hbar).unwrap().psi - &nls.last().psi).l2_norm();
        assert!(gap <= 1e-6, "hbar {hbar}: gap {gap:e}");
    }
}

#[test]
fn split_step_conserves_mass_and_converges_at_second_order() {
    let g = grid(128);
    let eta = smooth_control(&g);
    let hbar = 1.0 / 8.0;
    let psi0 = smooth_state(&g).wave(hbar).unwrap();
    let run = |dt: f64| {
        let cfg = NlsConfig { dt_max: dt, hbar_fraction: 1.0, outputs: 1, ..NlsConfig::default() };
        solve_nls(&psi0, &eta, 0.5, &cfg).unwrap()
    };
    let (a, b, c) = (run(4e-3), run(2e-3), run(1e-3));
    let m0 = psi0.mass();
    assert!((c.last().mass() - m0).abs() <= 1e-10 * m0);
    let order = richardson_order((&a.last().psi - &b.last().psi).l2_norm(), (&b.last().psi - &c.last().psi).l2_norm());
    assert!((order - 2.0).abs() < 0.2, "order {order}");
}

/// WKB run and the matching limit-system run from the same data and forcing.
fn wkb_and_limit(g: &PeriodicGrid, horizon: f64) -> (scl_core::nls::WkbData, scl_core::limit::Trajectory) {
    let eta = smooth_control(g);
    let a00 = ComplexField::from_fn(g, |x| Complex64::new(1.0 + 0.1 * x.cos(), 0.05 * x.sin()));
    let a10 = ComplexField::from_fn(g, |x| Complex64::new(0.1 * (2.0 * x).cos(), 0.05 * x.cos()));
    let u0 = PeriodicField::from_fn(g, |x| 0.1 * x.sin());
    let cfg = GrenierConfig { max_dt: Some(1e-3), outputs: 20, ..GrenierConfig::default() };
    let run0 = solve_order0(&a00, &u0, 0.0, &eta, horizon, &cfg).unwrap();
    let wkb = solve_order1(&run0, &a10).unwrap();
    let first = &wkb.states.samples()[0];
    let input = SystemInput {
        initial: LimitState { u0: u0.clone(), ..first.limit_state() },
        xi: zero_signal(),
        zeta: zero_signal(),
        eta,
        horizon,
    };
    let lim = solve_r(&input, &SolverConfig { max_dt: Some(1e-3), outputs: 20, ..SolverConfig::default() }).unwrap();
    (wkb, lim)
}

#[test]
fn wkb_profiles_reproduce_the_limit_system() {
    let g = grid(128);
    let (wkb, lim) = wkb_and_limit(&g, 1.0);
    for (w, l) in wkb.states.samples().iter().zip(lim.states.samples()) {
        let s = w.limit_state();
        assert!((&s.rho0 - &l.rho0).max_abs() <= 1e-8);
        assert!((&s.u0 - &l.u0).max_abs() <= 1e-8);
        for (a, b) in [(&s.rho1, &l.rho1), (&s.u1, &l.u1), (&s.a, &l.a)] {
            assert!((a - b).max_abs() <= 1e-6);
        }
    }
}

#[test]
fn phases_and_velocities_are_consistent() {
    let g = grid(128);
    let (wkb, _) = wkb_and_limit(&g, 0.5);
    let first = &wkb.states.samples()[0];
    assert_eq!(first.s1_mean, 0.0);
    assert_eq!(first.u1.max_abs(), 0.0);
    for w in wkb.states.samples() {
        assert!((&w.s0().derivative(1) - &w.u0).max_abs() <= 1e-10);
        assert!((&w.s1().derivative(1) - &w.u1).max_abs() <= 1e-10);
    }
}

#[test]
fn rotation_component_matches_characteristics() {
    let g = grid(128);
    let eta = smooth_control(&g);
    let a00 = ComplexField::from_fn(&g, |x| Complex64::new(1.0 + 0.1 * x.cos(), 0.1 * x.sin()));
    let u0 = PeriodicField::from_fn(&g, |x| 0.2 * x.sin());
    let cfg = GrenierConfig { max_dt: Some(5e-4), outputs: 400, ..GrenierConfig::default() };
    let horizon = 0.5;
    let run = solve_order0(&a00, &u0, 0.0, &eta, horizon, &cfg).unwrap();
    let vel = run.states.map(|s| s.u.clone());
    let chars = solve_a_characteristics(&vel, &rotation_of(&a00), &[horizon], 800);
    let gap = (chars.last() - &rotation_of(&run.states.last().amplitude())).max_abs();
    assert!(gap <= 1e-6, "gap {gap:e}");
}

/// ∂ₜρ₁ + ∂ₓ(u₀ρ₁ + u₁ρ₀) − ∂ₓA with ∂ₜρ₁ from the amplitude equations.
fn first_density_residual(w: &WkbState, eta: &[PeriodicField; 2]) -> f64 {
    let r = wkb_rates(w, eta);
    let drho1 = (&r.a0.conj().zip_map(&w.a1, |x, y| x * y) + &w.a0.conj().zip_map(&r.a1, |x, y| x * y)).re().scale(2.0);
    let flux = &w.u0.mul(&w.rho1()) + &w.u1.mul(&w.rho0());
    (&(&drho1 + &flux.derivative(1)) - &w.rotation().derivative(1)).max_abs()
}

fn cfield(g: &PeriodicGrid, re: &[[f64; 2]], im: &[[f64; 2]], c: f64) -> ComplexField {
    let r = TrigPolynomial::from_coeffs(re.to_vec()).to_field(g);
    let i = TrigPolynomial::from_coeffs(im.to_vec()).to_field(g);
    ComplexField::from_parts(&(&r + &PeriodicField::constant(g, c)), &i)
}

fn modes() -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec(prop::array::uniform2(-0.2..0.2f64), 1..4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn first_density_equation_holds(m in prop::collection::vec(modes(), 8)) {
        let g = grid(64);
        let tp = |c: &[[f64; 2]]| TrigPolynomial::from_coeffs(c.to_vec()).to_field(&g);
        let w = WkbState {
            a0: cfield(&g, &m[0], &m[1], 1.0),
            u0: tp(&m[2]),
            s0_mean: 0.3,
            a1: cfield(&g, &m[3], &m[4], 0.1),
            u1: tp(&m[5]),
            s1_mean: 0.0,
        };
        let eta = [tp(&m[6]), tp(&m[7])];
        prop_assert!(first_density_residual(&w, &eta) <= 1e-8);
    }
}

#[test]
fn first_density_equation_holds_along_a_run() {
    let g = grid(128);
    let (wkb, _) = wkb_and_limit(&g, 1.0);
    let eta = smooth_control(&g).eval(0.0, &g);
    for w in wkb.states.samples() {
        let r = first_density_residual(w, &eta);
        assert!(r <= 1e-8, "residual {r:e}");
    }
}

#[test]
fn flat_amplitude_has_no_first_order_correction() {
    let g = grid(64);
    let a00 = ComplexField::from_fn(&g, |_| Complex64::new(0.8, 0.0));
    let run = solve_order0(&a00, &PeriodicField::zeros(&g), 0.0, &zero_signal(), 1.0, &GrenierConfig::default()).unwrap();
    let wkb = solve_order1(&run, &ComplexField::from_fn(&g, |_| Complex64::new(0.0, 0.0))).unwrap();
    for w in wkb.states.samples() {
        assert!(w.a1.max_abs() <= 1e-15 && w.u1.max_abs() <= 1e-15);
        assert!((&w.a0 - &a00).max_abs() <= 1e-15);
    }
}

#[test]
fn plane_wave_observables() {
    let g = grid(64);
    let hbar = 0.1;
    for m in [1i32, 3] {
        let psi = ComplexField::from_fn(&g, |x| Complex64::from_polar(1.0 / (2.0 * PI).sqrt(), m as f64 * x));
        let obs = extract_observables(&WaveFunction::new(psi, hbar).unwrap(), 1e-6);
        assert!((&obs.rho - &PeriodicField::constant(&g, 0.5 / PI)).max_abs() < 1e-14);
        let u = obs.velocity().unwrap();
        assert!((u - &PeriodicField::constant(&g, hbar * m as f64)).max_abs() < 1e-12);
    }
}

#[test]
fn extracted_velocity_approaches_the_phase_gradient() {
    let g = grid(128);
    let a = ComplexField::from_fn(&g, |x| Complex64::new(1.0 + 0.2 * x.cos(), 0.1 * x.sin()));
    let s = PeriodicField::from_fn(&g, |x| 0.3 * x.sin() + 0.1 * (2.0 * x).cos());
    let ds = s.derivative(1);
    let gaps: Vec<f64> = (3..7)
        .map(|p| {
            let hbar = 0.5f64.powi(p);
            let w = WaveFunction::from_amplitude_phase(&a, &s, hbar).unwrap();
            let obs = extract_observables(&w, 1e-6);
            (obs.velocity().unwrap() - &ds).max_abs() / hbar
        })
        .collect();
    // the gap is exactly ħ·Im(ā∂ₓa)/|a|², so gap/ħ is constant
    assert!(gaps.windows(2).all(|w| (w[0] / w[1] - 1.0).abs() < 1e-6), "{gaps:?}");
}

#[test]
fn constant_phase_shift_changes_residual_but_not_density() {
    let g = grid(64);
    let hbar = 1.0 / 16.0;
    let a = ComplexField::from_fn(&g, |x| Complex64::new(1.0 + 0.1 * x.cos(), 0.0));
    let s = PeriodicField::from_fn(&g, |x| 0.2 * x.sin());
    let w = WaveFunction::from_amplitude_phase(&a, &s, hbar).unwrap();
    let target = scl_core::nls::WkbTarget { a0: a.clone(), s0: s.clone(), s1: PeriodicField::zeros(&g) };
    let shifted = WaveFunction::new(w.psi.map(|z| z * Complex64::from_polar(1.0, 0.7)), hbar).unwrap();
    let before = wkb_error_metrics(&w, &target, &[0]).s_norms[0].1;
    let after = wkb_error_metrics(&shifted, &target, &[0]).s_norms[0].1;
    assert!(before < 1e-12 && after > 0.1);
    let (r1, r2) = (extract_observables(&w, 0.0).rho, extract_observables(&shifted, 0.0).rho);
    assert!((&r1 - &r2).max_abs() < 1e-14);
}
