use proptest::prelude::*;
use scl_core::curve::Interp;
use scl_core::limit::solve_r;
use scl_core::synthesis::{
    compute_eta, full_pipeline, interpolate_trajectory, reduce_stage, solve_xi0, solve_xi1, stage_controls,
    stage_n_controls, Construction, StageBudget, SynthesisConfig, TargetSpec,
};
use scl_core::trig::TrigPolynomial;
use scl_core::{Error, PeriodicField, PeriodicGrid};

fn grid() -> PeriodicGrid {
    PeriodicGrid::new(64).unwrap()
}

fn pf(c: &[[f64; 2]]) -> PeriodicField {
    TrigPolynomial::from_coeffs(c.to_vec()).to_field(&grid())
}

fn small() -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec(prop::array::uniform2(-0.1..0.1f64), 1..4)
}

/// Random spec: mode-limited perturbations of a rest state, masses matched.
fn spec_strategy() -> impl Strategy<Value = TargetSpec> {
    prop::collection::vec(small(), 9).prop_map(|c| {
        let g = grid();
        let one = PeriodicField::constant(&g, 1.0);
        let c1 = PeriodicField::constant(&g, 0.2);
        TargetSpec {
            g0: &one + &pf(&c[0]),
            g1: &c1 + &pf(&c[1]),
            v0: pf(&c[2]),
            v1: pf(&c[3]),
            ghat0: &one + &pf(&c[4]),
            ghat1: &c1 + &pf(&c[5]),
            vhat0: pf(&c[6]),
            vhat1: pf(&c[7]),
            a0: pf(&c[8]),
            horizon: 1.0,
            eps: 1e-2,
        }
    })
}

fn retarget(grid: &PeriodicGrid) -> TargetSpec {
    let mut s = TargetSpec::identity(grid, 1.0, 1.0, 1e-2);
    s.ghat0 = PeriodicField::from_fn(grid, |x| 1.0 + 0.05 * x.cos());
    s.ghat1 = PeriodicField::from_fn(grid, |x| 0.05 * x.sin());
    s.vhat0 = PeriodicField::from_fn(grid, |x| 0.05 * x.sin());
    s.vhat1 = PeriodicField::from_fn(grid, |x| 0.05 * x.cos());
    s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn construction_reproduces_the_interpolated_curves(spec in spec_strategy()) {
        let nodes: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
        let c = Construction::build(&spec, &nodes).unwrap();
        prop_assert!(c.residual() <= 1e-8, "residual {:e}", c.residual());
        for k in 0..nodes.len() {
            for i in 0..2 {
                prop_assert!(c.xi[k][i].mean().abs() <= 1e-12);
                prop_assert!(c.eta[k][i].mean().abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn shift_equations_hold(spec in spec_strategy(), s in 0.0..1.0f64) {
        let lerp = |a: &PeriodicField, b: &PeriodicField| a * (1.0 - s) + b * s;
        let rho = [lerp(&spec.g0, &spec.ghat0), lerp(&spec.g1, &spec.ghat1)];
        let u = [lerp(&spec.v0, &spec.vhat0), lerp(&spec.v1, &spec.vhat1)];
        let drho = [&spec.ghat0 - &spec.g0, &spec.ghat1 - &spec.g1];
        prop_assert!(drho[0].integral().abs() <= 1e-12);
        let x0 = solve_xi0(&rho[0], &drho[0], &u[0]).unwrap();
        let r0 = &(&rho[0].mul(&x0).derivative(1) + &drho[0]) + &rho[0].mul(&u[0]).derivative(1);
        prop_assert!(r0.max_abs() <= 1e-10);
        let x1 = solve_xi1(&rho, &drho[1], &u, &x0, &spec.a0).unwrap();
        let flux = &(&u[0] + &x0).mul(&rho[1]) + &u[1].mul(&rho[0]);
        let r1 = &(&rho[0].mul(&x1).derivative(1) - &spec.a0.derivative(1)) + &(&drho[1] + &flux.derivative(1));
        prop_assert!(r1.max_abs() <= 1e-10);
        prop_assert!(x0.mean().abs() <= 1e-14 && x1.mean().abs() <= 1e-14);
    }
}

#[test]
fn interpolation_hits_endpoints() {
    let s = retarget(&grid());
    let (rho, u) = interpolate_trajectory(&s);
    let (r0, r1) = (rho.sample_at(0.0, Interp::Linear), rho.sample_at(1.0, Interp::Linear));
    assert!((&r0[0] - &s.g0).max_abs() == 0.0 && (&r1[0] - &s.ghat0).max_abs() == 0.0);
    let u1 = u.sample_at(1.0, Interp::Linear);
    assert!((&u1[0] - &s.vhat0).max_abs() == 0.0 && (&u1[1] - &s.vhat1).max_abs() == 0.0);
    let same = TargetSpec::identity(&grid(), 1.3, 1.0, 1e-2);
    let (rho, _) = interpolate_trajectory(&same);
    assert_eq!(rho.samples()[0][0], rho.samples()[1][0]);
}

#[test]
fn trivial_shifts_and_forcings_vanish() {
    let g = grid();
    let one = PeriodicField::constant(&g, 1.0);
    let z = PeriodicField::zeros(&g);
    let zz = [z.clone(), z.clone()];
    let x1 = solve_xi1(&[one.clone(), z.clone()], &z, &zz, &z, &z).unwrap();
    assert!(x1.max_abs() < 1e-15);
    let eta = compute_eta(&[one, z.clone()], &zz, &zz, &zz);
    assert!(eta[0].max_abs() < 1e-15 && eta[1].max_abs() < 1e-15);
}

#[test]
fn velocity_retarget_forcing_is_consistent() {
    let g = grid();
    let mut s = TargetSpec::identity(&g, 1.0, 1.0, 1e-2);
    s.vhat0 = PeriodicField::from_fn(&g, |x| x.sin());
    let c = Construction::build(&s, &[0.0, 0.25, 0.5, 1.0]).unwrap();
    assert!(c.residual() <= 1e-10);
    // with ρ₀ ≡ 1 the continuity equation forces ξ₀ = −u₀, so the transport
    // velocity vanishes and η₀ reduces to ∂ₜu₀ = sin x
    for (k, &t) in c.t.iter().enumerate() {
        assert!((&c.xi[k][0] + &PeriodicField::from_fn(&g, |x| t * x.sin())).max_abs() < 1e-12);
        assert!((&c.eta[k][0] - &s.vhat0).max_abs() < 1e-12);
    }
}

#[test]
fn identity_target_is_held_at_every_stage() {
    let g = grid();
    let spec = TargetSpec::identity(&g, 1.0, 1.0, 1e-8);
    let cfg = SynthesisConfig::default();
    let (_, _, err) = stage_n_controls(&spec, 2, &cfg).unwrap();
    assert!(err <= 1e-8);
    let out = full_pipeline(&spec, 2, &cfg).unwrap();
    assert!(out.report.success);
    assert!(out.report.stages.iter().all(|s| s.terminal_error <= 1e-8));
    assert_eq!(out.controls.n, 0);
}

#[test]
fn mass_violation_is_rejected_before_solving() {
    let g = grid();
    let mut spec = TargetSpec::identity(&g, 1.0, 1.0, 1e-2);
    spec.ghat0 = PeriodicField::from_fn(&g, |x| 1.05 + 0.05 * x.cos());
    assert!(matches!(full_pipeline(&spec, 2, &SynthesisConfig::default()), Err(Error::InvalidSpec(_))));
}

#[test]
fn stage_error_decreases_with_the_control_space() {
    let g = grid();
    let mut spec = TargetSpec::identity(&g, 1.0, 1.0, 1e-2);
    spec.ghat0 = PeriodicField::from_fn(&g, |x| 1.0 + 0.1 * x.cos());
    let cfg = SynthesisConfig::default();
    let errs: Vec<f64> = (1..=4).map(|n| stage_n_controls(&spec, n, &cfg).unwrap().2).collect();
    assert!(errs.windows(2).all(|w| w[1] <= w[0]), "{errs:?}");
}

#[test]
fn cutoff_error_shrinks_with_the_window() {
    let g = grid();
    let spec = retarget(&g);
    let errs: Vec<f64> = [20.0, 50.0, 100.0]
        .iter()
        .map(|&f| {
            let cfg = SynthesisConfig { delta_fraction: 1.0 / f, ..SynthesisConfig::default() };
            let s = stage_controls(&spec, None, &cfg).unwrap();
            let tr = solve_r(&s.extended_input(&spec), &cfg.solver).unwrap();
            spec.terminal_error(tr.terminal())
        })
        .collect();
    assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
}

#[test]
fn controls_have_zero_mean_and_density_stays_positive() {
    let g = grid();
    let spec = retarget(&g);
    let cfg = SynthesisConfig::default();
    let (s, tr, _) = stage_n_controls(&spec, 2, &cfg).unwrap();
    for c in &s.base {
        for p in c.curve.samples() {
            assert!(p[0].to_field(&g).mean().abs() < 1e-15 && p[1].to_field(&g).mean().abs() < 1e-15);
        }
    }
    assert!(s.projection_residual(2) <= 1e-12);
    let c0 = spec.g0.min().min(spec.ghat0.min());
    assert!(tr.min_rho0 >= 0.5 * c0);
}

#[test]
fn reduction_of_low_controls_is_a_no_op() {
    let g = grid();
    let spec = retarget(&g);
    let cfg = SynthesisConfig::default();
    let (s, tr, _) = stage_n_controls(&spec, 0, &cfg).unwrap();
    let budget = StageBudget { gap: 1e-3, target: None };
    let (out, tr2, rec) = reduce_stage(&s, &tr, &tr, &spec, 0, budget, &cfg).unwrap();
    assert!(out.provenance.fast_path);
    assert_eq!(rec.gap, 0.0);
    assert_eq!(tr2.terminal(), tr.terminal());
}
