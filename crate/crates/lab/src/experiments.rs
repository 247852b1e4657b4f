//! Measurement routines shared by the acceptance suite, the convergence
//! studies and the CLI.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use scl_core::curve::{time_integral_k, zero_signal, ConstantSignal, ControlCurve, SharedSignal, TimeCurve};
use scl_core::limit::{
    density_distance, lipschitz_probe, solve_a_characteristics, solve_r, trajectory_distance, LimitState,
    SolverConfig, SystemInput, Trajectory,
};
use scl_core::nls::{
    lifted_wkb_error_metrics, solve_grenier, solve_nls, solve_order0, solve_order1, GrenierConfig, GrenierState,
    NlsConfig, WaveFunction,
};
use scl_core::synthesis::{build_reduction, Provenance, StageControls, SynthesisConfig, TargetSpec, TERMINAL_K};
use scl_core::trig::{
    adjoint_cross_residual, bracket_residual, build_oscillator, decompose_mode, decompose_pair, paired_residual,
    OscillatorSchedule, TrigPolynomial,
};
use scl_core::{ComplexField, PeriodicField, PeriodicGrid, Result};

/// Residual of one identity evaluation.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct IdentityRow {
    pub kind: String,
    pub n: usize,
    pub mode: String,
    pub residual: f64,
}

/// Bracket and paired decompositions of every basis mode of E_{n+1}, n ≤ `max_n`.
pub fn basis_identities(max_n: usize, grid: &PeriodicGrid) -> Result<Vec<IdentityRow>> {
    let mut rows = Vec::new();
    for n in 0..=max_n {
        for j in 1..=n + 2 {
            for (label, p) in [("sin", TrigPolynomial::sin(j, 1.0)), ("cos", TrigPolynomial::cos(j, 1.0))] {
                let mode = format!("{label}{j}");
                let d = decompose_mode(&p, n)?;
                rows.push(IdentityRow { kind: "bracket".into(), n, mode: mode.clone(), residual: bracket_residual(&p, &d, grid) });
                for slot in 0..2 {
                    let mut pair = [TrigPolynomial::zero(1), TrigPolynomial::zero(1)];
                    pair[slot] = p.clone();
                    let d = decompose_pair(&pair, n)?;
                    let r = paired_residual(&pair, &d, grid);
                    rows.push(IdentityRow {
                        kind: format!("paired{slot}"),
                        n,
                        mode: mode.clone(),
                        residual: r[0].max(r[1]),
                    });
                }
            }
        }
    }
    Ok(rows)
}

fn random_poly(rng: &mut ChaCha8Rng, modes: usize) -> TrigPolynomial {
    TrigPolynomial::from_coeffs((0..modes).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect())
}

/// Cross-term cancellation of paired opposite controls on seeded random draws.
pub fn adjoint_draws(count: usize, seed: u64, grid: &PeriodicGrid) -> Vec<IdentityRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let modes = rng.gen_range(1..=5);
            let u = random_poly(&mut rng, modes).to_field(grid);
            let npairs = rng.gen_range(1..=3);
            let pairs: Vec<[TrigPolynomial; 2]> =
                (0..npairs).map(|_| [random_poly(&mut rng, 3), random_poly(&mut rng, 3)]).collect();
            let osc = rng.gen_range(1..=8);
            let s = OscillatorSchedule::from_pairs(&pairs, osc, 0.0, 1.0);
            IdentityRow { kind: "adjoint".into(), n: osc, mode: format!("draw{i}"), residual: adjoint_cross_residual(&u, &s) }
        })
        .collect()
}

/// sup over t of the max-norm of the running integral of an n-oscillation
/// switching control, by midpoint sampling between switching instants.
pub fn relaxation_metric(n: usize) -> f64 {
    let g = PeriodicGrid::new(32).expect("valid grid");
    let pairs = [[TrigPolynomial::sin(1, 1.0).plus(&TrigPolynomial::cos(1, 0.5)), TrigPolynomial::cos(1, 0.2)]];
    let s = OscillatorSchedule::from_pairs(&pairs, n, 0.0, 1.0);
    let c = build_oscillator(&s);
    let steps = 64 * s.segments();
    let mut t = vec![0.0];
    let mut v = vec![c.coefficients_at(0.5 / steps as f64)[0].to_field(&g)];
    for i in 0..steps {
        let tm = (i as f64 + 0.5) / steps as f64;
        t.push((i + 1) as f64 / steps as f64);
        v.push(c.coefficients_at(tm)[0].to_field(&g));
    }
    let curve = TimeCurve::new(t, v).expect("increasing nodes");
    time_integral_k(&curve).samples().iter().map(PeriodicField::max_abs).fold(0.0, f64::max)
}

/// Relative drift of a conserved quantity; absolute when the quantity vanishes.
pub fn relative_drift(initial: f64, value: f64) -> f64 {
    let d = (value - initial).abs();
    if initial == 0.0 {
        d
    } else {
        d / initial.abs()
    }
}

/// Largest relative drift of ∫ρ₀ and ∫ρ₁ along a trajectory.
pub fn limit_mass_drift(tr: &Trajectory) -> [f64; 2] {
    let first = &tr.states.samples()[0];
    let (m0, m1) = (first.rho0.integral(), first.rho1.integral());
    tr.states.samples().iter().fold([0.0f64; 2], |acc, s| {
        [acc[0].max(relative_drift(m0, s.rho0.integral())), acc[1].max(relative_drift(m1, s.rho1.integral()))]
    })
}

pub fn nls_mass_drift(run: &TimeCurve<WaveFunction>) -> f64 {
    let m0 = run.samples()[0].mass();
    run.samples().iter().map(|w| relative_drift(m0, w.mass())).fold(0.0, f64::max)
}

/// Spectral A-component against characteristics for A advected by u₀ + sin x.
pub fn characteristics_gap(grid: &PeriodicGrid) -> Result<f64> {
    let horizon = 0.25;
    let zeta0 = PeriodicField::from_fn(grid, |x| x.sin());
    let input = SystemInput {
        initial: LimitState { a: PeriodicField::from_fn(grid, |x| 0.5 + 0.2 * x.cos()), ..LimitState::rest(grid, 1.0) },
        xi: zero_signal(),
        zeta: Arc::new(ConstantSignal([zeta0.clone(), PeriodicField::zeros(grid)])),
        eta: zero_signal(),
        horizon,
    };
    let cfg = SolverConfig { outputs: 400, max_dt: Some(horizon / 1600.0), ..SolverConfig::default() };
    let tr = solve_r(&input, &cfg)?;
    let vel = tr.states.map(|s| &s.u0 + &zeta0);
    let out = solve_a_characteristics(&vel, &input.initial.a, &[horizon], 800);
    Ok((out.last() - &tr.terminal().a).max_abs())
}

/// Constant E₁-valued control (η₀, η₁) = (0.0025 sin 2x, −0.005 cos 2x).
pub fn e1_constant_controls(horizon: f64) -> StageControls {
    StageControls {
        n: 1,
        base: vec![ControlCurve::constant(horizon, [TrigPolynomial::sin(2, 0.0025), TrigPolynomial::cos(2, -0.005)])],
        shift: Vec::new(),
        provenance: Provenance::default(),
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ReductionRow {
    pub osc: usize,
    /// Terminal distance to the E₁ run in the controlled components.
    pub gap: f64,
    /// sup_t density distance to the E₁ run.
    pub rho_deviation: f64,
    /// sup_t distance between the runs with and without the transport shift.
    pub shift_insensitivity: f64,
}

/// Reduction of the constant E₁ control to E₀ on the rest state at each oscillation count.
pub fn e1_reduction_study(grid: &PeriodicGrid, oscs: &[usize], smoothing: usize) -> Result<Vec<ReductionRow>> {
    let spec = TargetSpec::identity(grid, 1.0, 1.0, 1e-2);
    let solver = SynthesisConfig::default().solver;
    let ctl = e1_constant_controls(spec.horizon);
    let reference = solve_r(&ctl.extended_input(&spec), &solver)?;
    oscs.iter()
        .map(|&osc| {
            let cand = build_reduction(&ctl, 0, osc, smoothing, 1, grid)?;
            let v = cand.extended_input(&spec);
            let tr_v = solve_r(&v, &solver)?;
            let u = SystemInput { zeta: zero_signal(), ..v };
            let tr_u = solve_r(&u, &solver)?;
            Ok(ReductionRow {
                osc,
                gap: tr_v.terminal().diff(reference.terminal()).controlled_norm(TERMINAL_K),
                rho_deviation: density_distance(&tr_v, &reference, TERMINAL_K),
                shift_insensitivity: trajectory_distance(&tr_u, &tr_v, TERMINAL_K),
            })
        })
        .collect()
}

/// Input with smooth data and forcing used by the Lipschitz probes.
pub fn probe_input(grid: &PeriodicGrid) -> SystemInput {
    let f = |c: fn(f64) -> f64| PeriodicField::from_fn(grid, c);
    SystemInput {
        initial: LimitState {
            u0: f(|x| 0.1 * x.sin()),
            u1: f(|x| 0.05 * x.cos()),
            rho0: f(|x| 1.0 + 0.1 * x.cos()),
            rho1: f(|x| 0.1 + 0.05 * (2.0 * x).sin()),
            a: f(|x| 0.1 * x.sin()),
        },
        xi: zero_signal(),
        zeta: zero_signal(),
        eta: Arc::new(ConstantSignal([f(|x| 0.2 * x.sin()), f(|x| 0.1 * x.cos())])),
        horizon: 1.0,
    }
}

/// Ratios ∥ΔR∥/∥ΔU∥ for η₀-perturbations of size δ.
pub fn lipschitz_ratios(grid: &PeriodicGrid, deltas: &[f64]) -> Result<Vec<f64>> {
    let base = probe_input(grid);
    let cfg = SolverConfig::default();
    let eta = base.eta.eval(0.0, grid);
    deltas
        .iter()
        .map(|&d| {
            let mut p = base.clone();
            p.eta = Arc::new(ConstantSignal([&eta[0] + &PeriodicField::from_fn(grid, |x| d * x.sin()), eta[1].clone()]));
            lipschitz_probe(&base, &p, 3, &cfg)
        })
        .collect()
}

/// WKB data (a₀, a₁, u) realizing the densities g₀ + ħg₁ and velocity v₀ of a spec.
pub fn wkb_initial(spec: &TargetSpec) -> (ComplexField, ComplexField, PeriodicField) {
    let grid = spec.grid();
    let a0 = spec.g0.map(f64::sqrt);
    let a1 = spec.g1.zip_map(&a0, |g, a| 0.5 * g / a);
    let c = |f: &PeriodicField| ComplexField::from_parts(f, &PeriodicField::zeros(grid));
    (c(&a0), c(&a1), spec.v0.clone())
}

/// Phase-lifted initial state a₀ + ħa₁ with velocity v₀ + ħv₁.
pub fn grenier_initial(spec: &TargetSpec, hbar: f64) -> Result<GrenierState> {
    let (a0, a1, _) = wkb_initial(spec);
    let a = &a0 + &a1.map(|z| z * hbar);
    let mut u = spec.v0.clone();
    u.axpy(hbar, &spec.v1);
    GrenierState::new(&a, &u, 0.0)
}

/// Phase-lifted and split-step runs from the same initial wave.
pub struct WaveComparison {
    /// L² distance of the terminal wave functions.
    pub gap: f64,
    /// Largest relative mass drift of the split-step run.
    pub mass_drift: f64,
    pub split_step: TimeCurve<WaveFunction>,
    pub lifted: WaveFunction,
}

pub fn compare_wave_solvers(
    spec: &TargetSpec,
    eta: &SharedSignal,
    hbar: f64,
    gcfg: &GrenierConfig,
    ncfg: &NlsConfig,
) -> Result<WaveComparison> {
    let w0 = grenier_initial(spec, hbar)?;
    let gr = solve_grenier(&w0, eta, hbar, spec.horizon, gcfg)?;
    let split_step = solve_nls(&w0.wave(hbar)?, eta, spec.horizon, ncfg)?;
    let lifted = gr.last().wave(hbar)?;
    Ok(WaveComparison {
        gap: (&lifted.psi - &split_step.last().psi).l2_norm(),
        mass_drift: nls_mass_drift(&split_step),
        split_step,
        lifted,
    })
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SemiclassicalRow {
    pub hbar: f64,
    /// ∥a^ħ − a₀∥ at T.
    pub amplitude_error: f64,
    /// ∥(a^ħ − a₀)/ħ − a₁∥ at T.
    pub corrector_error: f64,
    /// ∥ψ e^{−iS₀/ħ} − a₀e^{iS₁}∥ at T, from the lifted state.
    pub s_norm: f64,
    /// ∥ρ^ħ − ρ₀ − ħρ₁∥ at T.
    pub expansion_gap: f64,
    /// ∥ρ^ħ − ĝ₀ − ħĝ₁∥ at T.
    pub target_gap: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SemiclassicalStudy {
    pub rows: Vec<SemiclassicalRow>,
    /// Terminal error of the WKB profiles against the target.
    pub eps_synth: f64,
    /// Smallest C with expansion_gap ≤ Cħ² at every ħ.
    pub c_bound: f64,
    /// Least-squares C in expansion_gap ≈ Cħ².
    pub c_fit: f64,
    pub amplitude_order: f64,
    pub expansion_order: f64,
}

/// Phase-lifted runs over ħ against the first order WKB profiles.
pub fn semiclassical_study(spec: &TargetSpec, eta: &SharedSignal, hbars: &[f64], gcfg: &GrenierConfig) -> Result<SemiclassicalStudy> {
    use rayon::prelude::*;
    let (a00, a10, u0) = wkb_initial(spec);
    let run0 = solve_order0(&a00, &u0, 0.0, eta, spec.horizon, gcfg)?;
    let wkb = solve_order1(&run0, &a10)?;
    let w = wkb.terminal();
    let eps_synth = spec.terminal_error(&w.limit_state());
    let (rho0, rho1) = (w.rho0(), w.rho1());
    let rows: Result<Vec<SemiclassicalRow>> = hbars
        .par_iter()
        .map(|&h| {
            let st = solve_grenier(&grenier_initial(spec, h)?, eta, h, spec.horizon, gcfg)?;
            let g = st.last();
            let a = g.amplitude();
            let da = &a - &w.a0;
            let corr = &da.map(|z| z / h) - &w.a1;
            let rho = g.density();
            let expansion = &rho - &(&rho0 + &rho1.scale(h));
            let target = &rho - &(&spec.ghat0 + &spec.ghat1.scale(h));
            Ok(SemiclassicalRow {
                hbar: h,
                amplitude_error: da.l2_norm(),
                corrector_error: corr.l2_norm(),
                s_norm: lifted_wkb_error_metrics(g, h, &w.target(), &[0]).s_norms[0].1,
                expansion_gap: expansion.l2_norm(),
                target_gap: target.l2_norm(),
            })
        })
        .collect();
    let rows = rows?;
    let h: Vec<f64> = rows.iter().map(|r| r.hbar).collect();
    let c_bound = rows.iter().map(|r| r.expansion_gap / (r.hbar * r.hbar)).fold(0.0, f64::max);
    let num: f64 = rows.iter().map(|r| r.expansion_gap * r.hbar * r.hbar).sum();
    let den: f64 = rows.iter().map(|r| r.hbar.powi(4)).sum();
    let col = |f: fn(&SemiclassicalRow) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
    Ok(SemiclassicalStudy {
        eps_synth,
        c_bound,
        c_fit: num / den,
        amplitude_order: scl_core::stats::loglog_slope(&h, &col(|r| r.amplitude_error)),
        expansion_order: scl_core::stats::loglog_slope(&h, &col(|r| r.expansion_gap)),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drift_is_absolute_for_vanishing_mass() {
        assert_eq!(relative_drift(0.0, 1e-9), 1e-9);
        assert!((relative_drift(2.0, 2.000002) - 1e-6).abs() < 1e-12);
    }

    #[test]
    fn adjoint_draws_are_seeded() {
        let g = PeriodicGrid::new(32).unwrap();
        assert_eq!(adjoint_draws(3, 7, &g), adjoint_draws(3, 7, &g));
        assert_ne!(adjoint_draws(3, 7, &g), adjoint_draws(3, 8, &g));
    }
}
