//! Control synthesis: build E_N-valued forcings steering the limit system to a
//! target, then lower the control space one mode at a time down to E₀.

use alloc::string::ToString;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // resolves inherently when std is linked
use num_traits::Float;

use crate::curve::{
    smooth_step, smooth_step_deriv, uniform_nodes, ControlCurve, Interp, SharedSignal, Signal, SumSignal,
    TimeCurve,
};
use crate::error::{Error, Result};
use crate::limit::{density_distance, rhs_full, solve_r, Inputs, LimitState, SolverConfig, SystemInput, Trajectory};
use crate::spectral::{PeriodicField, PeriodicGrid};
use crate::trig::{decompose_pair, OscillatorSchedule, OscillatorTrain, SmoothOscillator, TrigPolynomial};

/// Sobolev index of the terminal error norm H^k × H^{k−2} × H^k × H^{k−2}.
pub const TERMINAL_K: u32 = 3;

#[derive(Clone, Debug)]
pub struct TargetSpec {
    pub g0: PeriodicField,
    pub g1: PeriodicField,
    pub v0: PeriodicField,
    pub v1: PeriodicField,
    pub ghat0: PeriodicField,
    pub ghat1: PeriodicField,
    pub vhat0: PeriodicField,
    pub vhat1: PeriodicField,
    pub a0: PeriodicField,
    pub horizon: f64,
    pub eps: f64,
}

impl TargetSpec {
    /// Rest-to-rest identity problem with constant density.
    pub fn identity(grid: &PeriodicGrid, rho: f64, horizon: f64, eps: f64) -> Self {
        let z = PeriodicField::zeros(grid);
        let r = PeriodicField::constant(grid, rho);
        TargetSpec {
            g0: r.clone(),
            g1: z.clone(),
            v0: z.clone(),
            v1: z.clone(),
            ghat0: r,
            ghat1: z.clone(),
            vhat0: z.clone(),
            vhat1: z.clone(),
            a0: z,
            horizon,
            eps,
        }
    }

    pub fn grid(&self) -> &PeriodicGrid {
        self.g0.grid()
    }

    pub fn validate(&self) -> Result<()> {
        let masses = [("g0", &self.g0, &self.ghat0), ("g1", &self.g1, &self.ghat1)];
        for (name, a, b) in masses {
            let (ma, mb) = (a.integral(), b.integral());
            if (ma - mb).abs() > 1e-10 * (1.0 + ma.abs()) {
                return Err(Error::InvalidSpec(alloc::format!("mass of {name} changes from {ma} to {mb}")));
            }
        }
        for f in [&self.g0, &self.ghat0] {
            if f.min() <= 0.0 {
                return Err(Error::PositivityLost { min: f.min() });
            }
        }
        for (name, f) in [("v0", &self.v0), ("v1", &self.v1), ("vhat0", &self.vhat0), ("vhat1", &self.vhat1)] {
            if f.mean().abs() > 1e-10 * (1.0 + f.max_abs()) {
                return Err(Error::InvalidSpec(alloc::format!("{name} must have zero mean")));
            }
        }
        if !(self.horizon > 0.0) || !(self.eps > 0.0) {
            return Err(Error::InvalidSpec("horizon and eps must be positive".to_string()));
        }
        Ok(())
    }

    pub fn initial_state(&self) -> LimitState {
        LimitState {
            u0: self.v0.clone(),
            u1: self.v1.clone(),
            rho0: self.g0.clone(),
            rho1: self.g1.clone(),
            a: self.a0.clone(),
        }
    }

    /// Target state; its A-slot is zero and never compared.
    pub fn target_state(&self) -> LimitState {
        LimitState {
            u0: self.vhat0.clone(),
            u1: self.vhat1.clone(),
            rho0: self.ghat0.clone(),
            rho1: self.ghat1.clone(),
            a: PeriodicField::zeros(self.grid()),
        }
    }

    /// Terminal error of a state against the target in the controlled components.
    pub fn terminal_error(&self, s: &LimitState) -> f64 {
        s.diff(&self.target_state()).controlled_norm(TERMINAL_K)
    }
}

/// Densities and velocities interpolated linearly in time, as two-node curves.
pub fn interpolate_trajectory(
    spec: &TargetSpec,
) -> (TimeCurve<[PeriodicField; 2]>, TimeCurve<[PeriodicField; 2]>) {
    let t = vec![0.0, spec.horizon];
    let rho = TimeCurve::new(t.clone(), vec![[spec.g0.clone(), spec.g1.clone()], [spec.ghat0.clone(), spec.ghat1.clone()]]);
    let u = TimeCurve::new(t, vec![[spec.v0.clone(), spec.v1.clone()], [spec.vhat0.clone(), spec.vhat1.clone()]]);
    (rho.unwrap(), u.unwrap())
}

/// Solve ∂ₓ(ρ₀ξ) = rhs for the mean-zero ξ.
fn divide_flux(rhs: &PeriodicField, rho0: &PeriodicField) -> Result<PeriodicField> {
    if rho0.min() <= 0.0 {
        return Err(Error::PositivityLost { min: rho0.min() });
    }
    let g = rhs.zero_mean_antiderivative()?;
    let inv = rho0.map(|r| 1.0 / r);
    let c = -g.zip_map(&inv, |a, b| a * b).integral() / inv.integral();
    Ok(g.zip_map(rho0, |a, r| (a + c) / r))
}

/// ξ₀ with ∂ₓ(ρ₀ξ₀) = −∂ₜρ₀ − ∂ₓ(ρ₀u₀) and zero mean.
pub fn solve_xi0(rho0: &PeriodicField, drho0: &PeriodicField, u0: &PeriodicField) -> Result<PeriodicField> {
    let rhs = -&(drho0 + &rho0.mul(u0).derivative(1));
    divide_flux(&rhs, rho0)
}

/// ξ₁ with ∂ₓ(ρ₀ξ₁) = ∂ₓA − ∂ₜρ₁ − ∂ₓ((u₀+ξ₀)ρ₁ + u₁ρ₀) and zero mean.
pub fn solve_xi1(
    rho: &[PeriodicField; 2],
    drho1: &PeriodicField,
    u: &[PeriodicField; 2],
    xi0: &PeriodicField,
    a: &PeriodicField,
) -> Result<PeriodicField> {
    let w = &u[0] + xi0;
    let flux = &w.mul(&rho[1]) + &u[1].mul(&rho[0]);
    let rhs = &(&a.derivative(1) - drho1) - &flux.derivative(1);
    divide_flux(&rhs, &rho[0])
}

/// Forcings making the interpolated curves an exact solution with ξ = ζ.
pub fn compute_eta(
    rho: &[PeriodicField; 2],
    u: &[PeriodicField; 2],
    du: &[PeriodicField; 2],
    xi: &[PeriodicField; 2],
) -> [PeriodicField; 2] {
    let w = &u[0] + &xi[0];
    let eta0 = &(&du[0] + &w.mul(&w.derivative(1))) + &rho[0].derivative(1);
    let flux = &w.mul(&(&u[1] + &xi[1])) + &rho[1];
    let eta1 = &du[1] + &flux.derivative(1);
    [eta0, eta1]
}

/// Mean-zero ∂ₜξ from ∂ₜ(ρ₀ξ) known up to a constant: ∂ₜξ = (∂ₜq − ∂ₜρ₀·ξ + c)/ρ₀.
fn flux_rate(dq: &PeriodicField, drho0: &PeriodicField, xi: &PeriodicField, rho0: &PeriodicField) -> PeriodicField {
    let h = dq - &drho0.mul(xi);
    let inv = rho0.map(|r| 1.0 / r);
    let c = -h.zip_map(&inv, |a, b| a * b).integral() / inv.integral();
    h.zip_map(rho0, |a, r| (a + c) / r)
}

/// Construction nodes: `intervals` uniform steps plus `ramp_intervals` extra
/// refinement inside each cutoff window [0, δ] and [T − δ, T].
pub fn construction_nodes(horizon: f64, intervals: usize, delta: f64, ramp_intervals: usize) -> Vec<f64> {
    let mut t = uniform_nodes(horizon, intervals.max(4));
    if delta > 0.0 && ramp_intervals > 0 {
        let d = delta.min(0.5 * horizon);
        for i in 1..ramp_intervals {
            let s = d * i as f64 / ramp_intervals as f64;
            t.push(s);
            t.push(horizon - s);
        }
    }
    t.sort_by(|a, b| a.partial_cmp(b).unwrap());
    t.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * horizon);
    if let Some(l) = t.last_mut() {
        *l = horizon;
    }
    t
}

/// The interpolated trajectory together with the velocity shifts and their
/// time derivatives, the tracked A-component and the forcings at a node set.
#[derive(Clone, Debug)]
pub struct Construction {
    pub t: Vec<f64>,
    pub rho: Vec<[PeriodicField; 2]>,
    pub u: Vec<[PeriodicField; 2]>,
    pub xi: Vec<[PeriodicField; 2]>,
    pub dxi: Vec<[PeriodicField; 2]>,
    pub a: Vec<PeriodicField>,
    pub eta: Vec<[PeriodicField; 2]>,
    /// Constant time derivatives of the interpolated curves.
    pub drho: [PeriodicField; 2],
    pub du: [PeriodicField; 2],
}

fn transport_rate(a: &PeriodicField, w: &PeriodicField) -> PeriodicField {
    let f = &w.mul(&a.derivative(1)) + &(w.derivative(1).mul(a) * 2.0);
    (-&f).dealias()
}

impl Construction {
    pub fn build(spec: &TargetSpec, nodes: &[f64]) -> Result<Self> {
        spec.validate()?;
        let tt = spec.horizon;
        let drho = [(&spec.ghat0 - &spec.g0) * (1.0 / tt), (&spec.ghat1 - &spec.g1) * (1.0 / tt)];
        let du = [(&spec.vhat0 - &spec.v0) * (1.0 / tt), (&spec.vhat1 - &spec.v1) * (1.0 / tt)];
        let at = |t: f64| -> ([PeriodicField; 2], [PeriodicField; 2]) {
            let s = t / tt;
            let lerp = |a: &PeriodicField, b: &PeriodicField| a * (1.0 - s) + b * s;
            ([lerp(&spec.g0, &spec.ghat0), lerp(&spec.g1, &spec.ghat1)], [lerp(&spec.v0, &spec.vhat0), lerp(&spec.v1, &spec.vhat1)])
        };
        let vel = |t: f64| -> Result<PeriodicField> {
            let (r, u) = at(t);
            Ok(&u[0] + &solve_xi0(&r[0], &drho[0], &u[0])?)
        };
        // A along the interpolated velocity u₀ + ξ₀, RK4 with substeps under a CFL bound
        let grid = spec.grid();
        let mut a_nodes = vec![spec.a0.dealias()];
        for k in 1..nodes.len() {
            let (t0, t1) = (nodes[k - 1], nodes[k]);
            let wmax = vel(t0)?.max_abs().max(vel(t1)?.max_abs()).max(1e-12);
            let sub = (((t1 - t0) * wmax / (0.4 * grid.dx())).ceil() as usize).max(2);
            let h = (t1 - t0) / sub as f64;
            let mut a = a_nodes[k - 1].clone();
            for i in 0..sub {
                let s = t0 + i as f64 * h;
                let (w0, wm, w1) = (vel(s)?, vel(s + 0.5 * h)?, vel(s + h)?);
                let k1 = transport_rate(&a, &w0);
                let k2 = transport_rate(&(&a + &(&k1 * (0.5 * h))), &wm);
                let k3 = transport_rate(&(&a + &(&k2 * (0.5 * h))), &wm);
                let k4 = transport_rate(&(&a + &(&k3 * h)), &w1);
                let inc = &(&k1 + &k4) + &(&(&k2 + &k3) * 2.0);
                a.axpy(h / 6.0, &inc);
            }
            a_nodes.push(a);
        }
        let mut rho = Vec::new();
        let mut u = Vec::new();
        let mut xi = Vec::new();
        let mut dxi = Vec::new();
        let mut eta = Vec::new();
        for (k, &t) in nodes.iter().enumerate() {
            let (r, v) = at(t);
            let x0 = solve_xi0(&r[0], &drho[0], &v[0])?;
            let x1 = solve_xi1(&r, &drho[1], &v, &x0, &a_nodes[k])?;
            // ∂ₜ(ρ₀ξ₀) = −∂ₜ(ρ₀u₀) and ∂ₜ(ρ₀ξ₁) = ∂ₜA − ∂ₜ(wρ₁ + u₁ρ₀), both modulo constants
            let dq0 = -&(&drho[0].mul(&v[0]) + &r[0].mul(&du[0]));
            let dx0 = flux_rate(&dq0, &drho[0], &x0, &r[0]);
            let w = &v[0] + &x0;
            let dw = &du[0] + &dx0;
            let da = transport_rate(&a_nodes[k], &w);
            let df = &(&dw.mul(&r[1]) + &w.mul(&drho[1])) + &(&du[1].mul(&r[0]) + &v[1].mul(&drho[0]));
            let dx1 = flux_rate(&(&da - &df), &drho[0], &x1, &r[0]);
            let x = [x0, x1];
            eta.push(compute_eta(&r, &v, &du, &x));
            rho.push(r);
            u.push(v);
            xi.push(x);
            dxi.push([dx0, dx1]);
        }
        Ok(Construction { t: nodes.to_vec(), rho, u, xi, dxi, a: a_nodes, eta, drho, du })
    }

    /// Max over nodes of the closed-system residual in the four controlled
    /// components, with the interpolated curves as state and (ξ, ξ, η) as inputs.
    pub fn residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for k in 0..self.t.len() {
            let state = LimitState {
                u0: self.u[k][0].clone(),
                u1: self.u[k][1].clone(),
                rho0: self.rho[k][0].clone(),
                rho1: self.rho[k][1].clone(),
                a: self.a[k].clone(),
            };
            let inputs = Inputs { xi: self.xi[k].clone(), zeta: self.xi[k].clone(), eta: self.eta[k].clone() };
            let d = rhs_full(&state, &inputs);
            let r = [
                (&d.u0 - &self.du[0]).max_abs(),
                (&d.u1 - &self.du[1]).max_abs(),
                (&d.rho0 - &self.drho[0]).max_abs(),
                (&d.rho1 - &self.drho[1]).max_abs(),
            ];
            worst = r.iter().copied().fold(worst, f64::max);
        }
        worst
    }

    /// η + ∂ₜξ^δ at the nodes, with ξ^δ = ramp(t/δ)·ramp((T−t)/δ)·ξ.
    pub fn cutoff_forcing(&self, delta: f64) -> Vec<[PeriodicField; 2]> {
        let tt = *self.t.last().unwrap();
        let chi = |t: f64| -> (f64, f64) {
            let (l, dl) = (smooth_step(t / delta), smooth_step_deriv(t / delta) / delta);
            let (r, dr) = (smooth_step((tt - t) / delta), -smooth_step_deriv((tt - t) / delta) / delta);
            (l * r, dl * r + l * dr)
        };
        (0..self.t.len())
            .map(|k| {
                let (c, dc) = chi(self.t[k]);
                let mut out = self.eta[k].clone();
                for i in 0..2 {
                    out[i].axpy(dc, &self.xi[k][i]);
                    out[i].axpy(c, &self.dxi[k][i]);
                }
                out
            })
            .collect()
    }
}

/// Record of how a stage's controls were produced.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Provenance {
    /// Number of segment decompositions performed.
    pub decompositions: usize,
    pub osc: usize,
    pub smoothing: usize,
    pub segments: usize,
    pub fast_path: bool,
}

/// E_n-valued controls. The physical forcing is Σ base + Σ ∂ₜμ over the shift
/// trains (stored in value form); ξ = ζ = 0.
#[derive(Clone, Debug)]
pub struct StageControls {
    pub n: usize,
    pub base: Vec<ControlCurve>,
    pub shift: Vec<OscillatorTrain>,
    pub provenance: Provenance,
}

impl StageControls {
    fn base_signal(&self) -> SharedSignal {
        Arc::new(SumSignal(self.base.iter().map(|c| Arc::new(c.clone()) as SharedSignal).collect()))
    }

    fn shift_signal(&self, rate: bool) -> SharedSignal {
        Arc::new(SumSignal(
            self.shift
                .iter()
                .map(|s| Arc::new(if rate { s.as_rate() } else { s.as_value() }) as SharedSignal)
                .collect(),
        ))
    }

    /// The physical forcing as a solver input.
    pub fn physical_signal(&self) -> SharedSignal {
        Arc::new(SumSignal(vec![self.base_signal(), self.shift_signal(true)]))
    }

    pub fn physical_input(&self, spec: &TargetSpec) -> SystemInput {
        SystemInput {
            initial: spec.initial_state(),
            xi: crate::curve::zero_signal(),
            zeta: crate::curve::zero_signal(),
            eta: self.physical_signal(),
            horizon: spec.horizon,
        }
    }

    /// Equivalent input with the shift moved into ξ = ζ = μ. Its solution differs
    /// from the physical one by u ↦ u + μ, which vanishes at both ends.
    pub fn extended_input(&self, spec: &TargetSpec) -> SystemInput {
        let mu = self.shift_signal(false);
        SystemInput {
            initial: spec.initial_state(),
            xi: mu.clone(),
            zeta: mu,
            eta: self.base_signal(),
            horizon: spec.horizon,
        }
    }

    pub fn base_coefficients_at(&self, t: f64) -> [TrigPolynomial; 2] {
        let mut out = [TrigPolynomial::zero(1), TrigPolynomial::zero(1)];
        for c in &self.base {
            let v = c.coefficients_at(t);
            out[0].add_scaled(1.0, &v[0]);
            out[1].add_scaled(1.0, &v[1]);
        }
        out
    }

    /// Coefficients of the physical forcing at t.
    pub fn coefficients_at(&self, t: f64) -> [TrigPolynomial; 2] {
        let mut out = self.base_coefficients_at(t);
        for s in &self.shift {
            let v = s.as_rate().coefficients_at(t);
            out[0].add_scaled(1.0, &v[0]);
            out[1].add_scaled(1.0, &v[1]);
        }
        out
    }

    /// Base nodes merged with the shift switching times.
    pub fn time_nodes(&self) -> Vec<f64> {
        let mut t: Vec<f64> = self.base.iter().flat_map(|c| c.curve.t_nodes().to_vec()).collect();
        for s in &self.shift {
            t.extend(s.breakpoints());
        }
        t.sort_by(|a, b| a.partial_cmp(b).unwrap());
        t.dedup();
        t
    }

    /// Largest coefficient above E_n over all stored nodes and shift entries.
    pub fn projection_residual(&self, n: usize) -> f64 {
        let mut worst: f64 = 0.0;
        let big = |p: &TrigPolynomial| p.above(n).coeffs().iter().fold(0.0f64, |m, c| m.max(c[0].abs()).max(c[1].abs()));
        for c in &self.base {
            for s in c.curve.samples() {
                worst = worst.max(big(&s[0])).max(big(&s[1]));
            }
        }
        for tr in &self.shift {
            for p in &tr.parts {
                for x in &p.schedule().xi {
                    worst = worst.max(big(&x[0])).max(big(&x[1]));
                }
            }
        }
        worst
    }

    /// Copy with every component projected onto E_n.
    pub fn projected(&self, n: usize, grid: &PeriodicGrid) -> StageControls {
        let base = self.base.iter().map(|c| project_curve(c, n)).collect();
        let shift = self
            .shift
            .iter()
            .map(|tr| OscillatorTrain {
                parts: tr
                    .parts
                    .iter()
                    .map(|p| {
                        let mut s = p.schedule().clone();
                        for x in s.xi.iter_mut() {
                            *x = [x[0].project(n), x[1].project(n)];
                        }
                        SmoothOscillator::new(s, p.smoothing(), grid)
                    })
                    .collect(),
                rate: false,
            })
            .collect();
        StageControls { n, base, shift, provenance: self.provenance.clone() }
    }
}

fn project_curve(c: &ControlCurve, n: usize) -> ControlCurve {
    ControlCurve { curve: c.curve.map(|p| [p[0].project(n), p[1].project(n)]), interp: c.interp }
}

#[derive(Clone, Debug)]
pub struct SynthesisConfig {
    /// Uniform time intervals of the construction.
    pub intervals: usize,
    /// Extra intervals inside each cutoff window.
    pub ramp_intervals: usize,
    /// δ-cutoff as a fraction of T.
    pub delta_fraction: f64,
    pub solver: SolverConfig,
    pub max_osc: usize,
    pub smoothing: usize,
    pub max_segments: usize,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            intervals: 200,
            ramp_intervals: 40,
            delta_fraction: 1.0 / 20.0,
            solver: SolverConfig { outputs: 20, ..SolverConfig::default() },
            max_osc: 32,
            smoothing: 16,
            max_segments: 32,
        }
    }
}

/// E_N-valued controls P_{E_N}(η + ∂ₜξ^δ); `n = None` keeps every resolved mode.
pub fn stage_controls(spec: &TargetSpec, n: Option<usize>, cfg: &SynthesisConfig) -> Result<StageControls> {
    let delta = cfg.delta_fraction * spec.horizon;
    let nodes = construction_nodes(spec.horizon, cfg.intervals, delta, cfg.ramp_intervals);
    let c = Construction::build(spec, &nodes)?;
    let forcing = c.cutoff_forcing(delta);
    let grid = spec.grid();
    let modes = n.map_or(grid.dealias_cutoff(), |n| n + 1);
    let samples =
        forcing.iter().map(|f| [TrigPolynomial::from_field(&f[0], modes), TrigPolynomial::from_field(&f[1], modes)]).collect();
    let curve = ControlCurve { curve: TimeCurve::new(c.t.clone(), samples)?, interp: Interp::Cubic };
    Ok(StageControls {
        n: n.unwrap_or(modes - 1),
        base: vec![curve],
        shift: Vec::new(),
        provenance: Provenance::default(),
    })
}

/// Verified stage-N controls with their terminal error against the target.
pub fn stage_n_controls(spec: &TargetSpec, n: usize, cfg: &SynthesisConfig) -> Result<(StageControls, Trajectory, f64)> {
    let s = stage_controls(spec, Some(n), cfg)?;
    let tr = solve_r(&s.extended_input(spec), &cfg.solver)?;
    let err = spec.terminal_error(tr.terminal());
    Ok((s, tr, err))
}

/// Outcome of one verified stage.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StageRecord {
    pub n: usize,
    /// Terminal error against the target.
    pub terminal_error: f64,
    /// Terminal distance to the previous stage's terminal state (0 for stage N).
    pub gap: f64,
    /// sup_t ∥ρ⃗ − ρ⃗_ref∥ against the stage-N reference trajectory.
    pub rho_deviation: f64,
    pub tolerance: f64,
    /// Allowed terminal error against the target after this stage.
    pub budget: f64,
    pub provenance: Provenance,
    /// (osc, gap) pairs tried; osc = 0 is plain projection.
    pub osc_trace: Vec<(usize, f64)>,
    pub steps: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SynthesisReport {
    pub stages: Vec<StageRecord>,
    pub final_error: f64,
    pub eps: f64,
    pub success: bool,
    pub total_steps: usize,
}

fn terminal_gap(a: &Trajectory, b: &Trajectory) -> f64 {
    a.terminal().diff(b.terminal()).controlled_norm(TERMINAL_K)
}

/// Lower the top mode of `stage_in` by oscillation at a fixed count.
pub fn build_reduction(
    stage_in: &StageControls,
    n: usize,
    osc: usize,
    smoothing: usize,
    segments: usize,
    grid: &PeriodicGrid,
) -> Result<StageControls> {
    let low = stage_in.projected(n, grid);
    let horizon = stage_in.base.iter().map(|c| c.curve.horizon()).fold(0.0, f64::max);
    let s = segments.max(1);
    let width = horizon / s as f64;
    let mut piece_t = Vec::new();
    let mut piece_v = Vec::new();
    let mut parts = Vec::new();
    let mut decompositions = 0;
    for q in 0..s {
        let a = q as f64 * width;
        // segment average of the top content by composite Simpson
        let sub = 32;
        let hq = width / sub as f64;
        let mut avg = [TrigPolynomial::zero(1), TrigPolynomial::zero(1)];
        for i in 0..=sub {
            let w = if i == 0 || i == sub { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            let c = stage_in.base_coefficients_at(a + i as f64 * hq);
            avg[0].add_scaled(w * hq / (3.0 * width), &c[0].above(n));
            avg[1].add_scaled(w * hq / (3.0 * width), &c[1].above(n));
        }
        let d = decompose_pair(&avg, n)?;
        decompositions += 1;
        piece_t.push(a);
        piece_v.push(d.eta.clone());
        let sched = OscillatorSchedule::from_pairs(&d.pairs, osc, a, width);
        parts.push(SmoothOscillator::new(sched, smoothing, grid));
    }
    piece_t.push(horizon);
    piece_v.push(piece_v.last().unwrap().clone());
    let mut out = low;
    out.base.push(ControlCurve { curve: TimeCurve::new(piece_t, piece_v)?, interp: Interp::Hold });
    out.shift.push(OscillatorTrain { parts, rate: false });
    out.provenance = Provenance { decompositions, osc, smoothing, segments: s, fast_path: false };
    Ok(out)
}

/// Segment count from the variation of the top content in H^k, capped.
fn segment_count(stage_in: &StageControls, n: usize, tol: f64, cap: usize) -> usize {
    let nodes: Vec<f64> = stage_in.base.iter().flat_map(|c| c.curve.t_nodes().to_vec()).collect();
    let mut nodes = nodes;
    nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    nodes.dedup();
    let top = |t: f64| {
        let c = stage_in.base_coefficients_at(t);
        [c[0].above(n), c[1].above(n)]
    };
    let mut var = 0.0;
    let mut prev = top(0.0);
    for &t in nodes.iter().skip(1) {
        let cur = top(t);
        var += cur[0].minus(&prev[0]).sobolev_norm(TERMINAL_K) + cur[1].minus(&prev[1]).sobolev_norm(TERMINAL_K - 2);
        prev = cur;
    }
    if var <= 1e-12 {
        return 1;
    }
    ((var / (0.1 * tol)).ceil() as usize).clamp(1, cap.max(1))
}

/// Acceptance thresholds of one reduction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StageBudget {
    /// Allowed terminal distance to the previous stage.
    pub gap: f64,
    /// Allowed terminal error against the target, if tracked.
    pub target: Option<f64>,
}

impl StageBudget {
    fn accepts(&self, gap: f64, target_error: f64) -> bool {
        gap <= self.gap || self.target.is_some_and(|b| target_error <= b)
    }
}

/// Reduce E_{n+1}-valued controls to E_n, checked against the reference run of `stage_in`.
#[allow(clippy::too_many_arguments)]
pub fn reduce_stage(
    stage_in: &StageControls,
    reference: &Trajectory,
    stage_n_ref: &Trajectory,
    spec: &TargetSpec,
    n: usize,
    budget: StageBudget,
    cfg: &SynthesisConfig,
) -> Result<(StageControls, Trajectory, StageRecord)> {
    let grid = spec.grid();
    let record = |c: &StageControls, tr: &Trajectory, gap: f64, trace: Vec<(usize, f64)>| StageRecord {
        n,
        terminal_error: spec.terminal_error(tr.terminal()),
        gap,
        rho_deviation: density_distance(tr, stage_n_ref, TERMINAL_K),
        tolerance: budget.gap,
        budget: budget.target.unwrap_or(f64::NAN),
        provenance: c.provenance.clone(),
        osc_trace: trace,
        steps: tr.steps,
    };
    if stage_in.projection_residual(n) <= 1e-12 {
        let mut out = stage_in.clone();
        out.n = n;
        out.provenance.fast_path = true;
        let rec = record(&out, reference, 0.0, Vec::new());
        return Ok((out, reference.clone(), rec));
    }
    let mut proj = stage_in.projected(n, grid);
    proj.provenance = Provenance { fast_path: true, ..Provenance::default() };
    let tr = solve_r(&proj.extended_input(spec), &cfg.solver)?;
    let gap = terminal_gap(&tr, reference);
    let mut trace = vec![(0, gap)];
    if budget.accepts(gap, spec.terminal_error(tr.terminal())) {
        let rec = record(&proj, &tr, gap, trace);
        return Ok((proj, tr, rec));
    }
    let segments = segment_count(stage_in, n, budget.gap, cfg.max_segments);
    let mut best = f64::INFINITY;
    let mut osc = 4;
    while osc <= cfg.max_osc.max(4) {
        let cand = build_reduction(stage_in, n, osc, cfg.smoothing, segments, grid)?;
        let tr = solve_r(&cand.extended_input(spec), &cfg.solver)?;
        let gap = terminal_gap(&tr, reference);
        trace.push((osc, gap));
        if budget.accepts(gap, spec.terminal_error(tr.terminal())) {
            let rec = record(&cand, &tr, gap, trace);
            return Ok((cand, tr, rec));
        }
        if gap > 0.9 * best {
            break;
        }
        best = best.min(gap);
        osc *= 2;
    }
    let (osc, gap) = trace.iter().skip(1).copied().fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
    Err(Error::OscillationInsufficient { gap, tol: budget.gap, osc })
}

/// Stage N construction followed by reductions down to E₀.
#[derive(Clone, Debug)]
pub struct PipelineOutcome {
    /// Lowest-level controls reached.
    pub controls: StageControls,
    pub report: SynthesisReport,
    pub failure: Option<Error>,
}

impl PipelineOutcome {
    pub fn into_result(self) -> Result<(StageControls, SynthesisReport)> {
        match self.failure {
            None => Ok((self.controls, self.report)),
            Some(_) => Err(Error::TargetUnreached { best: self.report.final_error, eps: self.report.eps }),
        }
    }
}

/// Gap tolerance of stage n out of N under the geometric split of eps.
pub fn stage_tolerance(eps: f64, big_n: usize, n: usize) -> f64 {
    eps * 0.5f64.powi((big_n - n + 1) as i32)
}

/// Cumulative allowance eps·(1 − 2^{−(N−n+1)}) for the terminal error after stage n.
pub fn stage_budget(eps: f64, big_n: usize, n: usize) -> f64 {
    eps - stage_tolerance(eps, big_n, n)
}

pub fn full_pipeline(spec: &TargetSpec, big_n: usize, cfg: &SynthesisConfig) -> Result<PipelineOutcome> {
    spec.validate()?;
    let (mut stage, ref_n, err_n) = stage_n_controls(spec, big_n, cfg)?;
    let mut report = SynthesisReport { eps: spec.eps, ..SynthesisReport::default() };
    report.stages.push(StageRecord {
        n: big_n,
        terminal_error: err_n,
        tolerance: stage_tolerance(spec.eps, big_n, big_n),
        budget: stage_budget(spec.eps, big_n, big_n),
        steps: ref_n.steps,
        ..StageRecord::default()
    });
    report.total_steps = ref_n.steps;
    report.final_error = err_n;
    let mut reference = ref_n.clone();
    let mut failure = None;
    for n in (0..big_n).rev() {
        let budget = StageBudget {
            gap: stage_tolerance(spec.eps, big_n, n),
            target: Some(stage_budget(spec.eps, big_n, n)),
        };
        match reduce_stage(&stage, &reference, &ref_n, spec, n, budget, cfg) {
            Ok((next, tr, rec)) => {
                report.total_steps += rec.steps;
                report.final_error = rec.terminal_error;
                report.stages.push(rec);
                stage = next;
                reference = tr;
            }
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    if failure.is_none() && report.final_error > spec.eps {
        failure = Some(Error::TargetUnreached { best: report.final_error, eps: spec.eps });
    }
    report.success = failure.is_none();
    Ok(PipelineOutcome { controls: stage, report, failure })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> PeriodicGrid {
        PeriodicGrid::new(64).unwrap()
    }

    #[test]
    fn xi0_trivial_and_residual() {
        let g = grid();
        let one = PeriodicField::constant(&g, 1.0);
        let z = PeriodicField::zeros(&g);
        assert!(solve_xi0(&one, &z, &z).unwrap().max_abs() < 1e-15);
        let rho = PeriodicField::from_fn(&g, |x| 1.0 + 0.2 * x.cos() + 0.1 * (2.0 * x).sin());
        let drho = PeriodicField::from_fn(&g, |x| 0.3 * (3.0 * x).cos());
        let u = PeriodicField::from_fn(&g, |x| 0.4 * x.sin());
        let xi = solve_xi0(&rho, &drho, &u).unwrap();
        let res = &(&rho.mul(&xi).derivative(1) + &drho) + &rho.mul(&u).derivative(1);
        assert!(res.max_abs() < 1e-10);
        assert!(xi.mean().abs() < 1e-14);
    }

    #[test]
    fn xi0_rejects_bad_data() {
        let g = grid();
        let z = PeriodicField::zeros(&g);
        let one = PeriodicField::constant(&g, 1.0);
        assert!(matches!(solve_xi0(&one, &one, &z), Err(Error::MeanNotZero { .. })));
        assert!(matches!(solve_xi0(&(&one * -1.0), &z, &z), Err(Error::PositivityLost { .. })));
    }

    #[test]
    fn midpoint_interpolation() {
        let g = grid();
        let mut s = TargetSpec::identity(&g, 1.0, 1.0, 1e-2);
        s.ghat0 = PeriodicField::from_fn(&g, |x| 1.0 + 0.1 * x.cos());
        let (rho, _) = interpolate_trajectory(&s);
        let mid = rho.sample_at(0.5, Interp::Linear);
        assert!((&mid[0] - &PeriodicField::from_fn(&g, |x| 1.0 + 0.05 * x.cos())).max_abs() < 1e-15);
    }

    #[test]
    fn mass_violation_rejected() {
        let g = grid();
        let mut s = TargetSpec::identity(&g, 1.0, 1.0, 1e-2);
        s.ghat0 = PeriodicField::constant(&g, 1.1);
        assert!(matches!(s.validate(), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn shift_rates_match_finite_differences() {
        let g = grid();
        let mut s = TargetSpec::identity(&g, 1.0, 1.0, 1e-2);
        s.ghat0 = PeriodicField::from_fn(&g, |x| 1.0 + 0.2 * x.cos());
        s.ghat1 = PeriodicField::from_fn(&g, |x| 0.1 * x.sin());
        s.vhat0 = PeriodicField::from_fn(&g, |x| 0.3 * (2.0 * x).sin());
        s.v1 = PeriodicField::from_fn(&g, |x| 0.1 * x.cos());
        s.a0 = PeriodicField::from_fn(&g, |x| 0.2 * x.sin());
        let h = 1e-3;
        let nodes: Vec<f64> = (0..=600).map(|i| i as f64 * h).collect();
        let c = Construction::build(&s, &nodes).unwrap();
        for k in [100usize, 300, 550] {
            for i in 0..2 {
                let fd = &(&c.xi[k + 1][i] - &c.xi[k - 1][i]) * (0.5 / h);
                let err = (&fd - &c.dxi[k][i]).max_abs();
                assert!(err < 1e-5 * (1.0 + c.dxi[k][i].max_abs()), "k={k} i={i} err={err:e}");
            }
        }
    }

}
