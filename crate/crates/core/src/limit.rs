//! Pseudospectral solver for the limit control system in the unknowns
//! (u₀, u₁, ρ₀, ρ₁, A) with velocity perturbations ξ, ζ and forcing η.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
#[allow(unused_imports)] // resolves inherently when std is linked
use num_traits::Float;

use crate::curve::{Linear, SharedSignal, TimeCurve};
use crate::error::{Error, Result};
use crate::spectral::{eval_spectrum, PeriodicField, PeriodicGrid};

#[derive(Clone, Debug, PartialEq)]
pub struct LimitState {
    pub u0: PeriodicField,
    pub u1: PeriodicField,
    pub rho0: PeriodicField,
    pub rho1: PeriodicField,
    pub a: PeriodicField,
}

impl LimitState {
    pub fn rest(grid: &PeriodicGrid, rho0: f64) -> Self {
        let z = PeriodicField::zeros(grid);
        LimitState {
            u0: z.clone(),
            u1: z.clone(),
            rho0: PeriodicField::constant(grid, rho0),
            rho1: z.clone(),
            a: z,
        }
    }

    pub fn grid(&self) -> &PeriodicGrid {
        self.u0.grid()
    }

    pub fn fields(&self) -> [&PeriodicField; 5] {
        [&self.u0, &self.u1, &self.rho0, &self.rho1, &self.a]
    }

    fn from_fields(f: [PeriodicField; 5]) -> Self {
        let [u0, u1, rho0, rho1, a] = f;
        LimitState { u0, u1, rho0, rho1, a }
    }

    pub fn map(&self, f: impl Fn(&PeriodicField) -> PeriodicField) -> Self {
        LimitState::from_fields(self.fields().map(f))
    }

    pub fn diff(&self, other: &Self) -> Self {
        LimitState {
            u0: &self.u0 - &other.u0,
            u1: &self.u1 - &other.u1,
            rho0: &self.rho0 - &other.rho0,
            rho1: &self.rho1 - &other.rho1,
            a: &self.a - &other.a,
        }
    }

    /// ∥u₀∥_{H^{k}} + ∥u₁∥_{H^{k−2}} + ∥ρ₀∥_{H^{k}} + ∥ρ₁∥_{H^{k−2}}: the controlled components.
    pub fn controlled_norm(&self, k: u32) -> f64 {
        let l = k.saturating_sub(2);
        self.u0.sobolev_norm(k) + self.u1.sobolev_norm(l) + self.rho0.sobolev_norm(k) + self.rho1.sobolev_norm(l)
    }

    /// Y^k-type norm at one time: controlled components plus ∥A∥_{H^{k−1}}.
    pub fn y_norm(&self, k: u32) -> f64 {
        self.controlled_norm(k) + self.a.sobolev_norm(k.saturating_sub(1))
    }

    /// ∥ρ₀∥_{H^k} + ∥ρ₁∥_{H^{k−2}}.
    pub fn density_norm(&self, k: u32) -> f64 {
        self.rho0.sobolev_norm(k) + self.rho1.sobolev_norm(k.saturating_sub(2))
    }
}

impl Linear for LimitState {
    fn lin_comb(terms: &[(f64, &Self)]) -> Self {
        let pick = |i: usize| -> PeriodicField {
            let t: Vec<(f64, &PeriodicField)> = terms.iter().map(|(c, s)| (*c, s.fields()[i])).collect();
            PeriodicField::lin_comb(&t)
        };
        LimitState::from_fields([pick(0), pick(1), pick(2), pick(3), pick(4)])
    }
}

/// Initial data and inputs U = (v, g, A₀, ξ, ζ, η) on [0, T].
#[derive(Clone, Debug)]
pub struct SystemInput {
    pub initial: LimitState,
    pub xi: SharedSignal,
    pub zeta: SharedSignal,
    pub eta: SharedSignal,
    pub horizon: f64,
}

impl SystemInput {
    pub fn check(&self) -> Result<()> {
        let s = &self.initial;
        if s.rho0.min() <= 0.0 {
            return Err(Error::PositivityLost { min: s.rho0.min() });
        }
        for (name, f) in [("v0", &s.u0), ("v1", &s.u1)] {
            let tol = 1e-10 * (1.0 + f.max_abs());
            if f.mean().abs() > tol {
                return Err(Error::InvalidSpec(alloc::format!("{name} has nonzero mean {:e}", f.mean())));
            }
        }
        if !(self.horizon > 0.0) {
            return Err(Error::InvalidSpec("horizon must be positive".to_string()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SolverConfig {
    pub cfl: f64,
    /// Upper bound on the step, on top of the CFL and control-resolution limits.
    pub max_dt: Option<f64>,
    /// Minimum number of steps between consecutive breakpoints.
    pub min_steps_per_gap: usize,
    /// Steps per finest control segment.
    pub steps_per_segment: usize,
    /// Number of uniform output intervals; states are stored at their ends.
    pub outputs: usize,
    /// Additional output times.
    pub extra_outputs: Vec<f64>,
    /// BlowUp when min ρ₀ drops below this fraction of the initial minimum.
    pub floor_fraction: f64,
    /// Instability when the largest norm exceeds this factor of its initial value (+1).
    pub growth_bound: f64,
    /// Instability when the measured CFL number exceeds this value.
    pub cfl_limit: f64,
    /// Sobolev index used in diagnostics.
    pub k: u32,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            cfl: 0.5,
            max_dt: None,
            min_steps_per_gap: 2,
            steps_per_segment: 8,
            outputs: 10,
            extra_outputs: Vec::new(),
            floor_fraction: 0.05,
            growth_bound: 1e6,
            cfl_limit: 1.5,
            k: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeDiagnostics {
    pub t: f64,
    pub dt: f64,
    pub min_rho0: f64,
    /// H^k norms of (u₀, u₁, ρ₀, ρ₁, A) for k = 0..=cfg.k.
    pub norms: Vec<[f64; 5]>,
    pub cfl: f64,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub states: TimeCurve<LimitState>,
    pub diagnostics: Vec<NodeDiagnostics>,
    pub steps: usize,
    pub min_rho0: f64,
    pub max_cfl: f64,
}

impl Trajectory {
    pub fn terminal(&self) -> &LimitState {
        self.states.last()
    }
}

/// Control values at one instant.
pub struct Inputs {
    pub xi: [PeriodicField; 2],
    pub zeta: [PeriodicField; 2],
    pub eta: [PeriodicField; 2],
}

/// Time derivative of the state (physical fields), dealiased.
pub fn rhs_full(state: &LimitState, inputs: &Inputs) -> LimitState {
    let grid = state.grid().clone();
    let spec = state.fields().map(|f| f.spectrum());
    let d = rhs_spectral(&grid, &spec, inputs);
    LimitState::from_fields(d.map(|s| PeriodicField::from_spectrum(&grid, &s)))
}

type Spec = Vec<Complex64>;

fn deriv_truncated(grid: &PeriodicGrid, values: &[f64], scale: f64) -> Spec {
    let mut s = grid.forward(values);
    grid.differentiate_spectrum(&mut s, 1);
    grid.dealias_spectrum(&mut s);
    if scale != 1.0 {
        for z in s.iter_mut() {
            *z *= scale;
        }
    }
    s
}

fn rhs_spectral(grid: &PeriodicGrid, y: &[Spec; 5], inp: &Inputs) -> [Spec; 5] {
    let n = grid.n_points();
    let phys = |s: &Spec| grid.inverse_real(s);
    let u0 = phys(&y[0]);
    let u1 = phys(&y[1]);
    let r0 = phys(&y[2]);
    let r1 = phys(&y[3]);
    let a = phys(&y[4]);
    let mut da_s = y[4].clone();
    grid.differentiate_spectrum(&mut da_s, 1);
    let da = phys(&da_s);
    // a-velocity w = u₀ + ζ₀ and its derivative
    let mut w_s = y[0].clone();
    let zeta0 = inp.zeta[0].values();
    let zs = grid.forward(zeta0);
    for (a, b) in w_s.iter_mut().zip(&zs) {
        *a += b;
    }
    grid.differentiate_spectrum(&mut w_s, 1);
    let dw = phys(&w_s);
    let xi0 = inp.xi[0].values();
    let xi1 = inp.xi[1].values();
    let zeta1 = inp.zeta[1].values();

    let mut f_r0 = vec![0.0; n];
    let mut f_u0 = vec![0.0; n];
    let mut f_a = vec![0.0; n];
    let mut f_r1 = vec![0.0; n];
    let mut f_u1 = vec![0.0; n];
    for j in 0..n {
        let w = u0[j] + zeta0[j];
        let b = u0[j] + xi0[j];
        let c = u1[j] + xi1[j];
        let d = u1[j] + zeta1[j];
        f_r0[j] = w * r0[j];
        f_u0[j] = 0.5 * b * b + r0[j];
        f_a[j] = -(w * da[j] + 2.0 * dw[j] * a[j]);
        f_r1[j] = w * r1[j] + d * r0[j] - a[j];
        f_u1[j] = b * c + r1[j];
    }
    let mut d_r0 = deriv_truncated(grid, &f_r0, -1.0);
    let mut d_u0 = deriv_truncated(grid, &f_u0, -1.0);
    let mut d_a = grid.forward(&f_a);
    grid.dealias_spectrum(&mut d_a);
    let mut d_r1 = deriv_truncated(grid, &f_r1, -1.0);
    let mut d_u1 = deriv_truncated(grid, &f_u1, -1.0);
    for (k, target) in [(0usize, &mut d_u0), (1, &mut d_u1)] {
        let e = inp.eta[k].values();
        if e.iter().any(|v| *v != 0.0) {
            let mut es = grid.forward(e);
            grid.dealias_spectrum(&mut es);
            es[0] = Complex64::new(0.0, 0.0);
            for (a, b) in target.iter_mut().zip(&es) {
                *a += b;
            }
        }
    }
    // the divergence forms conserve mass exactly; clear round-off in the mean slots
    d_r0[0] = Complex64::new(0.0, 0.0);
    d_r1[0] = Complex64::new(0.0, 0.0);
    d_u0[0] = Complex64::new(0.0, 0.0);
    d_u1[0] = Complex64::new(0.0, 0.0);
    [d_u0, d_u1, d_r0, d_r1, d_a]
}

/// Step nodes: every breakpoint is hit exactly, each gap is split into equal steps.
pub fn step_nodes(horizon: f64, breakpoints: &[f64], dt_max: f64, min_steps: usize) -> Vec<f64> {
    let mut bp: Vec<f64> = breakpoints.iter().copied().filter(|t| *t > 0.0 && *t < horizon).collect();
    bp.push(0.0);
    bp.push(horizon);
    bp.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let tol = 1e-12 * horizon;
    bp.dedup_by(|a, b| (*a - *b).abs() <= tol);
    if let Some(l) = bp.last_mut() {
        *l = horizon;
    }
    let mut nodes = vec![0.0];
    for w in bp.windows(2) {
        let gap = w[1] - w[0];
        let k = ((gap / dt_max).ceil() as usize).max(min_steps).max(1);
        for i in 1..=k {
            nodes.push(if i == k { w[1] } else { w[0] + gap * i as f64 / k as f64 });
        }
    }
    nodes
}

fn max_abs_pair(s: &SharedSignal, horizon: f64, grid: &PeriodicGrid) -> f64 {
    if s.is_zero() {
        return 0.0;
    }
    let samples = 64;
    let mut m: f64 = 0.0;
    let mut times: Vec<f64> = (0..=samples).map(|i| horizon * i as f64 / samples as f64).collect();
    let bp = s.breakpoints();
    let stride = (bp.len() / 256).max(1);
    times.extend(bp.iter().step_by(stride).copied());
    for t in times {
        if t < 0.0 || t > horizon {
            continue;
        }
        m = m.max(s.eval(t, grid)[0].max_abs());
    }
    m
}

struct Stepper<'a> {
    grid: PeriodicGrid,
    input: &'a SystemInput,
}

impl Stepper<'_> {
    fn inputs_at(&self, t: f64) -> Inputs {
        let g = &self.grid;
        let ev = |s: &SharedSignal| {
            if s.is_zero() {
                [PeriodicField::zeros(g), PeriodicField::zeros(g)]
            } else {
                s.eval(t, g)
            }
        };
        Inputs { xi: ev(&self.input.xi), zeta: ev(&self.input.zeta), eta: ev(&self.input.eta) }
    }

    fn rk4(&self, y: &[Spec; 5], t0: f64, t1: f64) -> [Spec; 5] {
        let dt = t1 - t0;
        // stage times are kept inside the step so piecewise-constant inputs use this segment
        let eps = 1e-9 * dt;
        let i0 = self.inputs_at(t0);
        let im = self.inputs_at(t0 + 0.5 * dt);
        let i1 = self.inputs_at(t1 - eps);
        let g = &self.grid;
        let axpy = |y: &[Spec; 5], k: &[Spec; 5], c: f64| -> [Spec; 5] {
            core::array::from_fn(|i| y[i].iter().zip(&k[i]).map(|(a, b)| a + b * c).collect())
        };
        let k1 = rhs_spectral(g, y, &i0);
        let k2 = rhs_spectral(g, &axpy(y, &k1, 0.5 * dt), &im);
        let k3 = rhs_spectral(g, &axpy(y, &k2, 0.5 * dt), &im);
        let k4 = rhs_spectral(g, &axpy(y, &k3, dt), &i1);
        core::array::from_fn(|i| {
            (0..y[i].len())
                .map(|j| y[i][j] + (k1[i][j] + 2.0 * k2[i][j] + 2.0 * k3[i][j] + k4[i][j]) * (dt / 6.0))
                .collect()
        })
    }
}

fn diagnostics(grid: &PeriodicGrid, state: &LimitState, t: f64, dt: f64, cfl: f64, k: u32) -> NodeDiagnostics {
    let norms = (0..=k)
        .map(|kk| state.fields().map(|f| f.sobolev_norm(kk)))
        .collect();
    let _ = grid;
    NodeDiagnostics { t, dt, min_rho0: state.rho0.min(), norms, cfl }
}

/// Solution operator: integrate the closed system over [0, T].
pub fn solve_r(input: &SystemInput, cfg: &SolverConfig) -> Result<Trajectory> {
    input.check()?;
    let grid = input.initial.grid().clone();
    let horizon = input.horizon;
    let init = input.initial.map(|f| f.dealias());
    let floor = cfg.floor_fraction * init.rho0.min();

    let speed = init.u0.max_abs()
        + max_abs_pair(&input.xi, horizon, &grid).max(max_abs_pair(&input.zeta, horizon, &grid))
        + init.rho0.max().sqrt();
    let mut dt_max = cfg.cfl * grid.dx() / speed.max(1e-12);
    let res = [&input.xi, &input.zeta, &input.eta].iter().filter_map(|s| s.resolution()).reduce(f64::min);
    if let Some(r) = res {
        dt_max = dt_max.min(r / cfg.steps_per_segment as f64);
    }
    if let Some(m) = cfg.max_dt {
        dt_max = dt_max.min(m);
    }
    let mut outs: Vec<f64> = (1..=cfg.outputs.max(1)).map(|i| horizon * i as f64 / cfg.outputs.max(1) as f64).collect();
    outs.extend(cfg.extra_outputs.iter().copied().filter(|t| *t > 0.0 && *t <= horizon));
    outs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    outs.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * horizon);
    let mut bps: Vec<f64> = outs.clone();
    for s in [&input.xi, &input.zeta, &input.eta] {
        bps.extend(s.breakpoints());
    }
    let nodes = step_nodes(horizon, &bps, dt_max, cfg.min_steps_per_gap);

    let stepper = Stepper { grid: grid.clone(), input };
    let mut y: [Spec; 5] = init.fields().map(|f| f.spectrum());
    let norm0 = init.y_norm(0).max(1.0);
    let mut times = vec![0.0];
    let mut states = vec![init.clone()];
    let mut diags = vec![diagnostics(&grid, &init, 0.0, 0.0, 0.0, cfg.k)];
    let mut next_out = 0usize;
    let mut min_rho0 = init.rho0.min();
    let mut max_cfl: f64 = 0.0;
    let zeta = &input.zeta;
    for w in nodes.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        let dt = t1 - t0;
        y = stepper.rk4(&y, t0, t1);
        let u0 = grid.inverse_real(&y[0]);
        let r0 = grid.inverse_real(&y[2]);
        let rmin = r0.iter().copied().fold(f64::INFINITY, f64::min);
        let rmax = r0.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        min_rho0 = min_rho0.min(rmin);
        if !rmin.is_finite() || y.iter().any(|s| s.iter().any(|z| !z.re.is_finite() || !z.im.is_finite())) {
            return Err(Error::Instability { t: t1, reason: "non-finite state".to_string() });
        }
        if rmin < floor {
            return Err(Error::BlowUp { t: t1, min_rho0: rmin });
        }
        let umax = u0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let zmax = if zeta.is_zero() { 0.0 } else { 0.0f64.max(zeta.eval(t1 - 0.5 * dt, &grid)[0].max_abs()) };
        let cfl = dt * (umax + zmax + rmax.max(0.0).sqrt()) / grid.dx();
        max_cfl = max_cfl.max(cfl);
        if cfl > cfg.cfl_limit {
            return Err(Error::Instability { t: t1, reason: alloc::format!("CFL number {cfl:.3} above limit") });
        }
        while next_out < outs.len() && outs[next_out] <= t1 + 1e-12 * horizon {
            let st = LimitState::from_fields(core::array::from_fn(|i| PeriodicField::from_spectrum(&grid, &y[i])));
            let nrm = st.y_norm(0);
            if nrm > cfg.growth_bound * norm0 {
                return Err(Error::Instability { t: t1, reason: "norm growth beyond bound".to_string() });
            }
            diags.push(diagnostics(&grid, &st, t1, dt, cfl, cfg.k));
            times.push(outs[next_out]);
            states.push(st);
            next_out += 1;
        }
    }
    Ok(Trajectory {
        states: TimeCurve::new(times, states)?,
        diagnostics: diags,
        steps: nodes.len() - 1,
        min_rho0,
        max_cfl,
    })
}

/// A-component by characteristics: trace each grid point back to t = 0 along
/// dx/dt = u(t, x) and integrate dA/dt = −2∂ₓu·A along the path.
pub fn solve_a_characteristics(
    u_eff: &TimeCurve<PeriodicField>,
    a0: &PeriodicField,
    out_times: &[f64],
    steps_per_unit: usize,
) -> TimeCurve<PeriodicField> {
    let grid = a0.grid().clone();
    let u_spec: Vec<Spec> = u_eff.samples().iter().map(|f| f.spectrum()).collect();
    let du_spec: Vec<Spec> = u_spec
        .iter()
        .map(|s| {
            let mut d = s.clone();
            grid.differentiate_spectrum(&mut d, 1);
            d
        })
        .collect();
    let a0_spec = a0.spectrum();
    let eval = |specs: &[Spec], t: f64, x: f64| -> f64 {
        if specs.len() == 1 {
            return eval_spectrum(&grid, &specs[0], x).re;
        }
        let i = u_eff.interval(t);
        let (ta, tb) = (u_eff.t_nodes()[i], u_eff.t_nodes()[i + 1]);
        let th = ((t - ta) / (tb - ta)).clamp(0.0, 1.0);
        (1.0 - th) * eval_spectrum(&grid, &specs[i], x).re + th * eval_spectrum(&grid, &specs[i + 1], x).re
    };
    // (dX/ds, dG/ds) = (u, ∂ₓu)
    let f = |s: f64, x: f64| -> (f64, f64) { (eval(&u_spec, s, x), eval(&du_spec, s, x)) };
    let mut times = vec![0.0];
    let mut samples = vec![a0.clone()];
    for &t in out_times.iter().filter(|t| **t > 0.0) {
        let k = ((t * steps_per_unit as f64).ceil() as usize).max(4);
        let h = -t / k as f64;
        let values = (0..grid.n_points())
            .map(|j| {
                let mut x = grid.x(j);
                let mut gsum = 0.0;
                let mut s = t;
                for _ in 0..k {
                    let (a1, b1) = f(s, x);
                    let (a2, b2) = f(s + 0.5 * h, x + 0.5 * h * a1);
                    let (a3, b3) = f(s + 0.5 * h, x + 0.5 * h * a2);
                    let (a4, b4) = f(s + h, x + h * a3);
                    x += h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
                    gsum += h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4);
                    s += h;
                }
                // gsum = G(0) − G(t) = −∫₀ᵗ ∂ₓu along the path
                eval_spectrum(&grid, &a0_spec, x).re * (2.0 * gsum).exp()
            })
            .collect();
        times.push(t);
        samples.push(PeriodicField::new(&grid, values).unwrap());
    }
    TimeCurve::new(times, samples).unwrap()
}

/// Sup over stored nodes of the Y^{k}-type norm of a trajectory difference.
pub fn trajectory_distance(a: &Trajectory, b: &Trajectory, k: u32) -> f64 {
    a.states
        .samples()
        .iter()
        .zip(b.states.samples())
        .map(|(x, y)| x.diff(y).y_norm(k))
        .fold(0.0, f64::max)
}

/// Sup over stored nodes of the density distance ∥ρ₀∥_{H^k} + ∥ρ₁∥_{H^{k−2}}.
pub fn density_distance(a: &Trajectory, b: &Trajectory, k: u32) -> f64 {
    a.states
        .samples()
        .iter()
        .zip(b.states.samples())
        .map(|(x, y)| x.diff(y).density_norm(k))
        .fold(0.0, f64::max)
}

fn signal_l2t(a: &SharedSignal, b: &SharedSignal, horizon: f64, grid: &PeriodicGrid, k: [u32; 2]) -> f64 {
    if a.is_zero() && b.is_zero() {
        return 0.0;
    }
    let samples = 400;
    let mut acc = 0.0;
    for i in 0..samples {
        let t = horizon * (i as f64 + 0.5) / samples as f64;
        let (x, y) = (a.eval(t, grid), b.eval(t, grid));
        let d0 = (&x[0] - &y[0]).sobolev_norm(k[0]);
        let d1 = (&x[1] - &y[1]).sobolev_norm(k[1]);
        acc += (d0 * d0 + d1 * d1) * horizon / samples as f64;
    }
    acc.sqrt()
}

/// X^{k}-type distance between two inputs.
pub fn input_distance(a: &SystemInput, b: &SystemInput, k: u32) -> f64 {
    let grid = a.initial.grid();
    let l = k.saturating_sub(2);
    let (s, r) = (&a.initial, &b.initial);
    let mut d = (&s.u0 - &r.u0).sobolev_norm(k)
        + (&s.u1 - &r.u1).sobolev_norm(l)
        + (&s.rho0 - &r.rho0).sobolev_norm(k)
        + (&s.rho1 - &r.rho1).sobolev_norm(l)
        + (&s.a - &r.a).sobolev_norm(k.saturating_sub(1));
    let t = a.horizon;
    d += signal_l2t(&a.xi, &b.xi, t, grid, [k + 1, k.saturating_sub(1)]);
    d += signal_l2t(&a.zeta, &b.zeta, t, grid, [k + 1, k.saturating_sub(1)]);
    d += signal_l2t(&a.eta, &b.eta, t, grid, [k, l]);
    d
}

/// Ratio ∥R(U¹) − R(U²)∥_{Y^{k−1}} / ∥U¹ − U²∥_{X^{k−1}} (0 when the inputs coincide).
pub fn lipschitz_probe(a: &SystemInput, b: &SystemInput, k: u32, cfg: &SolverConfig) -> Result<f64> {
    let ra = solve_r(a, cfg)?;
    let rb = solve_r(b, cfg)?;
    let num = trajectory_distance(&ra, &rb, k - 1);
    let den = input_distance(a, b, k - 1);
    if num == 0.0 {
        return Ok(0.0);
    }
    Ok(num / den)
}
