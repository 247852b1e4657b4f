//! Semiclassical cubic NLS on the circle: split-step solver for the wave
//! function, the phase-lifted amplitude/velocity formulation, the zeroth and
//! first order WKB systems, observables and convergence metrics.
//!
//! Units: iħ∂ₜψ = −(ħ²/2)∂ₓ²ψ + (F + |ψ|² − 1)ψ with the potential F built
//! from a control pair (η₀, η₁) as F = F₀ + ħF₁, −∂ₓFⱼ = ηⱼ, mean(Fⱼ) = 0.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::curve::{SharedSignal, TimeCurve};
use crate::limit::{step_nodes, LimitState};
use crate::spectral::{ComplexField, PeriodicField, PeriodicGrid};
use crate::trig::potential_field;
use crate::{Complex64, Error, Result};

type Spec = Vec<Complex64>;

fn zero() -> Complex64 {
    Complex64::new(0.0, 0.0)
}

fn cis(theta: f64) -> Complex64 {
    Complex64::new(theta.cos(), theta.sin())
}

#[derive(Clone, Debug)]
pub struct WaveFunction {
    pub psi: ComplexField,
    pub hbar: f64,
}

impl WaveFunction {
    pub fn new(psi: ComplexField, hbar: f64) -> Result<Self> {
        if !(hbar > 0.0 && hbar.is_finite()) {
            return Err(Error::InvalidSpec("hbar must be positive".to_string()));
        }
        Ok(WaveFunction { psi, hbar })
    }

    /// a·exp(iS/ħ).
    pub fn from_amplitude_phase(a: &ComplexField, s: &PeriodicField, hbar: f64) -> Result<Self> {
        let phase = ComplexField::from_parts(&s.map(|v| (v / hbar).cos()), &s.map(|v| (v / hbar).sin()));
        Self::new(a.zip_map(&phase, |x, y| x * y), hbar)
    }

    pub fn grid(&self) -> &PeriodicGrid {
        self.psi.grid()
    }

    pub fn mass(&self) -> f64 {
        self.psi.mass()
    }
}

/// Potential F = F₀ + ħF₁ for the control pair at one instant.
pub fn control_potential(eta: &[PeriodicField; 2], hbar: f64) -> Result<PeriodicField> {
    let mut e = eta[0].clone();
    e.axpy(hbar, &eta[1]);
    potential_field(&e)
}

fn eval_pair(s: &SharedSignal, t: f64, grid: &PeriodicGrid) -> [Spec; 2] {
    if s.is_zero() {
        [vec![zero(); grid.n_points()], vec![zero(); grid.n_points()]]
    } else {
        s.eval_spectrum(t, grid)
    }
}

/// Spectrum of η₀ + ħη₁.
fn combine(e: &[Spec; 2], hbar: f64) -> Spec {
    if hbar == 0.0 {
        return e[0].clone();
    }
    e[0].iter().zip(&e[1]).map(|(a, b)| a + b * hbar).collect()
}

/// Mean-zero F with −∂ₓF = η, from the spectrum of η (its mean slot is ignored).
fn potential_of_spectrum(grid: &PeriodicGrid, eta: &[Complex64]) -> PeriodicField {
    let half = grid.n_points() / 2;
    let spec: Spec = eta
        .iter()
        .enumerate()
        .map(|(i, z)| {
            if i == 0 || i == half {
                zero()
            } else {
                -z / Complex64::new(0.0, grid.wavenumber(i) as f64)
            }
        })
        .collect();
    PeriodicField::from_spectrum(grid, &spec)
}

/// Step nodes and output times shared by all solvers of this module.
fn schedule(
    horizon: f64,
    signal: &SharedSignal,
    dt_max: f64,
    steps_per_segment: usize,
    min_steps: usize,
    outputs: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut dt = dt_max;
    if let Some(r) = signal.resolution() {
        dt = dt.min(r / steps_per_segment.max(1) as f64);
    }
    let outputs = outputs.max(1);
    let outs: Vec<f64> = (1..=outputs).map(|i| horizon * i as f64 / outputs as f64).collect();
    let mut bps = outs.clone();
    bps.extend(signal.breakpoints());
    (step_nodes(horizon, &bps, dt, min_steps), outs)
}

fn check_horizon(horizon: f64) -> Result<()> {
    if horizon > 0.0 && horizon.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidSpec("horizon must be positive".to_string()))
    }
}

#[derive(Clone, Debug)]
pub struct NlsConfig {
    /// Absolute upper bound on the step.
    pub dt_max: f64,
    /// The step is also kept below this multiple of ħ.
    pub hbar_fraction: f64,
    pub steps_per_segment: usize,
    /// Minimum steps between consecutive control breakpoints at ħ = 1/16; switching
    /// transitions of rate-form controls are short and steep. The splitting error
    /// there grows like 1/ħ, so the count is scaled by (1/(16ħ))^{1/2} below ħ = 1/16.
    pub min_steps_per_gap: usize,
    pub outputs: usize,
    /// Instability when the relative mass drift exceeds this.
    pub mass_tol: f64,
}

impl Default for NlsConfig {
    fn default() -> Self {
        NlsConfig {
            dt_max: 2.5e-4,
            hbar_fraction: 0.25,
            steps_per_segment: 8,
            min_steps_per_gap: 64,
            outputs: 10,
            mass_tol: 1e-6,
        }
    }
}

/// Strang splitting: half potential phase, exact kinetic step, half potential phase.
/// The external potential is taken at the step midpoint.
pub fn solve_nls(psi0: &WaveFunction, eta: &SharedSignal, horizon: f64, cfg: &NlsConfig) -> Result<TimeCurve<WaveFunction>> {
    check_horizon(horizon)?;
    let grid = psi0.grid().clone();
    let hbar = psi0.hbar;
    let (nodes, outs) = schedule(
        horizon,
        eta,
        cfg.dt_max.min(cfg.hbar_fraction * hbar),
        cfg.steps_per_segment,
        (cfg.min_steps_per_gap as f64 * (1.0 / (16.0 * hbar)).sqrt().max(1.0)).ceil() as usize,
        cfg.outputs,
    );
    let mass0 = psi0.mass();
    let mut psi = psi0.psi.values().to_vec();
    let mut times = vec![0.0];
    let mut states = vec![psi0.clone()];
    let mut next = 0;
    let n = grid.n_points();
    let k2: Vec<f64> = (0..n).map(|i| (grid.wavenumber(i) as f64).powi(2)).collect();
    let mut kinetic: Option<(f64, Vec<Complex64>)> = None;
    for w in nodes.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        let dt = t1 - t0;
        let f = if eta.is_zero() {
            PeriodicField::zeros(&grid)
        } else {
            let e = eta.eval_spectrum(t0 + 0.5 * dt, &grid);
            potential_of_spectrum(&grid, &combine(&e, hbar))
        };
        let half_phase = |psi: &mut [Complex64]| {
            for (z, fv) in psi.iter_mut().zip(f.values()) {
                let theta = -(fv + z.norm_sqr() - 1.0) * dt / (2.0 * hbar);
                *z *= cis(theta);
            }
        };
        half_phase(&mut psi);
        if kinetic.as_ref().map_or(true, |k| k.0 != dt) {
            kinetic = Some((dt, k2.iter().map(|kk| cis(-hbar * kk * dt / 2.0)).collect()));
        }
        grid.forward_in_place(&mut psi);
        for (z, f) in psi.iter_mut().zip(&kinetic.as_ref().unwrap().1) {
            *z *= f;
        }
        grid.inverse_in_place(&mut psi);
        half_phase(&mut psi);
        while next < outs.len() && outs[next] <= t1 + 1e-12 * horizon {
            let wf = WaveFunction { psi: ComplexField::new(&grid, psi.clone())?, hbar };
            let m = wf.mass();
            if !m.is_finite() || (m - mass0).abs() > cfg.mass_tol * mass0.max(f64::MIN_POSITIVE) {
                return Err(Error::Instability { t: t1, reason: alloc::format!("mass drift to {m:e} from {mass0:e}") });
            }
            times.push(outs[next]);
            states.push(wf);
            next += 1;
        }
    }
    TimeCurve::new(times, states)
}

/// Amplitude a = a_r + i a_i, velocity u = ∂ₓS and the spatial mean of S.
#[derive(Clone, Debug)]
pub struct GrenierState {
    pub a_r: PeriodicField,
    pub a_i: PeriodicField,
    pub u: PeriodicField,
    pub s_mean: f64,
}

impl GrenierState {
    pub fn new(a: &ComplexField, u: &PeriodicField, s_mean: f64) -> Result<Self> {
        let tol = crate::spectral::tol_mean(u.l2_norm());
        if u.mean().abs() > tol {
            return Err(Error::MeanNotZero { mean: u.mean(), tol });
        }
        Ok(GrenierState { a_r: a.re(), a_i: a.im(), u: u.clone(), s_mean })
    }

    pub fn amplitude(&self) -> ComplexField {
        ComplexField::from_parts(&self.a_r, &self.a_i)
    }

    pub fn phase(&self) -> PeriodicField {
        let mut s = self.u.zero_mean_antiderivative().unwrap_or_else(|_| PeriodicField::zeros(self.u.grid()));
        for v in s.values_mut() {
            *v += self.s_mean;
        }
        s
    }

    pub fn density(&self) -> PeriodicField {
        self.amplitude().abs_sq()
    }

    pub fn wave(&self, hbar: f64) -> Result<WaveFunction> {
        WaveFunction::from_amplitude_phase(&self.amplitude(), &self.phase(), hbar)
    }
}

#[derive(Clone, Debug)]
pub struct GrenierConfig {
    pub cfl: f64,
    pub max_dt: Option<f64>,
    pub steps_per_segment: usize,
    pub min_steps_per_gap: usize,
    pub outputs: usize,
    /// Instability when the amplitude grows beyond this factor of its initial size.
    pub growth_bound: f64,
}

impl Default for GrenierConfig {
    fn default() -> Self {
        GrenierConfig {
            cfl: 0.5,
            max_dt: None,
            steps_per_segment: 8,
            min_steps_per_gap: 32,
            outputs: 10,
            growth_bound: 1e6,
        }
    }
}

fn spec_deriv(grid: &PeriodicGrid, s: &[Complex64]) -> Spec {
    let mut d = s.to_vec();
    grid.differentiate_spectrum(&mut d, 1);
    d
}

fn finish(grid: &PeriodicGrid, values: Vec<Complex64>) -> Spec {
    let mut s = grid.forward_complex(&values);
    grid.dealias_spectrum(&mut s);
    s
}

/// Hyperbolic part of the amplitude/velocity system:
/// ∂ₜa = −(u∂ₓa + ½a∂ₓu), ∂ₜu = −u∂ₓu − ∂ₓ|a|² + η, d/dt mean(S) = −mean(½u² + |a|² − 1).
fn hyperbolic_rhs(grid: &PeriodicGrid, a: &[Complex64], u: &[Complex64], eta: &[Complex64]) -> (Spec, Spec, f64) {
    let av = grid.inverse_complex(a);
    let axv = grid.inverse_complex(&spec_deriv(grid, a));
    let uv = grid.inverse_complex(u);
    let uxv = grid.inverse_complex(&spec_deriv(grid, u));
    let ra: Vec<Complex64> = (0..av.len()).map(|j| -(uv[j].re * axv[j] + 0.5 * av[j] * uxv[j].re)).collect();
    let ra = finish(grid, ra);
    let rho: Vec<Complex64> = av.iter().map(|z| Complex64::new(z.norm_sqr(), 0.0)).collect();
    let mut rho_s = grid.forward_complex(&rho);
    let rho_mean = rho_s[0].re;
    grid.differentiate_spectrum(&mut rho_s, 1);
    let adv: Vec<Complex64> = uv.iter().zip(&uxv).map(|(a, b)| Complex64::new(a.re * b.re, 0.0)).collect();
    let adv = grid.forward_complex(&adv);
    let mut ru: Spec = adv.iter().zip(&rho_s).map(|(p, q)| -(p + q)).collect();
    grid.dealias_spectrum(&mut ru);
    ru[0] = zero();
    for (r, e) in ru.iter_mut().zip(eta) {
        *r += e;
    }
    ru[0] = zero();
    let ke = uv.iter().map(|z| z.re * z.re).sum::<f64>() / uv.len() as f64;
    let rs = -(0.5 * ke + rho_mean - 1.0);
    (ra, ru, rs)
}

/// Fourier factors of the exact flow of ∂ₜa = (iħ/2)∂ₓ²a over time τ.
fn rotation(grid: &PeriodicGrid, hbar: f64, tau: f64) -> Vec<Complex64> {
    (0..grid.n_points())
        .map(|i| {
            let k = grid.wavenumber(i) as f64;
            cis(-0.5 * hbar * k * k * tau)
        })
        .collect()
}

fn rotate(a: &[Complex64], factors: &[Complex64]) -> Spec {
    a.iter().zip(factors).map(|(z, f)| z * f).collect()
}

fn lin(y: &[Complex64], k: &[Complex64], c: f64) -> Spec {
    y.iter().zip(k).map(|(a, b)| a + b * c).collect()
}

fn all_finite(s: &[Complex64]) -> bool {
    s.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

fn grenier_dt(w0: &GrenierState, cfg: &GrenierConfig) -> f64 {
    let speed = w0.u.max_abs() + w0.amplitude().max_abs() + 1e-12;
    let mut dt = cfg.cfl * w0.u.grid().dx() / speed;
    if let Some(m) = cfg.max_dt {
        dt = dt.min(m);
    }
    dt
}

/// Phase-lifted solver. The dispersive block is integrated exactly in Fourier
/// space (integrating factor) and the hyperbolic block by RK4. ħ = 0 gives the
/// zeroth order WKB system.
pub fn solve_grenier(
    w0: &GrenierState,
    eta: &SharedSignal,
    hbar: f64,
    horizon: f64,
    cfg: &GrenierConfig,
) -> Result<TimeCurve<GrenierState>> {
    check_horizon(horizon)?;
    if !(hbar >= 0.0 && hbar.is_finite()) {
        return Err(Error::InvalidSpec("hbar must be non-negative".to_string()));
    }
    let grid = w0.u.grid().clone();
    let (nodes, outs) = schedule(horizon, eta, grenier_dt(w0, cfg), cfg.steps_per_segment, cfg.min_steps_per_gap, cfg.outputs);
    let eta_spec = |t: f64| -> Spec { combine(&eval_pair(eta, t, &grid), hbar) };
    let mut a = w0.amplitude().spectrum();
    let mut u = w0.u.spectrum();
    let mut s = w0.s_mean;
    let size0 = w0.amplitude().max_abs().max(w0.u.max_abs()).max(1.0);
    let mut times = vec![0.0];
    let mut states = vec![w0.clone()];
    let mut next = 0;
    let to_state = |a: &[Complex64], u: &[Complex64], s: f64| -> GrenierState {
        let av = ComplexField::from_spectrum(&grid, a);
        GrenierState { a_r: av.re(), a_i: av.im(), u: PeriodicField::from_spectrum(&grid, u), s_mean: s }
    };
    let mut factors: Option<(f64, Spec, Spec)> = None;
    for w in nodes.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        let h = t1 - t0;
        if factors.as_ref().map_or(true, |f| f.0 != h) {
            factors = Some((h, rotation(&grid, hbar, 0.5 * h), rotation(&grid, hbar, h)));
        }
        let (_, half_rot, full_rot) = factors.as_ref().unwrap();
        let e0 = eta_spec(t0);
        let em = eta_spec(t0 + 0.5 * h);
        let e1 = eta_spec(t1 - 1e-9 * h);
        // Lawson RK4 in the rotating frame
        let (ka1, ku1, ks1) = hyperbolic_rhs(&grid, &a, &u, &e0);
        let a2 = rotate(&lin(&a, &ka1, 0.5 * h), half_rot);
        let (ka2, ku2, ks2) = hyperbolic_rhs(&grid, &a2, &lin(&u, &ku1, 0.5 * h), &em);
        let a3 = lin(&rotate(&a, half_rot), &ka2, 0.5 * h);
        let (ka3, ku3, ks3) = hyperbolic_rhs(&grid, &a3, &lin(&u, &ku2, 0.5 * h), &em);
        let a4 = lin(&rotate(&a, full_rot), &rotate(&ka3, half_rot), h);
        let (ka4, ku4, ks4) = hyperbolic_rhs(&grid, &a4, &lin(&u, &ku3, h), &e1);
        let full_a = rotate(&a, full_rot);
        let r1 = rotate(&ka1, full_rot);
        let mid: Spec = ka2.iter().zip(&ka3).map(|(p, q)| p + q).collect();
        let r23 = rotate(&mid, half_rot);
        a = (0..a.len()).map(|j| full_a[j] + (r1[j] + 2.0 * r23[j] + ka4[j]) * (h / 6.0)).collect();
        u = (0..u.len()).map(|j| u[j] + (ku1[j] + 2.0 * (ku2[j] + ku3[j]) + ku4[j]) * (h / 6.0)).collect();
        s += (ks1 + 2.0 * (ks2 + ks3) + ks4) * (h / 6.0);
        if !all_finite(&a) || !all_finite(&u) || !s.is_finite() {
            return Err(Error::Instability { t: t1, reason: "non-finite state".to_string() });
        }
        while next < outs.len() && outs[next] <= t1 + 1e-12 * horizon {
            let st = to_state(&a, &u, s);
            if st.amplitude().max_abs().max(st.u.max_abs()) > cfg.growth_bound * size0 {
                return Err(Error::Instability { t: t1, reason: "norm growth beyond bound".to_string() });
            }
            times.push(outs[next]);
            states.push(st);
            next += 1;
        }
    }
    TimeCurve::new(times, states)
}

/// Zeroth and first order WKB profiles at one time. S₀, S₁ are carried as
/// velocities plus tracked means.
#[derive(Clone, Debug)]
pub struct WkbState {
    pub a0: ComplexField,
    pub u0: PeriodicField,
    pub s0_mean: f64,
    pub a1: ComplexField,
    pub u1: PeriodicField,
    pub s1_mean: f64,
}

fn phase_of(u: &PeriodicField, mean: f64) -> PeriodicField {
    let mut s = u.zero_mean_antiderivative().unwrap_or_else(|_| PeriodicField::zeros(u.grid()));
    for v in s.values_mut() {
        *v += mean;
    }
    s
}

impl WkbState {
    pub fn s0(&self) -> PeriodicField {
        phase_of(&self.u0, self.s0_mean)
    }

    pub fn s1(&self) -> PeriodicField {
        phase_of(&self.u1, self.s1_mean)
    }

    pub fn rho0(&self) -> PeriodicField {
        self.a0.abs_sq()
    }

    /// 2 Re(ā₀a₁).
    pub fn rho1(&self) -> PeriodicField {
        let p = self.a0.conj().zip_map(&self.a1, |x, y| x * y);
        p.re().scale(2.0)
    }

    /// a_i ∂ₓa_r − a_r ∂ₓa_i.
    pub fn rotation(&self) -> PeriodicField {
        rotation_of(&self.a0)
    }

    /// Fields in the variables of the limit system.
    pub fn limit_state(&self) -> LimitState {
        LimitState {
            u0: self.u0.clone(),
            u1: self.u1.clone(),
            rho0: self.rho0(),
            rho1: self.rho1(),
            a: self.rotation(),
        }
    }

    pub fn order0(&self) -> GrenierState {
        GrenierState { a_r: self.a0.re(), a_i: self.a0.im(), u: self.u0.clone(), s_mean: self.s0_mean }
    }

    /// Amplitude/velocity state a₀ + ħa₁, u₀ + ħu₁, S₀ + ħS₁.
    pub fn expansion(&self, hbar: f64) -> GrenierState {
        let a = &self.a0 + &self.a1.map(|z| z * hbar);
        let mut u = self.u0.clone();
        u.axpy(hbar, &self.u1);
        GrenierState { a_r: a.re(), a_i: a.im(), u, s_mean: self.s0_mean + hbar * self.s1_mean }
    }

    pub fn target(&self) -> WkbTarget {
        WkbTarget { a0: self.a0.clone(), s0: self.s0(), s1: self.s1() }
    }
}

/// a_i ∂ₓa_r − a_r ∂ₓa_i for a = a_r + i a_i.
pub fn rotation_of(a: &ComplexField) -> PeriodicField {
    let (ar, ai) = (a.re(), a.im());
    ai.mul(&ar.derivative(1)) - ar.mul(&ai.derivative(1))
}

/// Order-0 run: the trajectory plus the data needed to continue to order 1.
#[derive(Clone, Debug)]
pub struct Order0Run {
    pub states: TimeCurve<GrenierState>,
    pub initial: GrenierState,
    pub eta: SharedSignal,
    pub horizon: f64,
    pub cfg: GrenierConfig,
}

/// Zeroth order system driven by η₀.
pub fn solve_order0(
    a00: &ComplexField,
    u_init: &PeriodicField,
    s_mean: f64,
    eta: &SharedSignal,
    horizon: f64,
    cfg: &GrenierConfig,
) -> Result<Order0Run> {
    let initial = GrenierState::new(a00, u_init, s_mean)?;
    let states = solve_grenier(&initial, eta, 0.0, horizon, cfg)?;
    if states.samples().iter().any(|s| s.density().min() <= 0.0 && a00.abs_sq().min() > 0.0) {
        let m = states.samples().iter().map(|s| s.density().min()).fold(f64::INFINITY, f64::min);
        return Err(Error::BlowUp { t: horizon, min_rho0: m });
    }
    Ok(Order0Run { states, initial, eta: eta.clone(), horizon, cfg: cfg.clone() })
}

#[derive(Clone, Debug)]
pub struct WkbData {
    pub states: TimeCurve<WkbState>,
}

impl WkbData {
    pub fn terminal(&self) -> &WkbState {
        self.states.last()
    }
}

/// First order right-hand side:
/// ∂ₜa₁ = −(u₀∂ₓa₁ + u₁∂ₓa₀ + ½(a₀∂ₓu₁ + a₁∂ₓu₀)) + (i/2)∂ₓ²a₀,
/// ∂ₜu₁ = −∂ₓ(u₀u₁) − ∂ₓ(2Re ā₀a₁) + η₁, d/dt mean(S₁) = −mean(u₀u₁ + 2Re ā₀a₁).
fn order1_rhs(grid: &PeriodicGrid, a0: &[Complex64], u0: &[Complex64], a1: &[Complex64], u1: &[Complex64], eta1: &[Complex64]) -> (Spec, Spec, f64) {
    let a0v = grid.inverse_complex(a0);
    let a0x = grid.inverse_complex(&spec_deriv(grid, a0));
    let mut a0xx_s = a0.to_vec();
    grid.differentiate_spectrum(&mut a0xx_s, 2);
    let a1v = grid.inverse_complex(a1);
    let a1x = grid.inverse_complex(&spec_deriv(grid, a1));
    let u0v = grid.inverse_complex(u0);
    let u0x = grid.inverse_complex(&spec_deriv(grid, u0));
    let u1v = grid.inverse_complex(u1);
    let u1x = grid.inverse_complex(&spec_deriv(grid, u1));
    let n = a0v.len();
    let ra: Vec<Complex64> = (0..n)
        .map(|j| -(u0v[j].re * a1x[j] + u1v[j].re * a0x[j] + 0.5 * (a0v[j] * u1x[j].re + a1v[j] * u0x[j].re)))
        .collect();
    let mut ra = finish(grid, ra);
    let i_half = Complex64::new(0.0, 0.5);
    for (r, s) in ra.iter_mut().zip(&a0xx_s) {
        *r += i_half * s;
    }
    let flux: Vec<Complex64> = (0..n)
        .map(|j| Complex64::new(u0v[j].re * u1v[j].re + 2.0 * (a0v[j].conj() * a1v[j]).re, 0.0))
        .collect();
    let flux_s = grid.forward_complex(&flux);
    let mean = flux_s[0].re;
    let mut ru = spec_deriv(grid, &flux_s);
    grid.dealias_spectrum(&mut ru);
    for (r, e) in ru.iter_mut().zip(eta1) {
        *r = e - *r;
    }
    ru[0] = zero();
    (ra, ru, -mean)
}

/// Time derivatives of a WKB state under the forcing pair (η₀, η₁).
pub fn wkb_rates(state: &WkbState, eta: &[PeriodicField; 2]) -> WkbState {
    let grid = state.u0.grid().clone();
    let (a0, u0) = (state.a0.spectrum(), state.u0.spectrum());
    let (a1, u1) = (state.a1.spectrum(), state.u1.spectrum());
    let (e0, e1) = (eta[0].spectrum(), eta[1].spectrum());
    let (ra0, ru0, rs0) = hyperbolic_rhs(&grid, &a0, &u0, &e0);
    let (ra1, ru1, rs1) = order1_rhs(&grid, &a0, &u0, &a1, &u1, &e1);
    WkbState {
        a0: ComplexField::from_spectrum(&grid, &ra0),
        u0: PeriodicField::from_spectrum(&grid, &ru0),
        s0_mean: rs0,
        a1: ComplexField::from_spectrum(&grid, &ra1),
        u1: PeriodicField::from_spectrum(&grid, &ru1),
        s1_mean: rs1,
    }
}

/// Joint zeroth/first order solve: a₁(0) given, S₁(0) = 0, driven by η₁.
/// The order-0 part follows the same step sequence as [`solve_order0`].
pub fn solve_order1(order0: &Order0Run, a10: &ComplexField) -> Result<WkbData> {
    let grid = order0.initial.u.grid().clone();
    let horizon = order0.horizon;
    let eta = &order0.eta;
    let c = &order0.cfg;
    let (nodes, outs) = schedule(horizon, eta, grenier_dt(&order0.initial, c), c.steps_per_segment, c.min_steps_per_gap, c.outputs);
    let pair_spec = |t: f64| -> [Spec; 2] { eval_pair(eta, t, &grid) };
    let mut a0 = order0.initial.amplitude().spectrum();
    let mut u0 = order0.initial.u.spectrum();
    let mut s0 = order0.initial.s_mean;
    let mut a1 = a10.spectrum();
    let mut u1 = vec![zero(); grid.n_points()];
    let mut s1 = 0.0;
    let build = |a0: &[Complex64], u0: &[Complex64], s0: f64, a1: &[Complex64], u1: &[Complex64], s1: f64| WkbState {
        a0: ComplexField::from_spectrum(&grid, a0),
        u0: PeriodicField::from_spectrum(&grid, u0),
        s0_mean: s0,
        a1: ComplexField::from_spectrum(&grid, a1),
        u1: PeriodicField::from_spectrum(&grid, u1),
        s1_mean: s1,
    };
    let mut times = vec![0.0];
    let mut states = vec![build(&a0, &u0, s0, &a1, &u1, s1)];
    let mut next = 0;
    type Stage = (Spec, Spec, f64, Spec, Spec, f64);
    let rhs = |a0: &Spec, u0: &Spec, a1: &Spec, u1: &Spec, e: &[Spec; 2]| -> Stage {
        let (ra0, ru0, rs0) = hyperbolic_rhs(&grid, a0, u0, &e[0]);
        let (ra1, ru1, rs1) = order1_rhs(&grid, a0, u0, a1, u1, &e[1]);
        (ra0, ru0, rs0, ra1, ru1, rs1)
    };
    for w in nodes.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        let h = t1 - t0;
        let e0 = pair_spec(t0);
        let em = pair_spec(t0 + 0.5 * h);
        let e1 = pair_spec(t1 - 1e-9 * h);
        let k1 = rhs(&a0, &u0, &a1, &u1, &e0);
        let k2 = rhs(&lin(&a0, &k1.0, 0.5 * h), &lin(&u0, &k1.1, 0.5 * h), &lin(&a1, &k1.3, 0.5 * h), &lin(&u1, &k1.4, 0.5 * h), &em);
        let k3 = rhs(&lin(&a0, &k2.0, 0.5 * h), &lin(&u0, &k2.1, 0.5 * h), &lin(&a1, &k2.3, 0.5 * h), &lin(&u1, &k2.4, 0.5 * h), &em);
        let k4 = rhs(&lin(&a0, &k3.0, h), &lin(&u0, &k3.1, h), &lin(&a1, &k3.3, h), &lin(&u1, &k3.4, h), &e1);
        let comb = |y: &Spec, p: &Spec, q: &Spec, r: &Spec, s: &Spec| -> Spec {
            (0..y.len()).map(|j| y[j] + (p[j] + 2.0 * (q[j] + r[j]) + s[j]) * (h / 6.0)).collect()
        };
        a0 = comb(&a0, &k1.0, &k2.0, &k3.0, &k4.0);
        u0 = comb(&u0, &k1.1, &k2.1, &k3.1, &k4.1);
        s0 += (k1.2 + 2.0 * (k2.2 + k3.2) + k4.2) * (h / 6.0);
        a1 = comb(&a1, &k1.3, &k2.3, &k3.3, &k4.3);
        u1 = comb(&u1, &k1.4, &k2.4, &k3.4, &k4.4);
        s1 += (k1.5 + 2.0 * (k2.5 + k3.5) + k4.5) * (h / 6.0);
        if ![&a0, &u0, &a1, &u1].iter().all(|s| all_finite(s)) || !s0.is_finite() || !s1.is_finite() {
            return Err(Error::Instability { t: t1, reason: "non-finite state".to_string() });
        }
        while next < outs.len() && outs[next] <= t1 + 1e-12 * horizon {
            let st = build(&a0, &u0, s0, &a1, &u1, s1);
            let m = st.rho0().min();
            if m <= 0.0 {
                return Err(Error::BlowUp { t: t1, min_rho0: m });
            }
            times.push(outs[next]);
            states.push(st);
            next += 1;
        }
    }
    Ok(WkbData { states: TimeCurve::new(times, states)? })
}

/// Density, momentum density and (away from vacuum) velocity of a wave function.
#[derive(Clone, Debug)]
pub struct Observables {
    pub rho: PeriodicField,
    /// ħ Im(ψ̄ ∂ₓψ).
    pub momentum: PeriodicField,
    pub min_density: f64,
    velocity: Option<PeriodicField>,
}

impl Observables {
    pub fn vacuum(&self) -> bool {
        self.velocity.is_none()
    }

    pub fn velocity(&self) -> Result<&PeriodicField> {
        self.velocity.as_ref().ok_or(Error::VacuumRegion { min_density: self.min_density })
    }
}

pub fn extract_observables(w: &WaveFunction, floor: f64) -> Observables {
    let psi = &w.psi;
    let dpsi = psi.derivative(1);
    let rho = psi.abs_sq();
    let momentum = psi.conj().zip_map(&dpsi, |a, b| a * b).im().scale(w.hbar);
    let min_density = rho.min();
    let velocity = (min_density > floor).then(|| momentum.zip_map(&rho, |m, r| m / r));
    Observables { rho, momentum, min_density, velocity }
}

/// Target profiles (â₀, Ŝ₀, Ŝ₁) at the final time.
#[derive(Clone, Debug)]
pub struct WkbTarget {
    pub a0: ComplexField,
    pub s0: PeriodicField,
    pub s1: PeriodicField,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WkbMetrics {
    /// (k, H^k norm of ψ·e^{−iŜ₀/ħ} − â₀e^{iŜ₁}).
    pub s_norms: Vec<(u32, f64)>,
}

/// ψ·e^{−iŜ₀/ħ} − â₀e^{iŜ₁}.
pub fn wkb_residual(psi: &WaveFunction, target: &WkbTarget) -> ComplexField {
    let h = psi.hbar;
    let g = psi.grid();
    let n = g.n_points();
    let vals = (0..n)
        .map(|j| {
            let s0 = target.s0.values()[j];
            let s1 = target.s1.values()[j];
            let p = psi.psi.values()[j] * cis(-s0 / h);
            p - target.a0.values()[j] * cis(s1)
        })
        .collect();
    ComplexField::new(g, vals).expect("same grid")
}

pub fn wkb_error_metrics(psi: &WaveFunction, target: &WkbTarget, ks: &[u32]) -> WkbMetrics {
    let r = wkb_residual(psi, target);
    WkbMetrics { s_norms: ks.iter().map(|&k| (k, r.sobolev_norm(k))).collect() }
}

/// Same residual from the phase-lifted state: a·e^{i(S − Ŝ₀)/ħ} − â₀e^{iŜ₁}.
/// The phase difference is formed before division by ħ, so no 2π ambiguity or
/// cancellation of large phases enters.
pub fn lifted_wkb_residual(w: &GrenierState, hbar: f64, target: &WkbTarget) -> ComplexField {
    let a = w.amplitude();
    let ds = w.phase() - target.s0.clone();
    let g = a.grid();
    let vals = (0..g.n_points())
        .map(|j| {
            a.values()[j] * cis(ds.values()[j] / hbar) - target.a0.values()[j] * cis(target.s1.values()[j])
        })
        .collect();
    ComplexField::new(g, vals).expect("same grid")
}

pub fn lifted_wkb_error_metrics(w: &GrenierState, hbar: f64, target: &WkbTarget, ks: &[u32]) -> WkbMetrics {
    let r = lifted_wkb_residual(w, hbar, target);
    WkbMetrics { s_norms: ks.iter().map(|&k| (k, r.sobolev_norm(k))).collect() }
}

/// Remainders (a^ħ − a₀ − ħa₁)/ħ and (S^ħ − S₀ − ħS₁)/ħ of the amplitude/phase representation.
pub fn remainders(w: &GrenierState, wkb: &WkbState, hbar: f64) -> (ComplexField, PeriodicField) {
    let exp = wkb.expansion(hbar);
    let ra = (&w.amplitude() - &exp.amplitude()).map(|z| z / hbar);
    let rs = (w.phase() - exp.phase()).scale(1.0 / hbar);
    (ra, rs)
}
