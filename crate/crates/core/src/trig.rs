//! Trigonometric control spaces E_n = span{sin jx, cos jx : 1 ≤ j ≤ n+1},
//! bracket decompositions, paired convexification and oscillating schedules.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
#[allow(unused_imports)] // resolves inherently when std is linked
use num_traits::Float;

use crate::curve::{smooth_step, smooth_step_deriv, ControlCurve, Interp, Signal, TimeCurve};
use crate::error::{Error, Result};
use crate::spectral::{PeriodicField, PeriodicGrid};

/// Mean-zero trigonometric polynomial Σ_j (s_j sin jx + c_j cos jx), j = 1..max_mode.
#[derive(Clone, Debug, PartialEq)]
pub struct TrigPolynomial {
    coeffs: Vec<[f64; 2]>,
}

impl TrigPolynomial {
    pub fn zero(max_mode: usize) -> Self {
        TrigPolynomial { coeffs: vec![[0.0; 2]; max_mode.max(1)] }
    }

    pub fn from_coeffs(coeffs: Vec<[f64; 2]>) -> Self {
        let mut p = TrigPolynomial { coeffs };
        if p.coeffs.is_empty() {
            p.coeffs.push([0.0; 2]);
        }
        p
    }

    pub fn sin(j: usize, a: f64) -> Self {
        let mut p = Self::zero(j);
        p.coeffs[j - 1][0] = a;
        p
    }

    pub fn cos(j: usize, a: f64) -> Self {
        let mut p = Self::zero(j);
        p.coeffs[j - 1][1] = a;
        p
    }

    pub fn max_mode(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[[f64; 2]] {
        &self.coeffs
    }

    /// (sin, cos) coefficient of mode j (zero beyond max_mode).
    pub fn coeff(&self, j: usize) -> [f64; 2] {
        if j == 0 || j > self.coeffs.len() {
            [0.0; 2]
        } else {
            self.coeffs[j - 1]
        }
    }

    fn grow(&mut self, modes: usize) {
        if self.coeffs.len() < modes {
            self.coeffs.resize(modes, [0.0; 2]);
        }
    }

    pub fn add_scaled(&mut self, c: f64, other: &Self) {
        self.grow(other.max_mode());
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            a[0] += c * b[0];
            a[1] += c * b[1];
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        TrigPolynomial { coeffs: self.coeffs.iter().map(|p| [c * p[0], c * p[1]]).collect() }
    }

    pub fn plus(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.add_scaled(1.0, other);
        out
    }

    pub fn minus(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.add_scaled(-1.0, other);
        out
    }

    /// Largest mode with a coefficient of magnitude above `tol`; 0 for the zero polynomial.
    pub fn top_mode(&self, tol: f64) -> usize {
        self.coeffs
            .iter()
            .rposition(|p| p[0].abs() > tol || p[1].abs() > tol)
            .map_or(0, |i| i + 1)
    }

    pub fn is_zero(&self) -> bool {
        self.top_mode(0.0) == 0
    }

    /// Membership in E_n (modes ≤ n+1).
    pub fn is_in(&self, n: usize) -> bool {
        self.top_mode(0.0) <= n + 1
    }

    /// Orthogonal projection onto E_n.
    pub fn project(&self, n: usize) -> Self {
        let keep = (n + 1).min(self.coeffs.len());
        TrigPolynomial::from_coeffs(self.coeffs[..keep].to_vec())
    }

    /// Component orthogonal to E_n.
    pub fn above(&self, n: usize) -> Self {
        let mut out = self.clone();
        for p in out.coeffs.iter_mut().take(n + 1) {
            *p = [0.0; 2];
        }
        out
    }

    pub fn derivative(&self) -> Self {
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let j = (i + 1) as f64;
                [-j * p[1], j * p[0]]
            })
            .collect();
        TrigPolynomial { coeffs }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let j = (i + 1) as f64;
                p[0] * (j * x).sin() + p[1] * (j * x).cos()
            })
            .sum()
    }

    /// Coefficients of modes 1..=max_mode of a sampled field (its mean is discarded).
    pub fn from_field(f: &PeriodicField, max_mode: usize) -> Self {
        let s = f.spectrum();
        let n = f.grid().n_points();
        let top = max_mode.min(n / 2 - 1);
        let coeffs = (1..=max_mode)
            .map(|j| if j <= top { [-2.0 * s[j].im, 2.0 * s[j].re] } else { [0.0; 2] })
            .collect();
        TrigPolynomial::from_coeffs(coeffs)
    }

    pub fn to_spectrum(&self, grid: &PeriodicGrid) -> Vec<Complex64> {
        let n = grid.n_points();
        let top = self.top_mode(0.0);
        assert!(top < n / 2, "mode {top} not representable on {n} points");
        let mut spec = vec![Complex64::new(0.0, 0.0); n];
        for j in 1..=top {
            let [s, c] = self.coeffs[j - 1];
            let z = Complex64::new(0.5 * c, -0.5 * s);
            spec[j] = z;
            spec[n - j] = z.conj();
        }
        spec
    }

    pub fn to_field(&self, grid: &PeriodicGrid) -> PeriodicField {
        PeriodicField::from_spectrum(grid, &self.to_spectrum(grid))
    }

    /// L² norm over the circle.
    pub fn l2_norm(&self) -> f64 {
        (PI * self.coeffs.iter().map(|p| p[0] * p[0] + p[1] * p[1]).sum::<f64>()).sqrt()
    }

    pub fn sobolev_norm(&self, k: u32) -> f64 {
        let acc: f64 = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let m2 = ((i + 1) * (i + 1)) as f64;
                let w: f64 = (0..=k).map(|j| m2.powi(j as i32)).sum();
                w * (p[0] * p[0] + p[1] * p[1])
            })
            .sum();
        (PI * acc).sqrt()
    }
}

/// ψ = φ − Σ_i φⁱ ∂ₓφⁱ.
#[derive(Clone, Debug, PartialEq)]
pub struct BracketDecomposition {
    pub phi: TrigPolynomial,
    pub factors: Vec<TrigPolynomial>,
}

/// ζ₀ = η₀ − Σ ξ₀ⁱ ∂ₓξ₀ⁱ and ζ₁ = η₁ − Σ ∂ₓ(ξ₀ⁱ ξ₁ⁱ).
#[derive(Clone, Debug, PartialEq)]
pub struct PairedDecomposition {
    pub eta: [TrigPolynomial; 2],
    pub pairs: Vec<[TrigPolynomial; 2]>,
}

fn s(j: usize, a: f64) -> TrigPolynomial {
    TrigPolynomial::sin(j, a)
}

fn c(j: usize, a: f64) -> TrigPolynomial {
    TrigPolynomial::cos(j, a)
}

/// Write a·sin(kx) + b·cos(kx) (k ≥ 2) as residual − Σ fⁱ∂ₓfⁱ with residual and
/// factors in modes < k.
fn decompose_top(k: usize, a: f64, b: f64, phi: &mut TrigPolynomial, factors: &mut Vec<TrigPolynomial>) {
    if k % 2 == 0 {
        let m = k / 2;
        let mf = m as f64;
        if a != 0.0 {
            let r = (2.0 * a.abs() / mf).sqrt();
            factors.push(if a > 0.0 { c(m, r) } else { s(m, r) });
        }
        if b != 0.0 {
            let r = (b.abs() / mf).sqrt();
            let f = if b > 0.0 { s(m, r).minus(&c(m, r)) } else { s(m, r).plus(&c(m, r)) };
            factors.push(f);
        }
    } else {
        let m = (k - 1) / 2;
        let mf = m as f64;
        let kf = k as f64;
        if a != 0.0 {
            let w = 2.0 * a.abs() / kf;
            let eps = if a < 0.0 { 1.0 } else { -1.0 };
            let r = w.sqrt();
            factors.push(s(m + 1, r).plus(&s(m, eps * r)));
            factors.push(c(m + 1, r));
            phi.add_scaled(w, &s(2 * m, 0.5 * mf).plus(&s(1, -0.5 * eps)));
        }
        if b != 0.0 {
            let w = 2.0 * b.abs() / kf;
            let eps = if b < 0.0 { 1.0 } else { -1.0 };
            let r = w.sqrt();
            factors.push(s(m + 1, r).plus(&c(m, eps * r)));
            factors.push(c(m + 1, r));
            phi.add_scaled(w, &s(2 * m, -0.5 * mf).plus(&c(1, 0.5 * eps)));
        }
    }
}

pub fn decompose_mode(psi: &TrigPolynomial, n: usize) -> Result<BracketDecomposition> {
    let top = psi.top_mode(0.0);
    if top > n + 2 {
        return Err(Error::NotInSpace { mode: top, n });
    }
    let mut phi = psi.project(n);
    let mut factors = Vec::new();
    if top == n + 2 {
        let [a, b] = psi.coeff(n + 2);
        decompose_top(n + 2, a, b, &mut phi, &mut factors);
    }
    debug_assert!(phi.is_in(n) && factors.iter().all(|f| f.is_in(n)));
    Ok(BracketDecomposition { phi: phi.project(n), factors })
}

pub fn decompose_pair(zeta: &[TrigPolynomial; 2], n: usize) -> Result<PairedDecomposition> {
    let d0 = decompose_mode(&zeta[0], n)?;
    let z1 = &zeta[1];
    let top = z1.top_mode(0.0);
    if top > n + 2 {
        return Err(Error::NotInSpace { mode: top, n });
    }
    let mut eta0 = d0.phi;
    let mut eta1 = z1.project(n);
    let mut pairs: Vec<[TrigPolynomial; 2]> =
        d0.factors.into_iter().map(|f| [f, TrigPolynomial::zero(1)]).collect();
    let high = z1.above(n);
    if !high.is_zero() {
        let plus = decompose_mode(&high, n)?;
        let minus = decompose_mode(&high.scale(-1.0), n)?;
        eta0.add_scaled(1.0, &plus.phi);
        eta0.add_scaled(1.0, &minus.phi);
        eta1.add_scaled(1.0, &plus.phi);
        for f in plus.factors {
            let half = f.scale(0.5);
            pairs.push([f, half]);
        }
        for f in minus.factors {
            pairs.push([f, TrigPolynomial::zero(1)]);
        }
    }
    Ok(PairedDecomposition { eta: [eta0, eta1], pairs })
}

/// Periodic piecewise-constant schedule on [start, start + horizon]: `n` periods,
/// each split into 2m equal sub-intervals carrying ξ¹..ξᵐ, −ξ¹..−ξᵐ.
#[derive(Clone, Debug, PartialEq)]
pub struct OscillatorSchedule {
    pub xi: Vec<[TrigPolynomial; 2]>,
    pub m: usize,
    pub n: usize,
    pub start: f64,
    pub horizon: f64,
}

impl OscillatorSchedule {
    /// ξʲ = √m·φʲ for the pairs of a paired decomposition, completed by their negatives.
    pub fn from_pairs(pairs: &[[TrigPolynomial; 2]], n: usize, start: f64, horizon: f64) -> Self {
        let m = pairs.len();
        let r = (m as f64).sqrt();
        let mut xi: Vec<[TrigPolynomial; 2]> = pairs.iter().map(|p| [p[0].scale(r), p[1].scale(r)]).collect();
        let neg: Vec<[TrigPolynomial; 2]> = xi.iter().map(|p| [p[0].scale(-1.0), p[1].scale(-1.0)]).collect();
        xi.extend(neg);
        OscillatorSchedule { xi, m, n, start, horizon }
    }

    pub fn lambda(&self) -> f64 {
        0.5 / self.m as f64
    }

    pub fn segment_length(&self) -> f64 {
        self.horizon / (2 * self.m * self.n) as f64
    }

    pub fn segments(&self) -> usize {
        2 * self.m * self.n
    }

    pub fn end(&self) -> f64 {
        self.start + self.horizon
    }

    /// Segment edges start + q·h, q = 0..=2mn.
    pub fn edges(&self) -> Vec<f64> {
        let h = self.segment_length();
        (0..=self.segments()).map(|q| self.start + q as f64 * h).collect()
    }

    /// Index into `xi` active at t (left-continuous), None outside the window.
    pub fn index_at(&self, t: f64) -> Option<usize> {
        if self.m == 0 || t < self.start || t >= self.end() {
            return None;
        }
        let q = ((t - self.start) / self.segment_length()).floor() as usize;
        Some(q.min(self.segments() - 1) % (2 * self.m))
    }

    pub fn value_at(&self, t: f64) -> [TrigPolynomial; 2] {
        match self.index_at(t) {
            Some(j) => self.xi[j].clone(),
            None => [TrigPolynomial::zero(1), TrigPolynomial::zero(1)],
        }
    }

    /// K μ at the segment edges (exact: μ is constant on each segment).
    pub fn running_integral(&self) -> TimeCurve<[TrigPolynomial; 2]> {
        let h = self.segment_length();
        let mut acc = [TrigPolynomial::zero(1), TrigPolynomial::zero(1)];
        let mut samples = vec![acc.clone()];
        for q in 0..self.segments() {
            let x = &self.xi[q % (2 * self.m)];
            acc[0].add_scaled(h, &x[0]);
            acc[1].add_scaled(h, &x[1]);
            samples.push(acc.clone());
        }
        let t: Vec<f64> = self.edges().iter().map(|e| e - self.start).collect();
        TimeCurve::new(t, samples).unwrap()
    }
}

/// Piecewise-constant oscillator as a time curve with 2mn segments (schedule must start at 0).
pub fn build_oscillator(s: &OscillatorSchedule) -> ControlCurve {
    let edges = s.edges();
    let mut samples: Vec<[TrigPolynomial; 2]> =
        (0..s.segments()).map(|q| s.xi[q % (2 * s.m)].clone()).collect();
    samples.push(samples.last().unwrap().clone());
    let t: Vec<f64> = edges.iter().map(|e| e - s.start).collect();
    ControlCurve { curve: TimeCurve::new(t, samples).unwrap(), interp: Interp::Hold }
}

/// Grid samples of the schedule entries.
fn sample_xi(s: &OscillatorSchedule, grid: &PeriodicGrid) -> Vec<[PeriodicField; 2]> {
    s.xi.iter().map(|p| [p[0].to_field(grid), p[1].to_field(grid)]).collect()
}

/// Piecewise-constant oscillator as a solver input.
#[derive(Clone, Debug)]
pub struct PiecewiseOscillator {
    schedule: OscillatorSchedule,
    fields: Vec<[PeriodicField; 2]>,
}

impl PiecewiseOscillator {
    pub fn new(schedule: OscillatorSchedule, grid: &PeriodicGrid) -> Self {
        let fields = sample_xi(&schedule, grid);
        PiecewiseOscillator { schedule, fields }
    }

    pub fn schedule(&self) -> &OscillatorSchedule {
        &self.schedule
    }
}

impl Signal for PiecewiseOscillator {
    fn eval(&self, t: f64, grid: &PeriodicGrid) -> [PeriodicField; 2] {
        match self.schedule.index_at(t) {
            Some(j) => self.fields[j].clone(),
            None => [PeriodicField::zeros(grid), PeriodicField::zeros(grid)],
        }
    }
    fn breakpoints(&self) -> Vec<f64> {
        self.schedule.edges()
    }
    fn resolution(&self) -> Option<f64> {
        Some(self.schedule.segment_length())
    }
    fn is_zero(&self) -> bool {
        self.schedule.m == 0
    }
}

/// Mollified oscillator μ^m̃ vanishing near both ends of its window, with its exact time derivative.
#[derive(Clone, Debug)]
pub struct SmoothOscillator {
    schedule: OscillatorSchedule,
    smoothing: usize,
    fields: Vec<[PeriodicField; 2]>,
}

impl SmoothOscillator {
    pub fn new(schedule: OscillatorSchedule, smoothing: usize, grid: &PeriodicGrid) -> Self {
        let fields = sample_xi(&schedule, grid);
        SmoothOscillator { schedule, smoothing: smoothing.max(1), fields }
    }

    pub fn schedule(&self) -> &OscillatorSchedule {
        &self.schedule
    }

    pub fn smoothing(&self) -> usize {
        self.smoothing
    }

    /// Half-width of the switching transitions, also the width of the end ramps.
    pub fn transition(&self) -> f64 {
        self.schedule.segment_length() / (16.0 * self.smoothing as f64)
    }

    fn ramp(&self, t: f64) -> (f64, f64) {
        let w = self.transition();
        let (a, b) = (self.schedule.start, self.schedule.end());
        let l = smooth_step((t - a - w) / w);
        let r = smooth_step((b - w - t) / w);
        let dl = smooth_step_deriv((t - a - w) / w) / w;
        let dr = -smooth_step_deriv((b - w - t) / w) / w;
        (l * r, dl * r + l * dr)
    }

    /// (entry index, weight, weight rate) of the active mollified indicators at t.
    fn weights(&self, t: f64) -> Vec<(usize, f64, f64)> {
        let s = &self.schedule;
        let mut out = Vec::new();
        if s.m == 0 || t <= s.start || t >= s.end() {
            return out;
        }
        let (r, dr) = self.ramp(t);
        if r == 0.0 && dr == 0.0 {
            return out;
        }
        let h = s.segment_length();
        let hw = self.transition();
        let q = ((t - s.start) / h).floor() as i64;
        for qq in (q - 1)..=(q + 1) {
            if qq < 0 || qq >= s.segments() as i64 {
                continue;
            }
            let lo = s.start + qq as f64 * h;
            let hi = lo + h;
            let a = (t - lo) / (2.0 * hw) + 0.5;
            let b = (t - hi) / (2.0 * hw) + 0.5;
            let chi = smooth_step(a) - smooth_step(b);
            let dchi = (smooth_step_deriv(a) - smooth_step_deriv(b)) / (2.0 * hw);
            if chi != 0.0 || dchi != 0.0 {
                out.push(((qq as usize) % (2 * s.m), r * chi, dr * chi + r * dchi));
            }
        }
        out
    }

    pub fn value_into(&self, t: f64, out: &mut [PeriodicField; 2]) {
        for (j, w, _) in self.weights(t) {
            out[0].axpy(w, &self.fields[j][0]);
            out[1].axpy(w, &self.fields[j][1]);
        }
    }

    pub fn rate_into(&self, t: f64, out: &mut [PeriodicField; 2]) {
        for (j, _, dw) in self.weights(t) {
            out[0].axpy(dw, &self.fields[j][0]);
            out[1].axpy(dw, &self.fields[j][1]);
        }
    }

    /// Coefficients of μ^m̃ and ∂ₜμ^m̃ at t.
    pub fn coefficients_at(&self, t: f64) -> ([TrigPolynomial; 2], [TrigPolynomial; 2]) {
        let mut v = [TrigPolynomial::zero(1), TrigPolynomial::zero(1)];
        let mut d = v.clone();
        for (j, w, dw) in self.weights(t) {
            let x = &self.schedule.xi[j];
            v[0].add_scaled(w, &x[0]);
            v[1].add_scaled(w, &x[1]);
            d[0].add_scaled(dw, &x[0]);
            d[1].add_scaled(dw, &x[1]);
        }
        (v, d)
    }

    pub fn breakpoints(&self) -> Vec<f64> {
        let s = &self.schedule;
        if s.m == 0 {
            return Vec::new();
        }
        let hw = self.transition();
        let mut out = vec![s.start, s.start + hw, s.start + 2.0 * hw, s.end() - 2.0 * hw, s.end() - hw, s.end()];
        for e in s.edges().iter().skip(1).take(s.segments() - 1) {
            out.push(e - hw);
            out.push(e + hw);
        }
        out
    }
}

/// Sequence of smooth oscillators on disjoint windows; evaluates μ (value) or ∂ₜμ (rate).
#[derive(Clone, Debug)]
pub struct OscillatorTrain {
    pub parts: Vec<SmoothOscillator>,
    pub rate: bool,
}

impl OscillatorTrain {
    fn active(&self, t: f64) -> Option<&SmoothOscillator> {
        let k = self.parts.partition_point(|p| p.schedule.start <= t);
        if k == 0 {
            return None;
        }
        let p = &self.parts[k - 1];
        (t < p.schedule.end()).then_some(p)
    }

    pub fn as_rate(&self) -> Self {
        OscillatorTrain { parts: self.parts.clone(), rate: true }
    }

    pub fn as_value(&self) -> Self {
        OscillatorTrain { parts: self.parts.clone(), rate: false }
    }

    pub fn coefficients_at(&self, t: f64) -> [TrigPolynomial; 2] {
        match self.active(t) {
            Some(p) => {
                let (v, d) = p.coefficients_at(t);
                if self.rate {
                    d
                } else {
                    v
                }
            }
            None => [TrigPolynomial::zero(1), TrigPolynomial::zero(1)],
        }
    }
}

impl Signal for OscillatorTrain {
    fn coefficients(&self, t: f64) -> Option<[TrigPolynomial; 2]> {
        Some(self.coefficients_at(t))
    }
    fn eval(&self, t: f64, grid: &PeriodicGrid) -> [PeriodicField; 2] {
        let mut out = [PeriodicField::zeros(grid), PeriodicField::zeros(grid)];
        if let Some(p) = self.active(t) {
            if self.rate {
                p.rate_into(t, &mut out);
            } else {
                p.value_into(t, &mut out);
            }
        }
        out
    }
    fn breakpoints(&self) -> Vec<f64> {
        self.parts.iter().flat_map(|p| p.breakpoints()).collect()
    }
    fn resolution(&self) -> Option<f64> {
        self.parts
            .iter()
            .filter(|p| p.schedule.m > 0)
            .map(|p| p.schedule.segment_length())
            .reduce(f64::min)
    }
    fn is_zero(&self) -> bool {
        self.parts.iter().all(|p| p.schedule.m == 0)
    }
}

/// Mean-zero potential F with −∂ₓF = η.
pub fn potential_from_control(eta: &TrigPolynomial) -> TrigPolynomial {
    let coeffs = eta
        .coeffs()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let j = (i + 1) as f64;
            [-p[1] / j, p[0] / j]
        })
        .collect();
    TrigPolynomial::from_coeffs(coeffs)
}

/// Field version of [`potential_from_control`] for general mean-zero η.
pub fn potential_field(eta: &PeriodicField) -> Result<PeriodicField> {
    Ok(-&eta.zero_mean_antiderivative()?)
}

/// Grid residual of the adjoint cancellation
/// Σⱼ λ(u+ξʲ)∂ₓ(u+ξʲ) = u∂ₓu + Σⱼ λξʲ∂ₓξʲ over the first components of a schedule.
pub fn adjoint_cross_residual(u: &PeriodicField, s: &OscillatorSchedule) -> f64 {
    let grid = u.grid();
    let lam = s.lambda();
    let mut lhs = PeriodicField::zeros(grid);
    let mut rhs = u.mul(&u.derivative(1));
    for x in &s.xi {
        let f = x[0].to_field(grid);
        let w = u + &f;
        lhs.axpy(lam, &w.mul(&w.derivative(1)));
        rhs.axpy(lam, &f.mul(&f.derivative(1)));
    }
    (&lhs - &rhs).max_abs()
}

/// Grid residual max|ψ − φ + Σ fⁱ∂ₓfⁱ|.
pub fn bracket_residual(psi: &TrigPolynomial, d: &BracketDecomposition, grid: &PeriodicGrid) -> f64 {
    let mut r = &psi.to_field(grid) - &d.phi.to_field(grid);
    for f in &d.factors {
        let ff = f.to_field(grid);
        r.axpy(1.0, &ff.mul(&ff.derivative(1)));
    }
    r.max_abs()
}

/// Grid residuals of both paired identities.
pub fn paired_residual(zeta: &[TrigPolynomial; 2], d: &PairedDecomposition, grid: &PeriodicGrid) -> [f64; 2] {
    let mut r0 = &zeta[0].to_field(grid) - &d.eta[0].to_field(grid);
    let mut r1 = &zeta[1].to_field(grid) - &d.eta[1].to_field(grid);
    for [a, b] in &d.pairs {
        let fa = a.to_field(grid);
        let fb = b.to_field(grid);
        r0.axpy(1.0, &fa.mul(&fa.derivative(1)));
        r1.axpy(1.0, &fa.mul(&fb).derivative(1));
    }
    [r0.max_abs(), r1.max_abs()]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> PeriodicGrid {
        PeriodicGrid::new(256).unwrap()
    }

    fn close(a: &TrigPolynomial, b: &TrigPolynomial) -> bool {
        a.minus(b).coeffs().iter().all(|p| p[0].abs() < 1e-14 && p[1].abs() < 1e-14)
    }

    #[test]
    fn sin2x_example() {
        let d = decompose_mode(&s(2, 1.0), 0).unwrap();
        assert!(d.phi.is_zero());
        assert_eq!(d.factors.len(), 1);
        assert!(close(&d.factors[0], &c(1, 2f64.sqrt())));
        assert!(bracket_residual(&s(2, 1.0), &d, &grid()) < 1e-13);
    }

    #[test]
    fn cos2x_example() {
        let d = decompose_mode(&c(2, 1.0), 0).unwrap();
        assert!(d.phi.is_zero());
        assert!(close(&d.factors[0], &s(1, 1.0).minus(&c(1, 1.0))));
    }

    #[test]
    fn zero_and_out_of_space() {
        let d = decompose_mode(&TrigPolynomial::zero(3), 0).unwrap();
        assert!(d.phi.is_zero() && d.factors.is_empty());
        assert_eq!(decompose_mode(&s(3, 1.0), 0).unwrap_err(), Error::NotInSpace { mode: 3, n: 0 });
    }

    #[test]
    fn paired_examples() {
        let r2 = 2f64.sqrt();
        let d = decompose_pair(&[s(2, 1.0), TrigPolynomial::zero(1)], 0).unwrap();
        assert!(d.eta[0].is_zero() && d.eta[1].is_zero());
        assert_eq!(d.pairs.len(), 1);
        assert!(close(&d.pairs[0][0], &c(1, r2)) && d.pairs[0][1].is_zero());

        let d = decompose_pair(&[TrigPolynomial::zero(1), s(2, 1.0)], 0).unwrap();
        assert!(d.eta[0].is_zero() && d.eta[1].is_zero());
        assert_eq!(d.pairs.len(), 2);
        assert!(close(&d.pairs[0][0], &c(1, r2)) && close(&d.pairs[0][1], &c(1, r2 / 2.0)));
        assert!(close(&d.pairs[1][0], &s(1, r2)) && d.pairs[1][1].is_zero());

        let d = decompose_pair(&[TrigPolynomial::zero(1), TrigPolynomial::zero(1)], 0).unwrap();
        assert!(d.pairs.is_empty());
    }

    #[test]
    fn basis_identities_up_to_n6() {
        let g = grid();
        for n in 0..=6 {
            for j in 1..=n + 2 {
                for sign in [1.0, -1.0] {
                    for psi in [s(j, sign), c(j, sign)] {
                        let d = decompose_mode(&psi, n).unwrap();
                        assert!(bracket_residual(&psi, &d, &g) < 1e-12, "n={n} psi={psi:?}");
                        assert!(d.phi.is_in(n) && d.factors.iter().all(|f| f.is_in(n)));
                        let z = TrigPolynomial::zero(1);
                        for zeta in [[psi.clone(), z.clone()], [z.clone(), psi.clone()]] {
                            let p = decompose_pair(&zeta, n).unwrap();
                            let [r0, r1] = paired_residual(&zeta, &p, &g);
                            assert!(r0 < 1e-12 && r1 < 1e-12, "n={n} zeta={zeta:?}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn potential_examples() {
        let g = grid();
        let f = potential_from_control(&s(1, 1.0));
        assert!(close(&f, &c(1, 1.0)));
        assert!(potential_from_control(&TrigPolynomial::zero(2)).is_zero());
        let eta = c(2, 1.0);
        let f = potential_from_control(&eta);
        assert!(close(&f, &s(2, -0.5)));
        let ff = f.to_field(&g);
        assert!((&ff.derivative(1).scale(-1.0) - &eta.to_field(&g)).max_abs() < 1e-13);
        assert!(ff.mean().abs() < 1e-15);
    }

    #[test]
    fn oscillator_example() {
        let sch = OscillatorSchedule { xi: vec![[s(1, 1.0), TrigPolynomial::zero(1)], [s(1, -1.0), TrigPolynomial::zero(1)]], m: 1, n: 1, start: 0.0, horizon: 1.0 };
        let cc = build_oscillator(&sch);
        assert_eq!(cc.curve.len() - 1, 2);
        assert_eq!(cc.coefficients_at(0.2)[0].coeff(1), [1.0, 0.0]);
        assert_eq!(cc.coefficients_at(0.7)[0].coeff(1), [-1.0, 0.0]);
        let k = sch.running_integral();
        assert!(k.last()[0].is_zero());
    }

    #[test]
    fn oscillator_integral_decays_like_one_over_n() {
        let xi = [s(1, 1.0), TrigPolynomial::zero(1)];
        let norm = xi[0].l2_norm();
        let mut prev = f64::INFINITY;
        for n in [4usize, 8, 16] {
            let sch = OscillatorSchedule::from_pairs(&[xi.clone()], n, 0.0, 1.0);
            let k = sch.running_integral();
            let mx = k.samples().iter().map(|p| p[0].l2_norm()).fold(0.0, f64::max);
            assert!(mx <= norm / 8.0 * 4.0 / n as f64 + 1e-15);
            if prev.is_finite() {
                assert!((prev / mx - 2.0).abs() < 1e-9);
            }
            prev = mx;
        }
    }

    #[test]
    fn smooth_oscillator_vanishes_at_ends_and_converges() {
        let g = PeriodicGrid::new(16).unwrap();
        let xi = [s(1, 1.0), c(1, 0.5)];
        let sch = OscillatorSchedule::from_pairs(&[xi], 2, 0.0, 1.0);
        let pw = PiecewiseOscillator::new(sch.clone(), &g);
        let mut errs = vec![];
        for mt in [1usize, 4, 16] {
            let so = SmoothOscillator::new(sch.clone(), mt, &g);
            let (v0, _) = so.coefficients_at(0.0);
            let (v1, _) = so.coefficients_at(1.0);
            assert!(v0[0].is_zero() && v1[0].is_zero());
            let train = OscillatorTrain { parts: vec![so], rate: false };
            let k = 20000;
            let mut e2 = 0.0;
            for i in 0..k {
                let t = (i as f64 + 0.5) / k as f64;
                let d = &train.eval(t, &g)[0] - &pw.eval(t, &g)[0];
                e2 += d.l2_norm().powi(2) / k as f64;
            }
            errs.push(e2.sqrt());
        }
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
    }

    #[test]
    fn smooth_rate_matches_finite_difference() {
        let g = PeriodicGrid::new(16).unwrap();
        let sch = OscillatorSchedule::from_pairs(&[[s(1, 1.0), c(1, 0.3)]], 3, 0.0, 1.0);
        let so = SmoothOscillator::new(sch, 2, &g);
        let hw = so.transition();
        let e1 = 1.0 / 6.0;
        for &t in &[e1 - 0.5 * hw, e1, e1 + 0.3 * hw, 1.5 * hw, 1.0 - 1.5 * hw, 0.4] {
            let h = hw * 1e-4;
            let (vp, _) = so.coefficients_at(t + h);
            let (vm, _) = so.coefficients_at(t - h);
            let (_, d) = so.coefficients_at(t);
            let fd = vp[0].minus(&vm[0]).scale(0.5 / h);
            let err = fd.minus(&d[0]).l2_norm();
            assert!(err < 1e-5 * (1.0 + d[0].l2_norm()), "t={t} err={err}");
        }
    }
}
