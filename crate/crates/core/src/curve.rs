//! Time-parametrized samples and continuous-time signals driving the solvers.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

#[allow(unused_imports)] // resolves inherently when std is linked
use num_traits::Float;

use crate::error::{Error, Result};
use crate::spectral::{PeriodicField, PeriodicGrid};
use num_complex::Complex64;
use crate::trig::TrigPolynomial;

/// Values that can be linearly combined (fields, coefficient vectors, pairs of them).
pub trait Linear: Clone {
    fn lin_comb(terms: &[(f64, &Self)]) -> Self;
}

impl Linear for f64 {
    fn lin_comb(terms: &[(f64, &Self)]) -> Self {
        terms.iter().map(|(c, v)| c * **v).sum()
    }
}

impl Linear for PeriodicField {
    fn lin_comb(terms: &[(f64, &Self)]) -> Self {
        let mut out = PeriodicField::zeros(terms[0].1.grid());
        for (c, v) in terms {
            if *c != 0.0 {
                out.axpy(*c, v);
            }
        }
        out
    }
}

impl Linear for TrigPolynomial {
    fn lin_comb(terms: &[(f64, &Self)]) -> Self {
        let modes = terms.iter().map(|(_, p)| p.max_mode()).max().unwrap_or(1);
        let mut out = TrigPolynomial::zero(modes);
        for (c, p) in terms {
            out.add_scaled(*c, p);
        }
        out
    }
}

impl<S: Linear> Linear for [S; 2] {
    fn lin_comb(terms: &[(f64, &Self)]) -> Self {
        let a: Vec<(f64, &S)> = terms.iter().map(|(c, v)| (*c, &v[0])).collect();
        let b: Vec<(f64, &S)> = terms.iter().map(|(c, v)| (*c, &v[1])).collect();
        [S::lin_comb(&a), S::lin_comb(&b)]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Interp {
    /// Value of node j on [t_j, t_{j+1}).
    Hold,
    Linear,
    /// Cubic Hermite with centered-difference slopes.
    Cubic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimeCurve<S> {
    t: Vec<f64>,
    samples: Vec<S>,
}

impl<S> TimeCurve<S> {
    pub fn new(t: Vec<f64>, samples: Vec<S>) -> Result<Self> {
        if t.is_empty() || t.len() != samples.len() {
            return Err(Error::InvalidSpec("curve nodes and samples differ in length".into()));
        }
        if t[0] != 0.0 {
            return Err(Error::InvalidSpec("curve must start at t = 0".into()));
        }
        if t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidSpec("curve nodes must increase strictly".into()));
        }
        Ok(TimeCurve { t, samples })
    }

    pub fn t_nodes(&self) -> &[f64] {
        &self.t
    }

    pub fn samples(&self) -> &[S] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        *self.t.last().unwrap()
    }

    pub fn last(&self) -> &S {
        self.samples.last().unwrap()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, &S)> {
        self.t.iter().copied().zip(self.samples.iter())
    }

    pub fn map<R>(&self, f: impl FnMut(&S) -> R) -> TimeCurve<R> {
        TimeCurve { t: self.t.clone(), samples: self.samples.iter().map(f).collect() }
    }

    /// Index i with t_i ≤ t < t_{i+1} (clamped to the last interval).
    pub fn interval(&self, t: f64) -> usize {
        if self.t.len() < 2 {
            return 0;
        }
        let k = self.t.partition_point(|&s| s <= t);
        k.saturating_sub(1).min(self.t.len() - 2)
    }
}

impl<S: Linear> TimeCurve<S> {
    pub fn sample_at(&self, t: f64, interp: Interp) -> S {
        let n = self.t.len();
        if n == 1 {
            return self.samples[0].clone();
        }
        if interp == Interp::Hold {
            let k = self.t.partition_point(|&s| s <= t).saturating_sub(1).min(n - 1);
            return self.samples[k].clone();
        }
        let i = self.interval(t);
        let (t0, t1) = (self.t[i], self.t[i + 1]);
        let h = t1 - t0;
        let th = ((t - t0) / h).clamp(0.0, 1.0);
        if interp == Interp::Linear || n < 3 {
            return S::lin_comb(&[(1.0 - th, &self.samples[i]), (th, &self.samples[i + 1])]);
        }
        let h00 = 2.0 * th.powi(3) - 3.0 * th * th + 1.0;
        let h10 = th.powi(3) - 2.0 * th * th + th;
        let h01 = -2.0 * th.powi(3) + 3.0 * th * th;
        let h11 = th.powi(3) - th * th;
        let mut terms: Vec<(f64, &S)> = vec![(h00, &self.samples[i]), (h01, &self.samples[i + 1])];
        // slope at node j: derivative of the three-point Lagrange interpolant
        let slope = |j: usize| -> [(f64, usize); 3] {
            let a = if j == 0 { 0 } else if j == n - 1 { n - 3 } else { j - 1 };
            let idx = [a, a + 1, a + 2];
            let x = self.t[j];
            let mut out = [(0.0, 0); 3];
            for (p, &ip) in idx.iter().enumerate() {
                let mut num = 0.0;
                let mut den = 1.0;
                for (q, &iq) in idx.iter().enumerate() {
                    if q == p {
                        continue;
                    }
                    den *= self.t[ip] - self.t[iq];
                    let r = idx[3 - p - q];
                    num += x - self.t[r];
                }
                out[p] = (num / den, ip);
            }
            out
        };
        for (c, j) in slope(i) {
            terms.push((h10 * h * c, &self.samples[j]));
        }
        for (c, j) in slope(i + 1) {
            terms.push((h11 * h * c, &self.samples[j]));
        }
        S::lin_comb(&terms)
    }
}

/// Running trapezoid quadrature Kc(t) = ∫₀ᵗ c.
pub fn time_integral_k<S: Linear>(c: &TimeCurve<S>) -> TimeCurve<S> {
    let mut out = Vec::with_capacity(c.len());
    let zero = S::lin_comb(&[(0.0, &c.samples[0])]);
    out.push(zero);
    for i in 1..c.len() {
        let h = c.t[i] - c.t[i - 1];
        let next = S::lin_comb(&[
            (1.0, &out[i - 1]),
            (0.5 * h, &c.samples[i - 1]),
            (0.5 * h, &c.samples[i]),
        ]);
        out.push(next);
    }
    TimeCurve { t: c.t.clone(), samples: out }
}

/// Uniform nodes 0, T/k, ..., T.
pub fn uniform_nodes(horizon: f64, intervals: usize) -> Vec<f64> {
    (0..=intervals).map(|i| horizon * i as f64 / intervals as f64).collect()
}

/// C^∞ step: 0 for s ≤ 0, 1 for s ≥ 1.
pub fn smooth_step(s: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else if s >= 1.0 {
        1.0
    } else {
        let a = (-1.0 / s).exp();
        let b = (-1.0 / (1.0 - s)).exp();
        a / (a + b)
    }
}

pub fn smooth_step_deriv(s: f64) -> f64 {
    if s <= 0.0 || s >= 1.0 {
        0.0
    } else {
        let a = (-1.0 / s).exp();
        let b = (-1.0 / (1.0 - s)).exp();
        let da = a / (s * s);
        let db = -b / ((1.0 - s) * (1.0 - s));
        (da * (a + b) - a * (da + db)) / ((a + b) * (a + b))
    }
}

/// Continuous-time pair-valued input (ξ, ζ or η) of the limit system.
pub trait Signal: Send + Sync + fmt::Debug {
    fn eval(&self, t: f64, grid: &PeriodicGrid) -> [PeriodicField; 2];

    /// Mode coefficients, for signals that are E-valued at every time.
    fn coefficients(&self, _t: f64) -> Option<[TrigPolynomial; 2]> {
        None
    }

    /// Spectra of the pair at t.
    fn eval_spectrum(&self, t: f64, grid: &PeriodicGrid) -> [Vec<Complex64>; 2] {
        match self.coefficients(t) {
            Some(c) => [c[0].to_spectrum(grid), c[1].to_spectrum(grid)],
            None => self.eval(t, grid).map(|f| f.spectrum()),
        }
    }

    /// Times at which the signal jumps or switches; integrators step exactly onto them.
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }

    /// Finest time scale (segment length) that must be resolved.
    fn resolution(&self) -> Option<f64> {
        None
    }

    /// True if the signal vanishes identically.
    fn is_zero(&self) -> bool {
        false
    }
}

pub type SharedSignal = Arc<dyn Signal>;

#[derive(Clone, Debug, Default)]
pub struct ZeroSignal;

impl Signal for ZeroSignal {
    fn coefficients(&self, _t: f64) -> Option<[TrigPolynomial; 2]> {
        Some([TrigPolynomial::zero(1), TrigPolynomial::zero(1)])
    }
    fn eval(&self, _t: f64, grid: &PeriodicGrid) -> [PeriodicField; 2] {
        [PeriodicField::zeros(grid), PeriodicField::zeros(grid)]
    }
    fn is_zero(&self) -> bool {
        true
    }
}

pub fn zero_signal() -> SharedSignal {
    Arc::new(ZeroSignal)
}

#[derive(Clone, Debug)]
pub struct ConstantSignal(pub [PeriodicField; 2]);

impl Signal for ConstantSignal {
    fn eval(&self, _t: f64, grid: &PeriodicGrid) -> [PeriodicField; 2] {
        debug_assert_eq!(self.0[0].grid(), grid);
        self.0.clone()
    }
}

/// Grid samples at time nodes.
#[derive(Clone, Debug)]
pub struct SampledSignal {
    pub curve: TimeCurve<[PeriodicField; 2]>,
    pub interp: Interp,
}

impl Signal for SampledSignal {
    fn eval(&self, t: f64, _grid: &PeriodicGrid) -> [PeriodicField; 2] {
        self.curve.sample_at(t, self.interp)
    }
    fn breakpoints(&self) -> Vec<f64> {
        self.curve.t_nodes().to_vec()
    }
}

/// Time curve of E-valued coefficient pairs.
#[derive(Clone, Debug)]
pub struct ControlCurve {
    pub curve: TimeCurve<[TrigPolynomial; 2]>,
    pub interp: Interp,
}

impl ControlCurve {
    pub fn constant(horizon: f64, value: [TrigPolynomial; 2]) -> Self {
        let curve = TimeCurve::new(vec![0.0, horizon], vec![value.clone(), value]).unwrap();
        ControlCurve { curve, interp: Interp::Linear }
    }

    pub fn coefficients_at(&self, t: f64) -> [TrigPolynomial; 2] {
        self.curve.sample_at(t, self.interp)
    }

    /// Largest mode carrying a coefficient above `tol` at any node.
    pub fn top_mode(&self, tol: f64) -> usize {
        self.curve
            .samples()
            .iter()
            .flat_map(|p| [p[0].top_mode(tol), p[1].top_mode(tol)])
            .max()
            .unwrap_or(0)
    }
}

impl Signal for ControlCurve {
    fn coefficients(&self, t: f64) -> Option<[TrigPolynomial; 2]> {
        Some(self.coefficients_at(t))
    }
    fn eval(&self, t: f64, grid: &PeriodicGrid) -> [PeriodicField; 2] {
        let c = self.coefficients_at(t);
        [c[0].to_field(grid), c[1].to_field(grid)]
    }
    fn breakpoints(&self) -> Vec<f64> {
        self.curve.t_nodes().to_vec()
    }
}

#[derive(Clone, Debug)]
pub struct SumSignal(pub Vec<SharedSignal>);

impl Signal for SumSignal {
    fn coefficients(&self, t: f64) -> Option<[TrigPolynomial; 2]> {
        let mut out = [TrigPolynomial::zero(1), TrigPolynomial::zero(1)];
        for s in &self.0 {
            let c = s.coefficients(t)?;
            out[0].add_scaled(1.0, &c[0]);
            out[1].add_scaled(1.0, &c[1]);
        }
        Some(out)
    }
    fn eval(&self, t: f64, grid: &PeriodicGrid) -> [PeriodicField; 2] {
        let mut out = [PeriodicField::zeros(grid), PeriodicField::zeros(grid)];
        for s in &self.0 {
            if s.is_zero() {
                continue;
            }
            let v = s.eval(t, grid);
            out[0] += &v[0];
            out[1] += &v[1];
        }
        out
    }
    fn breakpoints(&self) -> Vec<f64> {
        self.0.iter().flat_map(|s| s.breakpoints()).collect()
    }
    fn resolution(&self) -> Option<f64> {
        self.0.iter().filter_map(|s| s.resolution()).reduce(f64::min)
    }
    fn is_zero(&self) -> bool {
        self.0.iter().all(|s| s.is_zero())
    }
}

/// Signal scaled by a constant factor.
#[derive(Clone, Debug)]
pub struct ScaledSignal(pub f64, pub SharedSignal);

impl Signal for ScaledSignal {
    fn coefficients(&self, t: f64) -> Option<[TrigPolynomial; 2]> {
        self.1.coefficients(t).map(|c| [c[0].scale(self.0), c[1].scale(self.0)])
    }
    fn eval(&self, t: f64, grid: &PeriodicGrid) -> [PeriodicField; 2] {
        let v = self.1.eval(t, grid);
        [v[0].scale(self.0), v[1].scale(self.0)]
    }
    fn breakpoints(&self) -> Vec<f64> {
        self.1.breakpoints()
    }
    fn resolution(&self) -> Option<f64> {
        self.1.resolution()
    }
    fn is_zero(&self) -> bool {
        self.0 == 0.0 || self.1.is_zero()
    }
}
