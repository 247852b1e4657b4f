//! Periodic grids on [0, 2π) and real/complex sampled fields with spectral access.
//!
//! Fourier coefficients are normalized so that f(x) = Σ_k f̂_k e^{ikx}.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;
use core::ops::{Add, AddAssign, Mul, Neg, Sub};

use num_complex::Complex64;
#[allow(unused_imports)] // resolves inherently when std is linked
use num_traits::Float;

use crate::error::{Error, Result};
use crate::fft::Fft;

const TWO_PI: f64 = 2.0 * PI;

#[derive(Clone)]
pub struct PeriodicGrid {
    n: usize,
    fft: Arc<Fft>,
}

impl fmt::Debug for PeriodicGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PeriodicGrid({})", self.n)
    }
}

impl PartialEq for PeriodicGrid {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n
    }
}

impl PeriodicGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::BadGrid(n));
        }
        Ok(PeriodicGrid { n, fft: Arc::new(Fft::new(n)) })
    }

    pub fn n_points(&self) -> usize {
        self.n
    }

    pub fn dx(&self) -> f64 {
        TWO_PI / self.n as f64
    }

    pub fn x(&self, j: usize) -> f64 {
        TWO_PI * j as f64 / self.n as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.x(j)).collect()
    }

    /// Signed wavenumber of spectral slot `i`; the Nyquist slot reports +n/2.
    pub fn wavenumber(&self, i: usize) -> i64 {
        if i <= self.n / 2 {
            i as i64
        } else {
            i as i64 - self.n as i64
        }
    }

    /// Largest wavenumber kept by the 2/3 rule.
    pub fn dealias_cutoff(&self) -> usize {
        self.n / 3
    }

    pub fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward_in_place(&mut buf);
        buf
    }

    pub fn forward_complex(&self, values: &[Complex64]) -> Vec<Complex64> {
        let mut buf = values.to_vec();
        self.forward_in_place(&mut buf);
        buf
    }

    pub fn forward_in_place(&self, buf: &mut [Complex64]) {
        self.fft.forward(buf);
        let s = 1.0 / self.n as f64;
        for z in buf.iter_mut() {
            *z *= s;
        }
    }

    pub fn inverse_in_place(&self, buf: &mut [Complex64]) {
        self.fft.inverse_unscaled(buf);
    }

    pub fn inverse_real(&self, spec: &[Complex64]) -> Vec<f64> {
        let mut buf = spec.to_vec();
        self.inverse_in_place(&mut buf);
        buf.into_iter().map(|z| z.re).collect()
    }

    pub fn inverse_complex(&self, spec: &[Complex64]) -> Vec<Complex64> {
        let mut buf = spec.to_vec();
        self.inverse_in_place(&mut buf);
        buf
    }

    /// Multiply a spectrum by (ik)^order in place. The Nyquist slot is zeroed.
    pub fn differentiate_spectrum(&self, spec: &mut [Complex64], order: u32) {
        let half = self.n / 2;
        for (i, z) in spec.iter_mut().enumerate() {
            if i == half {
                *z = Complex64::new(0.0, 0.0);
                continue;
            }
            let k = self.wavenumber(i) as f64;
            *z *= Complex64::new(0.0, k).powu(order);
        }
    }

    /// Zero all slots with |k| > kmax.
    pub fn truncate_spectrum(&self, spec: &mut [Complex64], kmax: usize) {
        for (i, z) in spec.iter_mut().enumerate() {
            if self.wavenumber(i).unsigned_abs() as usize > kmax {
                *z = Complex64::new(0.0, 0.0);
            }
        }
    }

    pub fn dealias_spectrum(&self, spec: &mut [Complex64]) {
        self.truncate_spectrum(spec, self.dealias_cutoff());
    }

    /// Squared Sobolev norm Σ_m (Σ_{j≤k} m^{2j}) |f̂_m|² scaled by 2π.
    pub fn sobolev_sq(&self, spec: &[Complex64], k: u32) -> f64 {
        let mut acc = 0.0;
        for (i, z) in spec.iter().enumerate() {
            let m2 = (self.wavenumber(i) as f64).powi(2);
            let mut w = 0.0;
            let mut p = 1.0;
            for _ in 0..=k {
                w += p;
                p *= m2;
            }
            acc += w * z.norm_sqr();
        }
        TWO_PI * acc
    }
}

/// Tolerance on the mean of a right-hand side before it is integrated.
pub fn tol_mean(l2: f64) -> f64 {
    (1e-10 * l2).max(1e-14)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PeriodicField {
    grid: PeriodicGrid,
    values: Vec<f64>,
}

impl PeriodicField {
    pub fn new(grid: &PeriodicGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_points() {
            return Err(Error::GridMismatch);
        }
        Ok(PeriodicField { grid: grid.clone(), values })
    }

    pub fn from_fn(grid: &PeriodicGrid, f: impl Fn(f64) -> f64) -> Self {
        let values = (0..grid.n_points()).map(|j| f(grid.x(j))).collect();
        PeriodicField { grid: grid.clone(), values }
    }

    pub fn constant(grid: &PeriodicGrid, c: f64) -> Self {
        PeriodicField { grid: grid.clone(), values: vec![c; grid.n_points()] }
    }

    pub fn zeros(grid: &PeriodicGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn from_spectrum(grid: &PeriodicGrid, spec: &[Complex64]) -> Self {
        PeriodicField { grid: grid.clone(), values: grid.inverse_real(spec) }
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn spectrum(&self) -> Vec<Complex64> {
        self.grid.forward(&self.values)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn integral(&self) -> f64 {
        TWO_PI * self.mean()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn l2_norm(&self) -> f64 {
        (self.values.iter().map(|v| v * v).sum::<f64>() * self.grid.dx()).sqrt()
    }

    pub fn sobolev_norm(&self, k: u32) -> f64 {
        self.grid.sobolev_sq(&self.spectrum(), k).sqrt()
    }

    pub fn derivative(&self, order: u32) -> Self {
        let mut s = self.spectrum();
        self.grid.differentiate_spectrum(&mut s, order);
        Self::from_spectrum(&self.grid, &s)
    }

    pub fn zero_mean_antiderivative(&self) -> Result<Self> {
        let mut s = self.spectrum();
        let tol = tol_mean(self.l2_norm());
        if s[0].re.abs() > tol {
            return Err(Error::MeanNotZero { mean: s[0].re, tol });
        }
        let half = self.grid.n_points() / 2;
        for (i, z) in s.iter_mut().enumerate() {
            if i == 0 || i == half {
                *z = Complex64::new(0.0, 0.0);
            } else {
                *z /= Complex64::new(0.0, self.grid.wavenumber(i) as f64);
            }
        }
        Ok(Self::from_spectrum(&self.grid, &s))
    }

    /// L² projection onto span{sin jx, cos jx : 1 ≤ j ≤ n+1}.
    pub fn project_e(&self, n: usize) -> Self {
        let mut s = self.spectrum();
        s[0] = Complex64::new(0.0, 0.0);
        self.grid.truncate_spectrum(&mut s, n + 1);
        let half = self.grid.n_points() / 2;
        if n + 1 >= half {
            s[half] = Complex64::new(0.0, 0.0);
        }
        Self::from_spectrum(&self.grid, &s)
    }

    pub fn truncate(&self, kmax: usize) -> Self {
        let mut s = self.spectrum();
        self.grid.truncate_spectrum(&mut s, kmax);
        Self::from_spectrum(&self.grid, &s)
    }

    /// Remove modes beyond the 2/3-rule cutoff.
    pub fn dealias(&self) -> Self {
        self.truncate(self.grid.dealias_cutoff())
    }

    pub fn mul(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a * b)
    }

    /// Product with both factors and the result restricted by the 2/3 rule.
    pub fn dealiased_product(&self, other: &Self) -> Self {
        PeriodicField::mul(&self.dealias(), &other.dealias()).dealias()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        PeriodicField { grid: self.grid.clone(), values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.grid, other.grid, "grid mismatch");
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        PeriodicField { grid: self.grid.clone(), values }
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    /// self += c * other
    pub fn axpy(&mut self, c: f64, other: &Self) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
    }

    /// Band-limited interpolant evaluated at an arbitrary point.
    pub fn eval_at(&self, x: f64) -> f64 {
        eval_spectrum(&self.grid, &self.spectrum(), x).re
    }
}

/// Evaluate Σ_k ĉ_k e^{ikx} at one point (Nyquist slot taken as a cosine).
pub fn eval_spectrum(grid: &PeriodicGrid, spec: &[Complex64], x: f64) -> Complex64 {
    let n = grid.n_points();
    let half = n / 2;
    let mut acc = spec[0];
    for i in 1..half {
        let k = i as f64;
        let e = Complex64::new((k * x).cos(), (k * x).sin());
        acc += spec[i] * e + spec[n - i] * e.conj();
    }
    acc + spec[half] * (half as f64 * x).cos()
}

impl Add for &PeriodicField {
    type Output = PeriodicField;
    fn add(self, rhs: Self) -> PeriodicField {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl Sub for &PeriodicField {
    type Output = PeriodicField;
    fn sub(self, rhs: Self) -> PeriodicField {
        self.zip_map(rhs, |a, b| a - b)
    }
}

impl Neg for &PeriodicField {
    type Output = PeriodicField;
    fn neg(self) -> PeriodicField {
        self.map(|v| -v)
    }
}

impl Mul<f64> for &PeriodicField {
    type Output = PeriodicField;
    fn mul(self, c: f64) -> PeriodicField {
        self.scale(c)
    }
}

impl Mul<f64> for PeriodicField {
    type Output = PeriodicField;
    fn mul(mut self, c: f64) -> PeriodicField {
        for v in self.values_mut() {
            *v *= c;
        }
        self
    }
}

impl Add for PeriodicField {
    type Output = PeriodicField;
    fn add(self, rhs: Self) -> PeriodicField {
        &self + &rhs
    }
}

impl Sub for PeriodicField {
    type Output = PeriodicField;
    fn sub(self, rhs: Self) -> PeriodicField {
        &self - &rhs
    }
}

impl AddAssign<&PeriodicField> for PeriodicField {
    fn add_assign(&mut self, rhs: &PeriodicField) {
        self.axpy(1.0, rhs);
    }
}

pub fn derivative(f: &PeriodicField, order: u32) -> PeriodicField {
    f.derivative(order)
}

pub fn sobolev_norm(f: &PeriodicField, k: u32) -> f64 {
    f.sobolev_norm(k)
}

pub fn zero_mean_antiderivative(f: &PeriodicField) -> Result<PeriodicField> {
    f.zero_mean_antiderivative()
}

pub fn project_e(f: &PeriodicField, n: usize) -> PeriodicField {
    f.project_e(n)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexField {
    grid: PeriodicGrid,
    values: Vec<Complex64>,
}

impl ComplexField {
    pub fn new(grid: &PeriodicGrid, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.n_points() {
            return Err(Error::GridMismatch);
        }
        Ok(ComplexField { grid: grid.clone(), values })
    }

    pub fn from_fn(grid: &PeriodicGrid, f: impl Fn(f64) -> Complex64) -> Self {
        let values = (0..grid.n_points()).map(|j| f(grid.x(j))).collect();
        ComplexField { grid: grid.clone(), values }
    }

    pub fn from_parts(re: &PeriodicField, im: &PeriodicField) -> Self {
        assert_eq!(re.grid(), im.grid(), "grid mismatch");
        let values = re
            .values()
            .iter()
            .zip(im.values())
            .map(|(&a, &b)| Complex64::new(a, b))
            .collect();
        ComplexField { grid: re.grid().clone(), values }
    }

    pub fn from_spectrum(grid: &PeriodicGrid, spec: &[Complex64]) -> Self {
        ComplexField { grid: grid.clone(), values: grid.inverse_complex(spec) }
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn spectrum(&self) -> Vec<Complex64> {
        self.grid.forward_complex(&self.values)
    }

    pub fn re(&self) -> PeriodicField {
        PeriodicField { grid: self.grid.clone(), values: self.values.iter().map(|z| z.re).collect() }
    }

    pub fn im(&self) -> PeriodicField {
        PeriodicField { grid: self.grid.clone(), values: self.values.iter().map(|z| z.im).collect() }
    }

    pub fn abs_sq(&self) -> PeriodicField {
        PeriodicField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|z| z.norm_sqr()).collect(),
        }
    }

    pub fn conj(&self) -> Self {
        self.map(|z| z.conj())
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        ComplexField { grid: self.grid.clone(), values: self.values.iter().map(|&z| f(z)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(Complex64, Complex64) -> Complex64) -> Self {
        assert_eq!(self.grid, other.grid, "grid mismatch");
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        ComplexField { grid: self.grid.clone(), values }
    }

    pub fn derivative(&self, order: u32) -> Self {
        let mut s = self.spectrum();
        self.grid.differentiate_spectrum(&mut s, order);
        Self::from_spectrum(&self.grid, &s)
    }

    pub fn l2_norm(&self) -> f64 {
        (self.values.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.grid.dx()).sqrt()
    }

    pub fn sobolev_norm(&self, k: u32) -> f64 {
        self.grid.sobolev_sq(&self.spectrum(), k).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.grid.dx()
    }
}

impl Sub for &ComplexField {
    type Output = ComplexField;
    fn sub(self, rhs: Self) -> ComplexField {
        self.zip_map(rhs, |a, b| a - b)
    }
}

impl Add for &ComplexField {
    type Output = ComplexField;
    fn add(self, rhs: Self) -> ComplexField {
        self.zip_map(rhs, |a, b| a + b)
    }
}
