//! Iterative radix-2 FFT for power-of-two lengths.

use alloc::vec::Vec;
use core::f64::consts::PI;
use num_complex::Complex64;
#[allow(unused_imports)] // resolves inherently when std is linked
use num_traits::Float;

#[derive(Debug)]
pub(crate) struct Fft {
    n: usize,
    // per-stage tables: for butterfly length 2h, e^{-2πik/2h} for k < h, stored from offset h - 1
    fwd: Vec<Complex64>,
    inv: Vec<Complex64>,
    rev: Vec<u32>,
}

impl Fft {
    pub(crate) fn new(n: usize) -> Self {
        assert!(n.is_power_of_two() && n >= 2, "fft length must be a power of two");
        let bits = n.trailing_zeros();
        let rev = (0..n as u32)
            .map(|i| i.reverse_bits() >> (32 - bits))
            .collect();
        let mut fwd = Vec::with_capacity(n);
        let mut half = 1;
        while half < n {
            for k in 0..half {
                let a = -PI * k as f64 / half as f64;
                fwd.push(Complex64::new(a.cos(), a.sin()));
            }
            half <<= 1;
        }
        let inv = fwd.iter().map(|w| w.conj()).collect();
        Fft { n, fwd, inv, rev }
    }

    /// Unnormalized forward transform X_k = Σ x_j e^{-2πijk/n}, in place.
    pub(crate) fn forward(&self, buf: &mut [Complex64]) {
        self.run(buf, &self.fwd);
    }

    /// Unnormalized inverse transform x_j = Σ X_k e^{2πijk/n}, in place.
    pub(crate) fn inverse_unscaled(&self, buf: &mut [Complex64]) {
        self.run(buf, &self.inv);
    }

    /// Inverse transform including the 1/n factor, in place.
    #[cfg(test)]
    pub(crate) fn inverse(&self, buf: &mut [Complex64]) {
        self.run(buf, &self.inv);
        let s = 1.0 / self.n as f64;
        for z in buf.iter_mut() {
            *z *= s;
        }
    }

    fn run(&self, buf: &mut [Complex64], table: &[Complex64]) {
        let n = self.n;
        assert_eq!(buf.len(), n);
        for i in 0..n {
            let j = self.rev[i] as usize;
            if i < j {
                buf.swap(i, j);
            }
        }
        for pair in buf.chunks_exact_mut(2) {
            let (a, b) = (pair[0], pair[1]);
            pair[0] = a + b;
            pair[1] = a - b;
        }
        let mut half = 2;
        while half < n {
            let w = &table[half - 1..2 * half - 1];
            for block in buf.chunks_exact_mut(2 * half) {
                let (lo, hi) = block.split_at_mut(half);
                for ((a, b), tw) in lo.iter_mut().zip(hi.iter_mut()).zip(w) {
                    let t = *b * tw;
                    *b = *a - t;
                    *a += t;
                }
            }
            half <<= 1;
        }
    }
}
