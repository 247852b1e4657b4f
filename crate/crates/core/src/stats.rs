//! Small fitting helpers for convergence studies.

#[allow(unused_imports)] // resolves inherently when std is linked
use num_traits::Float;

/// Least-squares slope of log(y) against log(x).
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let pts: alloc::vec::Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

pub fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

/// Observed order from three solutions at steps h, h/2, h/4 (Richardson).
pub fn richardson_order(e_h_h2: f64, e_h2_h4: f64) -> f64 {
    (e_h_h2 / e_h2_h4).log2()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let x = [4.0, 8.0, 16.0, 32.0];
        let y: alloc::vec::Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-1.0)).collect();
        assert!((loglog_slope(&x, &y) + 1.0).abs() < 1e-12);
        assert!(strictly_decreasing(&y));
        assert!((richardson_order(4.0, 1.0) - 2.0).abs() < 1e-15);
    }
}
