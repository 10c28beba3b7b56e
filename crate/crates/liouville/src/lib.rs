//! Prescribed Gaussian and geodesic curvature on planar surfaces with conical
//! singularities and corners: P1 finite elements, the mean-field energy, H¹
//! gradient descent, and blow-up diagnostics.

pub mod geometry;
pub mod elliptic;
pub mod singular;
pub mod functional;
pub mod solver;
pub mod asymptotics;
pub mod diagnostics;
pub mod limit;
pub mod cli;

/// Least-squares slope of y against x.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}
