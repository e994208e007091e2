//! Shared fixtures for the benchmarks.

use num_complex::Complex64;

use normform::{FrequencyGrid, GridFunction};

/// Gaussian datum with a linear phase, well inside the dealiased band.
pub fn gaussian(xi_max: f64, n: usize, amplitude: f64) -> GridFunction {
    let grid = FrequencyGrid::new(xi_max, n).expect("valid grid");
    let width = xi_max / 12.0;
    GridFunction::from_fn(grid, |xi| {
        Complex64::from_polar(amplitude * (-(xi * xi) / (2.0 * width * width)).exp(), 0.3 * xi)
    })
    .expect("finite")
}
